//! Result rows as JSON Lines.
//!
//! One [`ResultRow`] per line, UTF-8, keys in the order the fields are
//! declared below. Keys this version does not know are kept in
//! [`ResultRow::extra`] and written back after the known ones.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineKind {
    #[serde(rename = "2d")]
    Image2d,
    #[serde(rename = "3d")]
    Volume3d,
    #[serde(rename = "video")]
    Video,
}

impl PipelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Image2d => "2d",
            PipelineKind::Volume3d => "3d",
            PipelineKind::Video => "video",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Skipped,
    Failed,
}

/// What the simulated user did for one object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptAudit {
    pub kind: String,
    pub clicks: usize,
    pub boxes: usize,
    pub masks: usize,
    /// Frames that received prompts.
    pub frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case_id: String,
    pub class_id: u32,
    pub pipeline: PipelineKind,
    pub segmenter: String,
    pub status: RowStatus,
    pub reason: Option<String>,
    /// Metric name to value; overlap metrics in `[0, 1]`, `jf` in percent.
    pub metrics: BTreeMap<String, f64>,
    pub prompts: PromptAudit,
    pub seed: u64,
    pub rng: String,
    pub wall_time_ms: f64,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ResultRow {
    /// Copy with timing zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_row() -> ResultRow {
        ResultRow {
            case_id: "case_000".into(),
            class_id: 1,
            pipeline: PipelineKind::Video,
            segmenter: "oracle".into(),
            status: RowStatus::Ok,
            reason: None,
            metrics: BTreeMap::from([("jf".into(), 100.0), ("j".into(), 1.0), ("f".into(), 0.1 + 0.2)]),
            prompts: PromptAudit {
                kind: "point".into(),
                clicks: 3,
                boxes: 0,
                masks: 0,
                frames: vec![0],
            },
            seed: 7,
            rng: "chacha8".into(),
            wall_time_ms: 1.25,
            extra: Default::default(),
        }
    }

    #[test]
    fn roundtrip_and_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let rows = vec![sample_row(), sample_row()];
        write_results(&rows, &path).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"case_id\":\"case_000\",\"class_id\":1,\"pipeline\":\"video\""));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn empty_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_results(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(read_results(&path).unwrap().is_empty());
    }

    #[test]
    fn unknown_keys_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut v = serde_json::to_value(sample_row()).unwrap();
        v["future_field"] = serde_json::json!({"x": [1, 2]});
        std::fs::write(&path, format!("{v}\n")).unwrap();
        let rows = read_results(&path).unwrap();
        assert_eq!(rows[0].extra["future_field"], serde_json::json!({"x": [1, 2]}));
        let out = dir.path().join("o.jsonl");
        write_results(&rows, &out).unwrap();
        assert!(std::fs::read_to_string(&out).unwrap().contains("\"future_field\":{\"x\":[1,2]}"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let good = serde_json::to_string(&sample_row()).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match read_results(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
