//! `manifest.json` dataset descriptions.
//!
//! ```json
//! {
//!   "name": "moving-square",
//!   "kind": "video",
//!   "cases": [
//!     {
//!       "case_id": "case_000",
//!       "frames": ["case_000/frame_000.pgm", "case_000/frame_001.pgm"],
//!       "gt": ["case_000/gt_000.pgm", "case_000/gt_001.pgm"],
//!       "classes": {"square": 1}
//!     }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Frames are PGM or PPM;
//! ground truth is PGM with gray level = class id (0 = background).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::Pnm;
use crate::error::{Error, Result};
use crate::types::{Case, CaseKind};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: CaseKind,
    pub cases: Vec<CaseEntry>,
    /// Generator parameters for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub frames: Vec<String>,
    pub gt: Vec<String>,
    pub classes: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: CaseKind,
    pub cases: Vec<Case>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for case in &self.cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::Schema(format!("duplicate case_id {}", case.case_id)));
            }
            if case.frames.is_empty() {
                return Err(Error::Schema(format!("case {} lists no frames", case.case_id)));
            }
            if case.frames.len() != case.gt.len() {
                return Err(Error::Schema(format!(
                    "case {}: {} frame files but {} gt files",
                    case.case_id,
                    case.frames.len(),
                    case.gt.len()
                )));
            }
            if self.kind == CaseKind::Image2d && case.frames.len() != 1 {
                return Err(Error::Schema(format!(
                    "case {}: image2d cases have exactly one frame",
                    case.case_id
                )));
            }
            if case.classes.values().any(|&id| id == 0 || id > 255) {
                return Err(Error::Schema(format!(
                    "case {}: class ids must be in 1..=255",
                    case.case_id
                )));
            }
        }
        Ok(())
    }
}

fn load_case(dir: &Path, kind: CaseKind, entry: &CaseEntry) -> Result<Case> {
    let num_classes = entry.classes.values().copied().max().unwrap_or(0);
    let resolve = |rel: &str| -> PathBuf { dir.join(rel) };
    let mut frames = Vec::with_capacity(entry.frames.len());
    let mut gt = Vec::with_capacity(entry.gt.len());
    for (frame_rel, gt_rel) in entry.frames.iter().zip(&entry.gt) {
        let frame_path = resolve(frame_rel);
        frames.push(Pnm::read(&frame_path)?.to_frame(&frame_path)?);
        let gt_path = resolve(gt_rel);
        let labels = Pnm::read(&gt_path)?.to_label_map(&gt_path, num_classes)?;
        let f = frames.last().expect("just pushed");
        if labels.height() != f.height() || labels.width() != f.width() {
            return Err(Error::format(
                &gt_path,
                format!(
                    "dimension mismatch: gt is {}x{}, frame is {}x{}",
                    labels.height(),
                    labels.width(),
                    f.height(),
                    f.width()
                ),
            ));
        }
        if let Some(first) = frames.first() {
            if first.height() != f.height() || first.width() != f.width() {
                return Err(Error::format(&frame_path, "dimension mismatch with first frame"));
            }
        }
        gt.push(labels);
    }
    let mut class_ids: Vec<u32> = entry.classes.values().copied().collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let mut case = Case::new(entry.case_id.clone(), kind, frames, gt, class_ids)?;
    case.class_names = entry.classes.clone();
    Ok(case)
}

/// Reads and validates every case listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    use rayon::prelude::*;
    let manifest = DatasetManifest::read(dir)?;
    let cases = manifest
        .cases
        .par_iter()
        .map(|entry| load_case(dir, manifest.kind, entry))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: manifest.name,
        kind: manifest.kind,
        cases,
    })
}

/// Writes `cases` as a dataset directory (frames and label maps as PGM/PPM).
pub fn write_dataset(dir: &Path, name: &str, kind: CaseKind, cases: &[Case], synthetic: Option<serde_json::Value>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let case_dir = dir.join(&case.case_id);
        std::fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
        let mut entry = CaseEntry {
            case_id: case.case_id.clone(),
            frames: Vec::new(),
            gt: Vec::new(),
            classes: case.class_names.clone(),
        };
        if entry.classes.is_empty() {
            entry.classes = case.class_ids.iter().map(|&id| (format!("class_{id}"), id)).collect();
        }
        for (i, (frame, labels)) in case.frames.iter().zip(&case.gt).enumerate() {
            let ext = if frame.channels() == 3 { "ppm" } else { "pgm" };
            let frame_rel = format!("{}/frame_{i:03}.{ext}", case.case_id);
            let gt_rel = format!("{}/gt_{i:03}.pgm", case.case_id);
            Pnm::from_frame(frame).write(&dir.join(&frame_rel))?;
            Pnm::from_label_map(labels)?.write(&dir.join(&gt_rel))?;
            entry.frames.push(frame_rel);
            entry.gt.push(gt_rel);
        }
        entries.push(entry);
    }
    DatasetManifest {
        name: name.to_string(),
        kind,
        cases: entries,
        synthetic,
    }
    .write(dir)
}
