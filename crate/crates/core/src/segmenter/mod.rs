//! The streaming segmenter contract driven by every pipeline.
//!
//! A session is bound to one case. Callers prompt an object (one slot per
//! class) with [`Segmenter::add_prompts`], then request unprompted frames with
//! [`Segmenter::segment_frame`] in monotone order per propagation direction.

pub mod builtin;
pub mod external;
pub mod protocol;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Case, Mask2D, PromptSet};

pub use builtin::{ConstantSegmenter, OracleSegmenter, RegionGrowSegmenter};
pub use external::{ExternalOptions, ExternalSegmenter};

pub trait Segmenter {
    fn name(&self) -> &str;

    /// Predicted mask for the prompted frame given every prompt so far on it.
    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> Result<Mask2D>;

    /// Mask for an unprompted frame, conditioned on the session history.
    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> Result<Mask2D>;

    /// Forgets propagation-derived state for the object, keeping what the prompts produced.
    fn reset_to_prompt_state(&mut self, class_id: u32) -> Result<()>;

    /// Releases resources. Calling it twice is a no-op.
    fn end(&mut self) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    Oracle,
    Constant,
    RegionGrow,
    /// A builtin provided by another crate through a [`SegmenterFactory`].
    Builtin(String),
    External { command: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    pub kind: SegmenterKind,
    pub options: BTreeMap<String, String>,
}

impl SegmenterSpec {
    pub fn new(kind: SegmenterKind) -> Self {
        Self {
            kind,
            options: BTreeMap::new(),
        }
    }

    pub fn with_option(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.options.insert(key.into(), value.into());
        self
    }

    /// Parses `builtin:NAME` or `exec:COMMAND`.
    pub fn parse(s: &str) -> Result<Self> {
        let kind = if let Some(name) = s.strip_prefix("builtin:") {
            match name {
                "oracle" => SegmenterKind::Oracle,
                "constant" => SegmenterKind::Constant,
                "regiongrow" => SegmenterKind::RegionGrow,
                "" => return Err(Error::InvalidArgument("empty builtin name".into())),
                other => SegmenterKind::Builtin(other.to_string()),
            }
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            SegmenterKind::External {
                command: cmd.to_string(),
            }
        } else {
            return Err(Error::InvalidArgument(format!(
                "segmenter must be builtin:NAME or exec:COMMAND, got {s:?}"
            )));
        };
        let spec = Self::new(kind);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let SegmenterKind::External { command } = &self.kind {
            if command.trim().is_empty() {
                return Err(Error::InvalidArgument("external segmenter needs a command".into()));
            }
        }
        Ok(())
    }

    pub fn option<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.options
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for segmenter option {key}")))
            })
            .transpose()
    }

    /// Human-readable label used to group result rows.
    pub fn label(&self) -> String {
        match &self.kind {
            SegmenterKind::Oracle => "oracle".into(),
            SegmenterKind::Constant => "constant".into(),
            SegmenterKind::RegionGrow => "regiongrow".into(),
            SegmenterKind::Builtin(name) => name.clone(),
            SegmenterKind::External { command } => format!("exec:{command}"),
        }
    }
}

/// Opens sessions for a [`SegmenterSpec`].
pub trait SegmenterFactory: Sync {
    fn begin<'a>(&self, spec: &SegmenterSpec, case: &'a Case) -> Result<Box<dyn Segmenter + 'a>>;
}

/// Knows the three reference builtins and external processes.
///
/// Options: `tolerance` (regiongrow), `handshake_timeout` and `timeout` in
/// seconds (external).
#[derive(Clone, Copy, Debug, Default)]
pub struct StandardFactory;

impl SegmenterFactory for StandardFactory {
    fn begin<'a>(&self, spec: &SegmenterSpec, case: &'a Case) -> Result<Box<dyn Segmenter + 'a>> {
        spec.validate()?;
        Ok(match &spec.kind {
            SegmenterKind::Oracle => Box::new(OracleSegmenter::new(case)),
            SegmenterKind::Constant => Box::new(ConstantSegmenter::new(case)),
            SegmenterKind::RegionGrow => {
                let tol = spec.option("tolerance")?.unwrap_or(builtin::DEFAULT_REGION_TOLERANCE);
                Box::new(RegionGrowSegmenter::new(case, tol))
            }
            SegmenterKind::External { command } => {
                let mut opts = ExternalOptions::default();
                if let Some(s) = spec.option::<f64>("handshake_timeout")? {
                    opts.handshake_timeout = Duration::from_secs_f64(s);
                }
                if let Some(s) = spec.option::<f64>("timeout")? {
                    opts.request_timeout = Duration::from_secs_f64(s);
                }
                Box::new(ExternalSegmenter::launch(command, case, opts)?)
            }
            SegmenterKind::Builtin(name) => {
                return Err(Error::InvalidArgument(format!("unknown builtin segmenter {name:?}")))
            }
        })
    }
}

/// Opens a session with the [`StandardFactory`].
pub fn begin<'a>(spec: &SegmenterSpec, case: &'a Case) -> Result<Box<dyn Segmenter + 'a>> {
    StandardFactory.begin(spec, case)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        assert_eq!(SegmenterSpec::parse("builtin:oracle").unwrap().kind, SegmenterKind::Oracle);
        assert_eq!(
            SegmenterSpec::parse("builtin:toy").unwrap().kind,
            SegmenterKind::Builtin("toy".into())
        );
        assert_eq!(
            SegmenterSpec::parse("exec:python seg.py").unwrap().kind,
            SegmenterKind::External { command: "python seg.py".into() }
        );
        assert!(SegmenterSpec::parse("exec:  ").is_err());
        assert!(SegmenterSpec::parse("oracle").is_err());
    }
}
