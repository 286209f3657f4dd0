//! Dataset ingestion, synthetic generation and result persistence.

pub mod manifest;
pub mod pnm;
pub mod results;
pub mod synth;

pub use manifest::{load_dataset, write_dataset, CaseEntry, Dataset, DatasetManifest};
pub use pnm::{read_frame, read_mask, write_frame, write_mask, Pnm};
pub use results::{read_results, write_results, PipelineKind, PromptAudit, ResultRow, RowStatus};
pub use synth::{generate_synthetic, synthesize, SynthKind, SyntheticSpec};
