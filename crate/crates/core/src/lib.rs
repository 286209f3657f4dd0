pub mod error;
pub mod io;
pub mod metrics;
pub mod pipelines;
pub mod prompts;
pub mod segmenter;
pub mod types;

pub use error::{Error, Result};
