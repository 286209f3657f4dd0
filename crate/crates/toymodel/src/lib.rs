//! A small memory-conditioned streaming segmenter with its own autodiff,
//! trainer, checkpoint format and protocol server.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod memory;
pub mod model;
pub mod params;
pub mod serve;
pub mod session;
pub mod tensor;
pub mod train;

pub use error::{Result, ToyError};
pub use loss::{bce_loss, dice_loss, total_loss, LossBreakdown, LossConfig};
pub use memory::MemoryBank;
pub use model::{select_index, select_mask, DecoderOutput, MemoryEntry, TokenGrid, ToyConfig, ToyModel};
pub use params::{Component, ParamStore};
pub use session::{ToyFactory, ToyOptions, ToySegmenter, ToyTracker};
pub use train::{train, training_dsc, TrainConfig, TrainReport};
