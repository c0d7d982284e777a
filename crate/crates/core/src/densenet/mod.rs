//! Dense residual autoencoder used by each view.

mod block;
mod checkpoint;
mod model;

pub use block::{residual_block_forward, BlockVars, Mode, NormParams, ResidualBlockParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{reconstruction_loss, ViewArch, ViewModel, ViewTag, ViewVars};
