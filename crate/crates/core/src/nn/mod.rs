//! Dense tensors, a reverse-mode tape, MLPs, Adam and checkpoints.

mod adam;
mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, VERSION as CHECKPOINT_VERSION};
pub use mlp::{Mlp, MlpSpec, OutputTransform, LEAKY_SLOPE};
pub use tape::{CustomOp, Gradients, Tape, Var, NORMALIZE_GUARD};
pub use tensor::Tensor;
