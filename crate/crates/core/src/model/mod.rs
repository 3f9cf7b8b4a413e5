//! Reference CNN, optimizer and checkpoint format.

mod adam;
mod checkpoint;
mod cnn;
pub mod loss;
mod scalar;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cnn::{batch_from_images, rows_of, CnnSpec, ForwardCache, Layer, MicroCnn, Mode, Params};
pub use scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
