//! Minimal transformer backend: reverse-mode autodiff over `f64` matrices,
//! Adam, a BERT-style encoder and a checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod encoder;
pub mod graph;
pub mod params;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use encoder::{Encoder, EncoderBatch, EncoderConfig, WeightOrigin};
pub use graph::{softmax_rows, Grads, Graph, Matrix, SeqLayout, Var};
pub use params::{ParamRef, ParamSet};
