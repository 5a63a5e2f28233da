//! Minimal reverse-mode differentiation engine.
//!
//! A [`Graph`] records tensor operations as they execute. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! [`Gradients`] for every node that contributed. Parameters live outside the
//! graph in a [`ParamStore`] and are attached as leaves for each forward pass,
//! so a fresh graph is built per mini-batch.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{conv1d_output_len, pool1d_output_len, sigmoid, Gradients, Graph, Var};
pub use optim::{AdamW, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("attention: model dimension {dim} is not divisible by {heads} heads")]
    IndivisibleHeads { dim: usize, heads: usize },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Sinusoidal position table of shape `positions × dim`.
///
/// Even columns hold `sin(pos / 10000^(2i/dim))`, odd columns the matching
/// cosine.
pub fn positional_encoding(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for pos in 0..positions {
        for i in (0..dim).step_by(2) {
            let freq = 10000f64.powf(-(i as f64) / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = angle.sin();
            if i + 1 < dim {
                data[pos * dim + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(vec![positions, dim], data).expect("table shape")
}
