//! Dense f64 tensors, hand-differentiated layers, a linear-chain CRF and an
//! Adam optimizer. Every layer exposes an explicit forward pass that returns
//! what its backward pass needs; there is no computation graph.

mod adam;
mod checkpoint;
mod crf;
mod gradcheck;
mod layers;
mod lstm;
mod params;
mod tensor;

pub use adam::{clip_grads, Adam, AdamConfig};
pub use checkpoint::{
    load_params, params_to_json, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use crf::{bio_mask, Crf, CrfLayer, NllGrad};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck};
pub use layers::{cross_entropy, log_sum_exp, softmax, Embedding, Linear};
pub use lstm::{Direction, Forest, Lstm, SeqTape, SequenceEncoder};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::{axpy, dot, matvec_add, matvec_t_add, outer_add, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuroError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter `{0}`")]
    Duplicate(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub(crate) fn shape_error(
    context: impl Into<String>,
    expected: &[usize],
    found: &[usize],
) -> NeuroError {
    NeuroError::Shape {
        context: context.into(),
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}
