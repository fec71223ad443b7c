//! Dense tensors and reverse-mode differentiation sized for the toy
//! denoiser.

mod checkpoint;
mod gradcheck;
pub mod nn;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CKPT_MAGIC};
pub use gradcheck::finite_diff_check;
pub use params::{Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::Result;

/// `softmax((Q·Kᵀ + bias) / sqrt(d)) · V` for single-head 2-D operands.
///
/// Bias entries equal to `-inf` are excluded from the softmax and receive
/// exactly zero weight.
pub fn scaled_dot_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (q, k, v) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let out = tape.attention(q, k, v, 1, bias)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests;
