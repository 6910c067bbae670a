//! Reverse-mode differentiation over the small set of matrix primitives the
//! models need.
//!
//! Model code is written once against the [`Engine`] trait. [`Tape`] records
//! every primitive so [`Tape::backward`] can produce gradients; [`Eval`]
//! computes values only and records nothing, which is the inference path for
//! heads that need no gradients.

mod eval;
mod gradcheck;
pub(crate) mod kernels;
mod params;
mod tape;

use std::sync::Arc;

use thiserror::Error;

use crate::matrix::Matrix;

pub use eval::Eval;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{merge_grads, ParamGrads, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward needs a 1x1 output, got {0}x{1}")]
    NonScalarOutput(usize, usize),
    #[error("backward already ran on this recording")]
    AlreadyBackpropagated,
    #[error("variable does not belong to this tape")]
    ForeignVariable,
}

/// The primitive operations shared by the recording and non-recording engines.
///
/// Shape errors are programming errors and panic with a message naming the
/// primitive.
pub trait Engine {
    type V: Clone;

    /// A value that never needs a gradient.
    fn constant(&mut self, value: Matrix) -> Self::V;
    /// A value whose gradient is wanted (atom positions, for instance).
    fn input(&mut self, value: Matrix) -> Self::V;
    /// A trainable parameter.
    fn param(&mut self, id: ParamId, value: &Arc<Matrix>) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Matrix;

    /// `x·W + b` with `W` of shape in×out and `b` of shape 1×out.
    fn linear(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Self::V;
    /// `ln(0.5·eˣ + 0.5)`, zero at the origin.
    fn shifted_softplus(&mut self, x: &Self::V) -> Self::V;
    fn sigmoid(&mut self, x: &Self::V) -> Self::V;
    fn abs(&mut self, x: &Self::V) -> Self::V;
    /// `exp(−γ(d − μ_k)²)` for an n×1 column `d`, one output column per center.
    fn gaussian_rbf(&mut self, d: &Self::V, centers: &Arc<[f64]>, gamma: f64) -> Self::V;
    /// `[c⁰, c¹, …, c^{count−1}]` for an n×1 column `c`.
    fn power_basis(&mut self, c: &Self::V, count: usize) -> Self::V;
    fn segment_sum(&mut self, v: &Self::V, ids: &Arc<[usize]>, num_segments: usize) -> Self::V;
    fn gather_rows(&mut self, v: &Self::V, idx: &Arc<[usize]>) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Multiplies row `i` of the n×m `x` by `s[i]` of the n×1 `s`.
    fn scale_rows(&mut self, x: &Self::V, s: &Self::V) -> Self::V;
    fn scale(&mut self, x: &Self::V, c: f64) -> Self::V;
    /// Euclidean norm of each row as an n×1 column.
    fn norm_rows(&mut self, x: &Self::V) -> Self::V;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Self::V;
    /// Row-wise `a·b / max(|a||b|, eps)` as an n×1 column.
    fn cosine_rows(&mut self, a: &Self::V, b: &Self::V, eps: f64) -> Self::V;
    /// Sum of every entry as a 1×1 value.
    fn sum_all(&mut self, x: &Self::V) -> Self::V;

    /// Number of recorded operations; zero for engines that record nothing.
    fn recorded_nodes(&self) -> usize;
}
