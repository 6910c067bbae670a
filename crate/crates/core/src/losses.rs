//! Training losses and evaluation metrics.
//!
//! The plain functions work on finished predictions; the `*_term` functions
//! build the same quantities inside an [`Engine`] so they can be
//! differentiated. Force terms skip rows whose mask entry is false
//! (supernodes).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Engine;
use crate::matrix::{dot, Matrix};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EcKind {
    #[default]
    None,
    GradTarget,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_e: f64,
    pub lambda_f: f64,
    pub lambda_ec: f64,
    pub ec_kind: EcKind,
    pub eps: f64,
    /// Sum the gradient-target term over atoms instead of averaging it.
    pub ec_raw_sum: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_f: 0.0,
            lambda_ec: 0.0,
            ec_kind: EcKind::None,
            eps: DEFAULT_EPS,
            ec_raw_sum: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty input")]
    Empty,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("baseline MAE must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("no atoms left after masking")]
    AllMasked,
}

fn check_rows(a: &Matrix, b: &Matrix, mask: &[bool]) -> Result<usize, LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::Shape(a.shape(), b.shape()));
    }
    if a.rows() == 0 {
        return Err(LossError::Empty);
    }
    if mask.len() != a.rows() {
        return Err(LossError::Shape(a.shape(), (mask.len(), a.cols())));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(LossError::AllMasked),
        n => Ok(n),
    }
}

/// Mean over graphs of `|ŷ − y|`.
pub fn loss_energy(pred: &[f64], labels: &[f64]) -> Result<f64, LossError> {
    if pred.len() != labels.len() {
        return Err(LossError::Shape((pred.len(), 1), (labels.len(), 1)));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(pred.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean over included atoms of `‖F̂_i − F_i‖₂`.
pub fn loss_force(pred: &Matrix, labels: &Matrix, mask: &[bool]) -> Result<f64, LossError> {
    let n = check_rows(pred, labels, mask)?;
    let mut acc = 0.0;
    for r in (0..pred.rows()).filter(|&r| mask[r]) {
        let d: Vec<f64> = pred.row(r).iter().zip(labels.row(r)).map(|(a, b)| a - b).collect();
        acc += dot(&d, &d).sqrt();
    }
    Ok(acc / n as f64)
}

/// `Σ_i ‖F̂_i − (−∇E)_i‖²`, divided by the atom count unless `raw_sum`.
pub fn loss_ec_grad(pred: &Matrix, energy_grad: &Matrix, mask: &[bool], raw_sum: bool) -> Result<f64, LossError> {
    let n = check_rows(pred, energy_grad, mask)?;
    let mut acc = 0.0;
    for r in (0..pred.rows()).filter(|&r| mask[r]) {
        let d: Vec<f64> = pred.row(r).iter().zip(energy_grad.row(r)).map(|(f, g)| f + g).collect();
        acc += dot(&d, &d);
    }
    Ok(if raw_sum { acc } else { acc / n as f64 })
}

/// Mean over atoms of `F̂_i·F_i / max(‖F̂_i‖‖F_i‖, eps)`.
pub fn ec_cos(pred: &Matrix, target: &Matrix, mask: &[bool], eps: f64) -> Result<f64, LossError> {
    let n = check_rows(pred, target, mask)?;
    let mut acc = 0.0;
    for r in (0..pred.rows()).filter(|&r| mask[r]) {
        let (a, b) = (pred.row(r), target.row(r));
        acc += dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt()).max(eps);
    }
    Ok(acc / n as f64)
}

/// The cosine objective term `1 − ec_cos`, in `[0, 2]`.
pub fn loss_ec_cosine(pred: &Matrix, target: &Matrix, mask: &[bool], eps: f64) -> Result<f64, LossError> {
    Ok(1.0 - ec_cos(pred, target, mask, eps)?)
}

/// Per-atom mean of the gradient-target summand; 0 for forces derived from energy.
pub fn metric_ec_dist(pred: &Matrix, energy_grad: &Matrix, mask: &[bool]) -> Result<f64, LossError> {
    loss_ec_grad(pred, energy_grad, mask, false)
}

/// Mean absolute error times `unit_scale` (1000 turns eV into meV).
pub fn metric_mae(pred: &[f64], labels: &[f64], unit_scale: f64) -> Result<f64, LossError> {
    Ok(loss_energy(pred, labels)? * unit_scale)
}

/// `100·(variant − baseline)/baseline`; negative values are improvements.
pub fn mae_improvement(variant: f64, baseline: f64) -> Result<f64, LossError> {
    if !(baseline > 0.0) {
        return Err(LossError::ZeroBaseline(baseline));
    }
    Ok(100.0 * (variant - baseline) / baseline)
}

fn mask_column(mask: &[bool]) -> Matrix {
    Matrix::column(&mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

fn masked_count(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&m| m).count().max(1) as f64
}

/// Differentiable [`loss_energy`].
pub fn energy_term<E: Engine>(e: &mut E, pred: &E::V, labels: &[f64]) -> E::V {
    let y = e.constant(Matrix::column(labels));
    let r = e.sub(pred, &y);
    let a = e.abs(&r);
    let s = e.sum_all(&a);
    e.scale(&s, 1.0 / labels.len() as f64)
}

/// Differentiable [`loss_force`].
pub fn force_term<E: Engine>(e: &mut E, pred: &E::V, labels: &Matrix, mask: &[bool]) -> E::V {
    let y = e.constant(labels.clone());
    let r = e.sub(pred, &y);
    let norms = e.norm_rows(&r);
    let m = e.constant(mask_column(mask));
    let kept = e.mul(&norms, &m);
    let s = e.sum_all(&kept);
    e.scale(&s, 1.0 / masked_count(mask))
}

/// Differentiable [`loss_ec_grad`] with the energy gradient held constant.
pub fn ec_grad_term<E: Engine>(e: &mut E, pred: &E::V, energy_grad: &Matrix, mask: &[bool], raw_sum: bool) -> E::V {
    let target = e.constant(energy_grad.map(|v| -v));
    let r = e.sub(pred, &target);
    let sq = e.mul(&r, &r);
    let m = e.constant(mask_column(mask));
    let kept = e.scale_rows(&sq, &m);
    let s = e.sum_all(&kept);
    if raw_sum {
        s
    } else {
        e.scale(&s, 1.0 / masked_count(mask))
    }
}

/// Differentiable [`loss_ec_cosine`].
pub fn ec_cosine_term<E: Engine>(e: &mut E, pred: &E::V, target: &Matrix, mask: &[bool], eps: f64) -> E::V {
    let t = e.constant(target.clone());
    let c = e.cosine_rows(pred, &t, eps);
    let m = e.constant(mask_column(mask));
    let kept = e.mul(&c, &m);
    let s = e.sum_all(&kept);
    let mean = e.scale(&s, -1.0 / masked_count(mask));
    let one = e.constant(Matrix::scalar(1.0));
    e.add(&one, &mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        assert_eq!(loss_energy(&[1.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(loss_energy(&[4.0], &[1.0]).unwrap(), 3.0);
        assert_eq!(loss_energy(&[3.0, -4.0], &[0.0, 0.0]).unwrap(), 3.5);
        assert_eq!(loss_energy(&[], &[]), Err(LossError::Empty));
    }

    #[test]
    fn ec_grad_examples() {
        let f = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        let g = f.map(|v| -v);
        assert_eq!(loss_ec_grad(&f, &g, &[true], false).unwrap(), 0.0);
        let f = Matrix::from_rows(&[[1.0, 2.0, 2.0]]);
        let zero = Matrix::zeros(1, 3);
        assert_eq!(loss_ec_grad(&f, &zero, &[true], false).unwrap(), 9.0);
    }

    #[test]
    fn cosine_examples() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0]]);
        let b = Matrix::from_rows(&[[2.0, 0.0, 0.0]]);
        assert_eq!(loss_ec_cosine(&a, &b, &[true], DEFAULT_EPS).unwrap(), 0.0);
        let c = b.map(|v| -v);
        assert_eq!(loss_ec_cosine(&a, &c, &[true], DEFAULT_EPS).unwrap(), 2.0);
        let z = Matrix::zeros(1, 3);
        assert_eq!(loss_ec_cosine(&z, &b, &[true], DEFAULT_EPS).unwrap(), 1.0);
    }

    #[test]
    fn mae_examples() {
        assert!((metric_mae(&[0.1, -0.1], &[0.0, 0.0], 1000.0).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(metric_mae(&[0.001, 0.002, 0.003], &[0.0; 3], 1000.0).unwrap(), 2.0);
        assert_eq!(mae_improvement(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(mae_improvement(1.0, 0.0), Err(LossError::ZeroBaseline(0.0)));
    }

    #[test]
    fn improvement_reference_rows() {
        assert_eq!(format!("{:.2}", mae_improvement(630.0, 683.0).unwrap()), "-7.76");
        assert_eq!(format!("{:.2}", mae_improvement(595.0, 628.0).unwrap()), "-5.25");
    }

    #[test]
    fn supernode_rows_are_skipped() {
        let p = Matrix::from_rows(&[[1.0, 0.0, 0.0], [9.0, 9.0, 9.0]]);
        let y = Matrix::zeros(2, 3);
        assert_eq!(loss_force(&p, &y, &[true, false]).unwrap(), 1.0);
        assert_eq!(loss_force(&p, &y, &[false, false]), Err(LossError::AllMasked));
    }
}
