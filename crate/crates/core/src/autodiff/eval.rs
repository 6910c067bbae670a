use std::sync::Arc;

use super::kernels;
use super::params::ParamId;
use super::Engine;
use crate::matrix::Matrix;

/// Value-only engine: nothing is recorded and no gradients are available.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

type V = Arc<Matrix>;

fn zip(op: &str, a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> V {
    kernels::same_shape(op, a, b);
    Arc::new(a.zip_map(b, f))
}

impl Engine for Eval {
    type V = V;

    fn constant(&mut self, value: Matrix) -> V {
        Arc::new(value)
    }

    fn input(&mut self, value: Matrix) -> V {
        Arc::new(value)
    }

    fn param(&mut self, _id: ParamId, value: &Arc<Matrix>) -> V {
        Arc::clone(value)
    }

    fn value<'a>(&'a self, v: &'a V) -> &'a Matrix {
        v
    }

    fn linear(&mut self, x: &V, w: &V, b: Option<&V>) -> V {
        Arc::new(kernels::linear(x, w, b.map(|b| &**b)))
    }

    fn shifted_softplus(&mut self, x: &V) -> V {
        Arc::new(x.map(kernels::ssp))
    }

    fn sigmoid(&mut self, x: &V) -> V {
        Arc::new(x.map(kernels::sigmoid))
    }

    fn abs(&mut self, x: &V) -> V {
        Arc::new(x.map(f64::abs))
    }

    fn gaussian_rbf(&mut self, d: &V, centers: &Arc<[f64]>, gamma: f64) -> V {
        Arc::new(kernels::gaussian_rbf(d, centers, gamma))
    }

    fn power_basis(&mut self, c: &V, count: usize) -> V {
        Arc::new(kernels::power_basis(c, count))
    }

    fn segment_sum(&mut self, v: &V, ids: &Arc<[usize]>, num_segments: usize) -> V {
        Arc::new(v.segment_sum(ids, num_segments))
    }

    fn gather_rows(&mut self, v: &V, idx: &Arc<[usize]>) -> V {
        Arc::new(v.gather_rows(idx))
    }

    fn add(&mut self, a: &V, b: &V) -> V {
        zip("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &V, b: &V) -> V {
        zip("sub", a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &V, b: &V) -> V {
        zip("mul", a, b, |x, y| x * y)
    }

    fn div(&mut self, a: &V, b: &V) -> V {
        zip("div", a, b, |x, y| x / y)
    }

    fn scale_rows(&mut self, x: &V, s: &V) -> V {
        Arc::new(kernels::scale_rows(x, s))
    }

    fn scale(&mut self, x: &V, c: f64) -> V {
        Arc::new(x.map(|v| v * c))
    }

    fn norm_rows(&mut self, x: &V) -> V {
        Arc::new(kernels::norm_rows(x))
    }

    fn concat_cols(&mut self, parts: &[V]) -> V {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &**p).collect();
        Arc::new(kernels::concat(&mats))
    }

    fn cosine_rows(&mut self, a: &V, b: &V, eps: f64) -> V {
        Arc::new(kernels::cosine_rows(a, b, eps))
    }

    fn sum_all(&mut self, x: &V) -> V {
        Arc::new(Matrix::scalar(x.sum()))
    }

    fn recorded_nodes(&self) -> usize {
        0
    }
}
