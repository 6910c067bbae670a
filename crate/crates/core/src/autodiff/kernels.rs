//! Forward kernels shared by both engines. Every kernel is row-independent so a
//! row's result never depends on which other rows share the matrix.

use crate::matrix::{axpy, dot, Matrix};

pub fn linear(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Matrix {
    assert_eq!(
        x.cols(),
        w.rows(),
        "linear: input width {} vs weight rows {}",
        x.cols(),
        w.rows()
    );
    let mut out = x.matmul(w);
    if let Some(b) = b {
        assert_eq!(b.shape(), (1, w.cols()), "linear: bias shape");
        for r in 0..out.rows() {
            axpy(1.0, b.as_slice(), out.row_mut(r));
        }
    }
    out
}

#[inline]
pub fn ssp(x: f64) -> f64 {
    // softplus(x) - ln 2, written to avoid overflow for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gaussian_rbf(d: &Matrix, centers: &[f64], gamma: f64) -> Matrix {
    assert_eq!(d.cols(), 1, "gaussian_rbf: input must be a column");
    let k = centers.len();
    let mut out = Matrix::zeros(d.rows(), k);
    for r in 0..d.rows() {
        let dv = d.get(r, 0);
        for (o, &mu) in out.row_mut(r).iter_mut().zip(centers) {
            let t = dv - mu;
            *o = (-gamma * t * t).exp();
        }
    }
    out
}

pub fn power_basis(c: &Matrix, count: usize) -> Matrix {
    assert_eq!(c.cols(), 1, "power_basis: input must be a column");
    let mut out = Matrix::zeros(c.rows(), count);
    for r in 0..c.rows() {
        let cv = c.get(r, 0);
        let mut p = 1.0;
        for o in out.row_mut(r).iter_mut() {
            *o = p;
            p *= cv;
        }
    }
    out
}

pub fn same_shape(op: &str, a: &Matrix, b: &Matrix) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

pub fn scale_rows(x: &Matrix, s: &Matrix) -> Matrix {
    assert_eq!(s.shape(), (x.rows(), 1), "scale_rows: scale must be a column");
    let mut out = x.clone();
    for r in 0..x.rows() {
        let f = s.get(r, 0);
        out.row_mut(r).iter_mut().for_each(|v| *v *= f);
    }
    out
}

pub fn norm_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), 1);
    for r in 0..x.rows() {
        let row = x.row(r);
        out.set(r, 0, dot(row, row).sqrt());
    }
    out
}

pub fn cosine_rows(a: &Matrix, b: &Matrix, eps: f64) -> Matrix {
    same_shape("cosine_rows", a, b);
    let mut out = Matrix::zeros(a.rows(), 1);
    for r in 0..a.rows() {
        let (ra, rb) = (a.row(r), b.row(r));
        let denom = (dot(ra, ra).sqrt() * dot(rb, rb).sqrt()).max(eps);
        out.set(r, 0, dot(ra, rb) / denom);
    }
    out
}

pub fn concat(parts: &[&Matrix]) -> Matrix {
    assert!(!parts.is_empty(), "concat_cols: no parts");
    Matrix::concat_cols(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssp_at_zero() {
        assert_eq!(ssp(0.0), 0.0);
        assert!((ssp(50.0) - (50.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert!(ssp(-800.0).is_finite());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn power_basis_at_right_angle() {
        let b = power_basis(&Matrix::column(&[0.0, -1.0]), 4);
        assert_eq!(b.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.row(1), &[1.0, -1.0, 1.0, -1.0]);
    }
}
