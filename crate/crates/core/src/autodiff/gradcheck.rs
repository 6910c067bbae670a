use super::{Engine, Tape, Var};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates compared, in flat row-major order.
    pub coords: Vec<usize>,
    pub reverse: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative error of `a` against `b`, with a floor on the denominator so
/// components that are tiny compared to the whole gradient do not dominate.
pub(crate) fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn eval_at(f: &impl Fn(&mut Tape, Var) -> Var, point: Matrix) -> f64 {
    let mut t = Tape::new();
    let x = t.input(point);
    let y = f(&mut t, x);
    t.value(&y).item()
}

/// Compares the reverse-mode gradient of the scalar function `f` at `point`
/// with central differences using step `step·(1 + |x_k|)` per coordinate.
///
/// `coords` restricts the comparison to a subset of flat indices. The relative
/// error denominator is floored at `1e-3·max|∇f|`.
pub fn grad_check(
    f: impl Fn(&mut Tape, Var) -> Var,
    point: &Matrix,
    step: f64,
    tolerance: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport {
    let mut t = Tape::new();
    let x = t.input(point.clone());
    let y = f(&mut t, x);
    let grads = t.backward(y).expect("grad_check: function must return a scalar");
    let g = grads.wrt_or_zeros(x, point.rows(), point.cols());

    let coords: Vec<usize> = match coords {
        Some(c) => c.to_vec(),
        None => (0..point.len()).collect(),
    };
    let mut reverse = Vec::with_capacity(coords.len());
    let mut fd = Vec::with_capacity(coords.len());
    for &k in &coords {
        let x0 = point.as_slice()[k];
        let h = step * (1.0 + x0.abs());
        let mut plus = point.clone();
        plus.as_mut_slice()[k] = x0 + h;
        let mut minus = point.clone();
        minus.as_mut_slice()[k] = x0 - h;
        let d = (eval_at(&f, plus) - eval_at(&f, minus)) / (2.0 * h);
        reverse.push(g.as_slice()[k]);
        fd.push(d);
    }
    let floor = 1e-3 * g.max_abs();
    let mut max_abs_error: f64 = 0.0;
    let mut max_rel_error: f64 = 0.0;
    for (a, b) in reverse.iter().zip(&fd) {
        max_abs_error = max_abs_error.max((a - b).abs());
        max_rel_error = max_rel_error.max(rel_error(*a, *b, floor));
    }
    GradCheckReport {
        coords,
        reverse,
        finite_difference: fd,
        max_abs_error,
        max_rel_error,
        tolerance,
    }
}
