use std::sync::Arc;

use super::kernels;
use super::params::{ParamGrads, ParamId};
use super::{AutodiffError, Engine};
use crate::matrix::{axpy, dot, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: usize, w: usize, b: Option<usize> },
    Ssp(usize),
    Sigmoid(usize),
    Abs(usize),
    Rbf { d: usize, centers: Arc<[f64]>, gamma: f64 },
    Power(usize),
    SegmentSum { v: usize, ids: Arc<[usize]> },
    Gather { v: usize, idx: Arc<[usize]> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    ScaleRows(usize, usize),
    Scale(usize, f64),
    NormRows(usize),
    Concat(Vec<usize>),
    Cosine { a: usize, b: usize, eps: f64 },
    SumAll(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Matrix>,
    requires_grad: bool,
}

/// Records primitive applications in execution order, which is a topological
/// order by construction.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    track_params: bool,
    done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of the leaves after a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    inputs: Vec<Option<Matrix>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a marked input, `None` if it did not influence
    /// the output.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.inputs.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`] but zeros when the output did not depend on `v`.
    pub fn wrt_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.wrt(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    /// A tape that records parameter gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track_params: true,
            done: false,
        }
    }

    /// A tape that treats parameters as constants; only marked inputs get
    /// gradients. Used when forces are derived from energy at inference time.
    pub fn inputs_only() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, op: Op, value: Arc<Matrix>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Matrix {
        &self.nodes[i].value
    }

    /// Runs reverse accumulation from the 1×1 `output`.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, AutodiffError> {
        if self.done {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let out = self.nodes.get(output.0).ok_or(AutodiffError::ForeignVariable)?;
        let (r, c) = out.value.shape();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarOutput(r, c));
        }
        self.done = true;

        let mut adj: Vec<Option<Matrix>> = Vec::new();
        adj.resize_with(output.0 + 1, || None);
        adj[output.0] = Some(Matrix::scalar(1.0));
        let mut grads = Gradients {
            inputs: Vec::new(),
            params: ParamGrads::new(),
        };
        grads.inputs.resize_with(self.nodes.len(), || None);

        for k in (0..=output.0).rev() {
            if !self.nodes[k].requires_grad {
                continue;
            }
            let Some(g) = adj[k].take() else { continue };
            match &self.nodes[k].op {
                Op::Leaf => grads.inputs[k] = Some(g),
                Op::Param(id) => match grads.params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.params.insert(*id, g);
                    }
                },
                op => self.propagate(op, &g, &mut adj),
            }
        }
        Ok(grads)
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, op: &Op, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let mut send = |i: usize, contrib: Matrix| match &mut adj[i] {
            Some(acc) => acc.add_assign(&contrib),
            slot => *slot = Some(contrib),
        };
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Linear { x, w, b } => {
                if self.wants(*x) {
                    send(*x, g.matmul_t(self.val(*w)));
                }
                if self.wants(*w) {
                    send(*w, self.val(*x).t_matmul(g));
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        send(*b, g.col_sums());
                    }
                }
            }
            Op::Ssp(x) => {
                let xv = self.val(*x);
                send(*x, g.zip_map(xv, |gi, xi| gi * kernels::sigmoid(xi)));
            }
            Op::Sigmoid(x) => {
                // the output value is the node's own value; recompute from the input
                let xv = self.val(*x);
                send(
                    *x,
                    g.zip_map(xv, |gi, xi| {
                        let s = kernels::sigmoid(xi);
                        gi * s * (1.0 - s)
                    }),
                );
            }
            Op::Abs(x) => {
                let xv = self.val(*x);
                send(
                    *x,
                    g.zip_map(xv, |gi, xi| {
                        if xi > 0.0 {
                            gi
                        } else if xi < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Rbf { d, centers, gamma } => {
                let dv = self.val(*d);
                let mut out = Matrix::zeros(dv.rows(), 1);
                for r in 0..dv.rows() {
                    let x = dv.get(r, 0);
                    let mut acc = 0.0;
                    for (k, &mu) in centers.iter().enumerate() {
                        let t = x - mu;
                        acc += g.get(r, k) * (-gamma * t * t).exp() * (-2.0 * gamma * t);
                    }
                    out.set(r, 0, acc);
                }
                send(*d, out);
            }
            Op::Power(c) => {
                let cv = self.val(*c);
                let mut out = Matrix::zeros(cv.rows(), 1);
                for r in 0..cv.rows() {
                    let x = cv.get(r, 0);
                    let mut acc = 0.0;
                    let mut prev = 1.0; // x^{p-1}
                    for p in 1..g.cols() {
                        acc += g.get(r, p) * p as f64 * prev;
                        prev *= x;
                    }
                    out.set(r, 0, acc);
                }
                send(*c, out);
            }
            Op::SegmentSum { v, ids } => send(*v, g.gather_rows(ids)),
            Op::Gather { v, idx } => send(*v, g.segment_sum(idx, self.val(*v).rows())),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    send(*a, g.clone());
                }
                if self.wants(*b) {
                    send(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    send(*a, g.clone());
                }
                if self.wants(*b) {
                    send(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    send(*a, g.zip_map(self.val(*b), |gi, bi| gi * bi));
                }
                if self.wants(*b) {
                    send(*b, g.zip_map(self.val(*a), |gi, ai| gi * ai));
                }
            }
            Op::Div(a, b) => {
                let bv = self.val(*b);
                if self.wants(*a) {
                    send(*a, g.zip_map(bv, |gi, bi| gi / bi));
                }
                if self.wants(*b) {
                    let av = self.val(*a);
                    let mut out = g.zip_map(av, |gi, ai| gi * ai);
                    for (o, &bi) in out.as_mut_slice().iter_mut().zip(bv.as_slice()) {
                        *o = -*o / (bi * bi);
                    }
                    send(*b, out);
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.val(*x), self.val(*s));
                if self.wants(*x) {
                    send(*x, kernels::scale_rows(g, sv));
                }
                if self.wants(*s) {
                    let mut out = Matrix::zeros(xv.rows(), 1);
                    for r in 0..xv.rows() {
                        out.set(r, 0, dot(g.row(r), xv.row(r)));
                    }
                    send(*s, out);
                }
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * c)),
            Op::NormRows(x) => {
                let xv = self.val(*x);
                let mut out = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let n = dot(xv.row(r), xv.row(r)).sqrt();
                    if n > 0.0 {
                        axpy(g.get(r, 0) / n, xv.row(r), out.row_mut(r));
                    }
                }
                send(*x, out);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.val(p).cols();
                    if self.wants(p) {
                        send(p, g.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::Cosine { a, b, eps } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let (ra, rb) = (av.row(r), bv.row(r));
                    let (na, nb) = (dot(ra, ra).sqrt(), dot(rb, rb).sqrt());
                    let gr = g.get(r, 0);
                    if na * nb > *eps {
                        let m = na * nb;
                        let y = dot(ra, rb) / m;
                        axpy(gr / m, rb, ga.row_mut(r));
                        axpy(-gr * y / (na * na), ra, ga.row_mut(r));
                        axpy(gr / m, ra, gb.row_mut(r));
                        axpy(-gr * y / (nb * nb), rb, gb.row_mut(r));
                    } else {
                        axpy(gr / eps, rb, ga.row_mut(r));
                        axpy(gr / eps, ra, gb.row_mut(r));
                    }
                }
                if self.wants(*a) {
                    send(*a, ga);
                }
                if self.wants(*b) {
                    send(*b, gb);
                }
            }
            Op::SumAll(x) => {
                let xv = self.val(*x);
                send(*x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
        }
    }
}

impl Engine for Tape {
    type V = Var;

    fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(Op::Leaf, Arc::new(value), false)
    }

    fn input(&mut self, value: Matrix) -> Var {
        self.leaf(Op::Leaf, Arc::new(value), true)
    }

    fn param(&mut self, id: ParamId, value: &Arc<Matrix>) -> Var {
        let track = self.track_params;
        self.leaf(Op::Param(id), Arc::clone(value), track)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Matrix {
        &self.nodes[v.0].value
    }

    fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Var {
        let out = kernels::linear(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)));
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        self.push(
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            out,
            &inputs,
        )
    }

    fn shifted_softplus(&mut self, x: &Var) -> Var {
        let out = self.val(x.0).map(kernels::ssp);
        self.push(Op::Ssp(x.0), out, &[x.0])
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let out = self.val(x.0).map(kernels::sigmoid);
        self.push(Op::Sigmoid(x.0), out, &[x.0])
    }

    fn abs(&mut self, x: &Var) -> Var {
        let out = self.val(x.0).map(f64::abs);
        self.push(Op::Abs(x.0), out, &[x.0])
    }

    fn gaussian_rbf(&mut self, d: &Var, centers: &Arc<[f64]>, gamma: f64) -> Var {
        let out = kernels::gaussian_rbf(self.val(d.0), centers, gamma);
        self.push(
            Op::Rbf {
                d: d.0,
                centers: Arc::clone(centers),
                gamma,
            },
            out,
            &[d.0],
        )
    }

    fn power_basis(&mut self, c: &Var, count: usize) -> Var {
        let out = kernels::power_basis(self.val(c.0), count);
        self.push(Op::Power(c.0), out, &[c.0])
    }

    fn segment_sum(&mut self, v: &Var, ids: &Arc<[usize]>, num_segments: usize) -> Var {
        let out = self.val(v.0).segment_sum(ids, num_segments);
        self.push(
            Op::SegmentSum {
                v: v.0,
                ids: Arc::clone(ids),
            },
            out,
            &[v.0],
        )
    }

    fn gather_rows(&mut self, v: &Var, idx: &Arc<[usize]>) -> Var {
        let out = self.val(v.0).gather_rows(idx);
        self.push(
            Op::Gather {
                v: v.0,
                idx: Arc::clone(idx),
            },
            out,
            &[v.0],
        )
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        kernels::same_shape("add", self.val(a.0), self.val(b.0));
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x + y);
        self.push(Op::Add(a.0, b.0), out, &[a.0, b.0])
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        kernels::same_shape("sub", self.val(a.0), self.val(b.0));
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), out, &[a.0, b.0])
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        kernels::same_shape("mul", self.val(a.0), self.val(b.0));
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), out, &[a.0, b.0])
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        kernels::same_shape("div", self.val(a.0), self.val(b.0));
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x / y);
        self.push(Op::Div(a.0, b.0), out, &[a.0, b.0])
    }

    fn scale_rows(&mut self, x: &Var, s: &Var) -> Var {
        let out = kernels::scale_rows(self.val(x.0), self.val(s.0));
        self.push(Op::ScaleRows(x.0, s.0), out, &[x.0, s.0])
    }

    fn scale(&mut self, x: &Var, c: f64) -> Var {
        let out = self.val(x.0).map(|v| v * c);
        self.push(Op::Scale(x.0, c), out, &[x.0])
    }

    fn norm_rows(&mut self, x: &Var) -> Var {
        let out = kernels::norm_rows(self.val(x.0));
        self.push(Op::NormRows(x.0), out, &[x.0])
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let out = {
            let mats: Vec<&Matrix> = idx.iter().map(|&i| self.val(i)).collect();
            kernels::concat(&mats)
        };
        self.push(Op::Concat(idx.clone()), out, &idx)
    }

    fn cosine_rows(&mut self, a: &Var, b: &Var, eps: f64) -> Var {
        let out = kernels::cosine_rows(self.val(a.0), self.val(b.0), eps);
        self.push(Op::Cosine { a: a.0, b: b.0, eps }, out, &[a.0, b.0])
    }

    fn sum_all(&mut self, x: &Var) -> Var {
        let out = Matrix::scalar(self.val(x.0).sum());
        self.push(Op::SumAll(x.0), out, &[x.0])
    }

    fn recorded_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.input(Matrix::scalar(3.0));
        let y = t.mul(&x, &x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_output_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.input(Matrix::scalar(3.0));
        let c = t.constant(Matrix::scalar(2.0));
        let y = t.sum_all(&c);
        let g = t.backward(y).unwrap();
        assert!(g.wrt(x).is_none());
        assert_eq!(g.wrt_or_zeros(x, 1, 1).item(), 0.0);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.input(Matrix::zeros(2, 1));
        assert_eq!(t.backward(x).unwrap_err(), AutodiffError::NonScalarOutput(2, 1));
        let s = t.sum_all(&x);
        t.backward(s).unwrap();
        assert_eq!(t.backward(s).unwrap_err(), AutodiffError::AlreadyBackpropagated);
    }

    #[test]
    fn segment_sum_adjoint_is_gather() {
        let mut t = Tape::new();
        let v = t.input(Matrix::column(&[1.0, 2.0, 3.0]));
        let ids: Arc<[usize]> = vec![0, 0, 1].into();
        let s = t.segment_sum(&v, &ids, 2);
        assert_eq!(t.value(&s).as_slice(), &[3.0, 3.0]);
        let w = t.constant(Matrix::column(&[5.0, 7.0]));
        let p = t.mul(&s, &w);
        let out = t.sum_all(&p);
        let g = t.backward(out).unwrap();
        assert_eq!(g.wrt(v).unwrap().as_slice(), &[5.0, 5.0, 7.0]);
    }

    #[test]
    fn inputs_only_tape_skips_params() {
        let mut t = Tape::inputs_only();
        let w = Arc::new(Matrix::scalar(2.0));
        let p = t.param(ParamId(0), &w);
        let x = t.input(Matrix::scalar(3.0));
        let y = t.linear(&x, &p, None);
        let g = t.backward(y).unwrap();
        assert!(g.params.is_empty());
        assert_eq!(g.wrt(x).unwrap().item(), 2.0);
    }
}
