use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Arc<Matrix>,
    pub grad: Matrix,
}

/// Gradients keyed by parameter, as produced by one backward pass.
pub type ParamGrads = BTreeMap<ParamId, Matrix>;

/// Ordered collection of named parameters. Registration order is stable and
/// defines the checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "parameter {name} registered twice"
        );
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Registers a `rows×cols` parameter drawn uniformly from `±bound`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                }
            })
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Arc<Matrix> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Matrix) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.shape(), value.shape(), "parameter {} shape change", p.name);
        p.value = Arc::new(value);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in grads {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn grad_max_abs(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.grad.max_abs()))
    }

    pub fn values_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Mutable access to every (value, grad) pair; values are copied on write
    /// if shared with a live recording.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix, &Matrix)) {
        for p in &mut self.params {
            let value = Arc::make_mut(&mut p.value);
            f(&p.name, value, &p.grad);
        }
    }
}

/// Sums `b` into `a`, in key order.
pub fn merge_grads(a: &mut ParamGrads, b: ParamGrads) {
    for (id, g) in b {
        match a.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                a.insert(id, g);
            }
        }
    }
}
