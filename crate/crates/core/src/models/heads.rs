//! Energy readouts and the direct force head.

use rand::Rng;

use super::{Dense, EnergyHeadKind, Prepared};
use crate::autodiff::{Engine, ParamStore};
use crate::matrix::Matrix;

/// Per-atom energies `h_i` from final embeddings, optionally weighted by
/// `α_i = sigmoid(mlp(·)) ∈ (0, 1)`, summed per graph.
#[derive(Debug, Clone)]
pub struct EnergyReadout {
    out1: Dense,
    out2: Dense,
    alpha: Option<(Dense, Dense)>,
}

impl EnergyReadout {
    pub fn new<R: Rng>(kind: EnergyHeadKind, d0: usize, hidden: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let out1 = Dense::new(store, rng, "energy.out1", hidden, hidden, true, false);
        let out2 = Dense::new(store, rng, "energy.out2", hidden, 1, true, true);
        let alpha_in = match kind {
            EnergyHeadKind::GlobalSum => None,
            EnergyHeadKind::WInit => Some(d0),
            EnergyHeadKind::WFinal => Some(hidden),
        };
        let alpha = alpha_in.map(|w| {
            (
                Dense::new(store, rng, "energy.alpha1", w, hidden, true, false),
                Dense::new(store, rng, "energy.alpha2", hidden, 1, true, false),
            )
        });
        Self { out1, out2, alpha }
    }

    pub fn per_atom<E: Engine>(&self, e: &mut E, store: &ParamStore, hl: &E::V) -> E::V {
        let u = self.out1.apply(e, store, hl);
        let u = e.shifted_softplus(&u);
        self.out2.apply(e, store, &u)
    }

    /// Raw (unnormalized) per-graph sums, G×1. `alpha_src` selects the α input;
    /// `None` gives the plain sum.
    pub fn forward<E: Engine>(
        &self,
        e: &mut E,
        store: &ParamStore,
        p: &Prepared,
        hl: &E::V,
        alpha_src: Option<&E::V>,
        alpha_override: Option<f64>,
    ) -> E::V {
        let h = self.per_atom(e, store, hl);
        let weighted = match (alpha_src, &self.alpha, alpha_override) {
            (Some(_), _, Some(a)) => {
                let alpha = e.constant(Matrix::filled(p.num_nodes(), 1, a));
                e.mul(&alpha, &h)
            }
            (Some(x), Some((a1, a2)), None) => {
                let a = a1.apply(e, store, x);
                let a = e.shifted_softplus(&a);
                let a = a2.apply(e, store, &a);
                let alpha = e.sigmoid(&a);
                e.mul(&alpha, &h)
            }
            _ => h,
        };
        e.segment_sum(&weighted, p.batch.node_graph_index(), p.num_graphs())
    }
}

/// Forces from symmetric pair scalars along bond directions:
/// `F_i = Σ_j s_ij (x_i − x_j)/d_ij` with `s_ij = mlp(h_i + h_j, e_RBF(d_ij))`.
#[derive(Debug, Clone)]
pub struct DirectForceHead {
    l1: Dense,
    l2: Dense,
}

impl DirectForceHead {
    pub fn new<R: Rng>(hidden: usize, rbf_count: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        Self {
            l1: Dense::new(store, rng, "force.l1", hidden + rbf_count, hidden, true, false),
            l2: Dense::new(store, rng, "force.l2", hidden, 1, true, true),
        }
    }

    /// Pair scalars, one per directed edge.
    pub fn pair_scalars<E: Engine>(&self, e: &mut E, store: &ParamStore, p: &Prepared, hl: &E::V, rbf: &E::V) -> E::V {
        let hs = e.gather_rows(hl, p.batch.src());
        let hd = e.gather_rows(hl, p.batch.dst());
        let sym = e.add(&hs, &hd);
        let cat = e.concat_cols(&[sym, rbf.clone()]);
        let s = self.l1.apply(e, store, &cat);
        let s = e.shifted_softplus(&s);
        self.l2.apply(e, store, &s)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<E: Engine>(
        &self,
        e: &mut E,
        store: &ParamStore,
        p: &Prepared,
        hl: &E::V,
        vec: &E::V,
        d: &E::V,
        rbf: &E::V,
    ) -> E::V {
        let s = self.pair_scalars(e, store, p, hl, rbf);
        let coef = e.div(&s, d);
        // the edge vector points src→dst, so x_src − x_dst is its negation
        let coef = e.scale(&coef, -1.0);
        let contrib = e.scale_rows(vec, &coef);
        e.segment_sum(&contrib, p.batch.src(), p.num_nodes())
    }
}
