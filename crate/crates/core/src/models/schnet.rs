//! Continuous-filter convolution backbone.

use rand::Rng;

use super::{BackboneConfig, Dense, Prepared};
use crate::autodiff::{Engine, ParamStore};

#[derive(Debug, Clone)]
struct Interaction {
    filter1: Dense,
    filter2: Dense,
    in2f: Dense,
    update1: Dense,
    update2: Dense,
}

/// `h ← h + U(Σ_j W(e_RBF(d_ij)) ⊙ V h_j)` repeated `layers` times, where the
/// filter `W` and the update `U` are two-layer maps with shifted softplus.
#[derive(Debug, Clone)]
pub struct SchnetLite {
    layers: Vec<Interaction>,
}

impl SchnetLite {
    pub fn new<R: Rng>(cfg: &BackboneConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|l| {
                let name = |part: &str| format!("schnet.{l}.{part}");
                Interaction {
                    filter1: Dense::new(store, rng, &name("filter1"), cfg.rbf_count, h, true, false),
                    filter2: Dense::new(store, rng, &name("filter2"), h, h, true, false),
                    in2f: Dense::new(store, rng, &name("in2f"), h, h, false, false),
                    update1: Dense::new(store, rng, &name("update1"), h, h, true, false),
                    update2: Dense::new(store, rng, &name("update2"), h, h, true, false),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn forward<E: Engine>(&self, e: &mut E, store: &ParamStore, p: &Prepared, x0: &E::V, rbf: &E::V) -> E::V {
        let n = p.num_nodes();
        let src = p.batch.src();
        let dst = p.batch.dst();
        let mut h = x0.clone();
        for layer in &self.layers {
            let f1 = layer.filter1.apply(e, store, rbf);
            let f1 = e.shifted_softplus(&f1);
            let filter = layer.filter2.apply(e, store, &f1);
            let x = layer.in2f.apply(e, store, &h);
            let xj = e.gather_rows(&x, src);
            let msg = e.mul(&filter, &xj);
            let agg = e.segment_sum(&msg, dst, n);
            let u = layer.update1.apply(e, store, &agg);
            let u = e.shifted_softplus(&u);
            let u = layer.update2.apply(e, store, &u);
            h = e.add(&h, &u);
        }
        h
    }
}
