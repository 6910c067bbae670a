//! Directional message passing over edge messages with a cosine-power angular
//! basis.

use std::sync::Arc;

use rand::Rng;

use super::{BackboneConfig, Dense, Prepared};
use crate::autodiff::{Engine, ParamStore};
use crate::types::Batch;

/// Pairs of edges `(k→j, j→i)` sharing the middle node `j`, excluding the
/// exact reverse of the outgoing edge. Stored in batch edge numbering and
/// sorted by outgoing edge, then incoming edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Wedges {
    pub incoming: Arc<[usize]>,
    pub outgoing: Arc<[usize]>,
}

impl Wedges {
    pub fn len(&self) -> usize {
        self.outgoing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outgoing.is_empty()
    }
}

pub fn enumerate_wedges(batch: &Batch) -> Wedges {
    let src = batch.src();
    let dst = batch.dst();
    let offsets = batch.edge_offsets_per_edge();
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); batch.num_nodes()];
    for (k, &d) in dst.iter().enumerate() {
        into[d].push(k);
    }
    let mut incoming = Vec::new();
    let mut outgoing = Vec::new();
    for e in 0..src.len() {
        let (j, i, o) = (src[e], dst[e], offsets[e]);
        let reverse = [-o[0], -o[1], -o[2]];
        for &k in &into[j] {
            if src[k] == i && offsets[k] == reverse {
                continue;
            }
            incoming.push(k);
            outgoing.push(e);
        }
    }
    Wedges {
        incoming: incoming.into(),
        outgoing: outgoing.into(),
    }
}

#[derive(Debug, Clone)]
struct Interaction {
    radial: Dense,
    message: Dense,
    angular: Dense,
    update: Dense,
}

/// Edge messages initialised from both endpoints and the radial basis, then
/// refined by aggregating over wedges:
/// `m_ji ← m_ji + σ(U[(Σ_k σ(M m_kj) ⊙ A a(θ_kji)) ⊙ R e_RBF(d_ji)])`
/// with `a(θ) = [cos^p θ]_{p<P}`. Node embeddings are the sum of incoming
/// messages passed through one more dense layer, added to the projected input.
#[derive(Debug, Clone)]
pub struct DimeLite {
    init: Dense,
    layers: Vec<Interaction>,
    readout: Dense,
    angular_count: usize,
}

impl DimeLite {
    pub fn new<R: Rng>(cfg: &BackboneConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let init = Dense::new(store, rng, "dime.init", 2 * h + cfg.rbf_count, h, true, false);
        let layers = (0..cfg.layers)
            .map(|l| {
                let name = |part: &str| format!("dime.{l}.{part}");
                Interaction {
                    radial: Dense::new(store, rng, &name("radial"), cfg.rbf_count, h, false, false),
                    message: Dense::new(store, rng, &name("message"), h, h, true, false),
                    angular: Dense::new(store, rng, &name("angular"), cfg.angular_count, h, false, false),
                    update: Dense::new(store, rng, &name("update"), h, h, true, false),
                }
            })
            .collect();
        let readout = Dense::new(store, rng, "dime.readout", h, h, true, false);
        Self {
            init,
            layers,
            readout,
            angular_count: cfg.angular_count,
        }
    }

    pub fn forward<E: Engine>(
        &self,
        e: &mut E,
        store: &ParamStore,
        p: &Prepared,
        x0: &E::V,
        vec: &E::V,
        rbf: &E::V,
    ) -> E::V {
        let wedges = p.wedges.as_ref().expect("dimelite needs wedges in the prepared batch");
        let src = p.batch.src();
        let dst = p.batch.dst();
        let n_edges = p.batch.num_edges();

        let xs = e.gather_rows(x0, src);
        let xd = e.gather_rows(x0, dst);
        let cat = e.concat_cols(&[xs, xd, rbf.clone()]);
        let m0 = self.init.apply(e, store, &cat);
        let mut m = e.shifted_softplus(&m0);

        // angle at j between j→k and j→i
        let v_in = e.gather_rows(vec, &wedges.incoming);
        let back = e.scale(&v_in, -1.0);
        let v_out = e.gather_rows(vec, &wedges.outgoing);
        let cos = e.cosine_rows(&back, &v_out, 1e-12);
        let ang = e.power_basis(&cos, self.angular_count);

        for layer in &self.layers {
            let gate = layer.radial.apply(e, store, rbf);
            let t = layer.message.apply(e, store, &m);
            let t = e.shifted_softplus(&t);
            let tk = e.gather_rows(&t, &wedges.incoming);
            let aw = layer.angular.apply(e, store, &ang);
            let w = e.mul(&tk, &aw);
            let agg = e.segment_sum(&w, &wedges.outgoing, n_edges);
            let gated = e.mul(&agg, &gate);
            let u = layer.update.apply(e, store, &gated);
            let u = e.shifted_softplus(&u);
            m = e.add(&m, &u);
        }
        let node = e.segment_sum(&m, dst, p.num_nodes());
        let r = self.readout.apply(e, store, &node);
        let r = e.shifted_softplus(&r);
        e.add(x0, &r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AtomicSystem, Edge, Graph};

    #[test]
    fn wedges_skip_reverse_edge() {
        let s = AtomicSystem::new(
            "p",
            vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![6; 3],
            vec![1; 3],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [false; 3],
        );
        let edges = vec![
            Edge {
                src: 0,
                dst: 1,
                offset: [0; 3],
            },
            Edge {
                src: 1,
                dst: 0,
                offset: [0; 3],
            },
            Edge {
                src: 1,
                dst: 2,
                offset: [0; 3],
            },
            Edge {
                src: 2,
                dst: 1,
                offset: [0; 3],
            },
        ];
        let g = Graph::from_edges(&s, edges);
        let b = Batch::single(s, g).unwrap();
        let w = enumerate_wedges(&b);
        let pairs: Vec<_> = w
            .incoming
            .iter()
            .zip(w.outgoing.iter())
            .map(|(a, b)| (*a, *b))
            .collect();
        // 0→1 feeds 1→2 and 2→1 feeds 1→0
        assert_eq!(pairs, vec![(3, 1), (0, 2)]);
    }
}
