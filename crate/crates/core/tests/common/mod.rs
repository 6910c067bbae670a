//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use catgraph::data::{derive_oracle_params, generate_split, GeneratorConfig, Split};
use catgraph::geom::{self, Mat3, Vec3};
use catgraph::types::{AtomicSystem, Edge, Graph};
use catgraph::ElementTable;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A skewed cell with random pbc flags and up to `max_atoms` atoms placed at
/// fractional coordinates in `[-0.2, 1.2)`, so some sit outside the home cell.
pub fn random_system(rng: &mut ChaCha8Rng, max_atoms: usize) -> AtomicSystem {
    let n = rng.random_range(1..=max_atoms);
    let mut cell = [[0.0; 3]; 3];
    for (k, row) in cell.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == k {
                rng.random_range(3.0..8.0)
            } else {
                rng.random_range(-1.5..1.5)
            };
        }
    }
    let pbc = [rng.random_bool(0.7), rng.random_bool(0.7), rng.random_bool(0.5)];
    let positions = (0..n)
        .map(|_| {
            let f: Vec3 = [0, 1, 2].map(|_| rng.random_range(-0.2..1.2));
            geom::vec_mat(f, &cell)
        })
        .collect();
    let numbers = (0..n).map(|_| [1, 6, 8, 29, 78][rng.random_range(0..5)]).collect();
    let tags = (0..n).map(|_| rng.random_range(0..3u8)).collect();
    AtomicSystem::new("rand", positions, numbers, tags, cell, pbc)
}

/// Every `(i, j, offset)` within `cutoff` by plain enumeration over a box of
/// offsets far larger than needed.
pub fn brute_force_graph(system: &AtomicSystem, cutoff: f64) -> Graph {
    let c = &system.cell;
    let volume = geom::det(c).abs();
    let mut bounds = [0i32; 3];
    for k in 0..3 {
        if system.pbc[k] {
            let (a, b) = (c[(k + 1) % 3], c[(k + 2) % 3]);
            let height = volume / geom::norm(geom::cross(a, b));
            bounds[k] = (cutoff / height).ceil() as i32 + 3;
        }
    }
    let mut edges = Vec::new();
    for i in 0..system.num_atoms() {
        for j in 0..system.num_atoms() {
            for a in -bounds[0]..=bounds[0] {
                for b in -bounds[1]..=bounds[1] {
                    for cz in -bounds[2]..=bounds[2] {
                        let offset = [a, b, cz];
                        let shift = [0, 1, 2].map(|x| a as f64 * c[0][x] + b as f64 * c[1][x] + cz as f64 * c[2][x]);
                        let v = [0, 1, 2].map(|x| system.positions[j][x] + shift[x] - system.positions[i][x]);
                        let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        if d > 0.0 && d <= cutoff {
                            edges.push(Edge { src: i, dst: j, offset });
                        }
                    }
                }
            }
        }
    }
    edges.sort();
    Graph::from_edges(system, edges)
}

/// Random orthogonal matrix (a reflection half of the time) and translation.
pub fn random_transform(rng: &mut ChaCha8Rng) -> (Mat3, Vec3) {
    let q = [0, 1, 2, 3].map(|_| rng.random_range(-1.0..1.0));
    let mut r = geom::rotation_from_quaternion(q);
    if rng.random_bool(0.5) {
        for row in &mut r {
            row[0] = -row[0];
        }
    }
    let t = [0, 1, 2].map(|_| rng.random_range(-5.0..5.0));
    (r, t)
}

/// Applies `x → R x + t` to positions and `R` to the cell and any forces.
pub fn transform_system(system: &AtomicSystem, r: &Mat3, t: Vec3) -> AtomicSystem {
    let mut out = system.clone();
    for p in &mut out.positions {
        *p = geom::add(geom::rotate(*p, r), t);
    }
    for row in &mut out.cell {
        *row = geom::rotate(*row, r);
    }
    if let Some(f) = out.forces.as_mut() {
        for v in f {
            *v = geom::rotate(*v, r);
        }
    }
    out
}

pub fn generated(n_train: usize, split: Split) -> Vec<AtomicSystem> {
    let table = ElementTable::bundled();
    let cfg = GeneratorConfig {
        n_train,
        n_val: n_train,
        ..Default::default()
    };
    let oracle = derive_oracle_params(&table, &cfg.elements()).unwrap();
    generate_split(&cfg, &oracle, split).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Node-count identities and edge bookkeeping of every rewiring strategy on
/// one system, checked against independent counts.
pub fn check_rewiring(system: &AtomicSystem, build: &catgraph::GraphBuildConfig) -> Result<(), String> {
    use catgraph::rewire::{apply_to_graph, prepare, remove_tag0_with_graph, RewireStrategy};
    use std::collections::BTreeSet;

    let n = system.num_atoms();
    let s: Vec<usize> = (0..n).filter(|&i| system.tags[i] == 0).collect();
    if s.is_empty() || s.len() == n {
        return Ok(());
    }
    let full = catgraph::build_radius_graph(system, build).map_err(|e| e.to_string())?;
    let elements: BTreeSet<u32> = s.iter().map(|&i| system.atomic_numbers[i]).collect();

    let (a, ga) = prepare(system, RewireStrategy::RemoveTag0, build).map_err(|e| e.to_string())?;
    if a.num_atoms() != n - s.len() {
        return Err(format!(
            "remove_tag0 left {} of {n} atoms with |S| = {}",
            a.num_atoms(),
            s.len()
        ));
    }
    let (_, gb) = remove_tag0_with_graph(system, &full).map_err(|e| e.to_string())?;
    if ga != gb {
        return Err("remove_tag0: filter-then-build differs from build-then-filter".into());
    }
    let kept_edges = full
        .edges
        .iter()
        .filter(|e| system.tags[e.src] != 0 && system.tags[e.dst] != 0)
        .count();
    if ga.num_edges() != kept_edges {
        return Err(format!(
            "remove_tag0 kept {} edges, expected {kept_edges}",
            ga.num_edges()
        ));
    }

    let (sg, gg) = apply_to_graph(system, &full, RewireStrategy::SupernodePerGraph).map_err(|e| e.to_string())?;
    if sg.num_atoms() != n - s.len() + 1 {
        return Err(format!("supernode_per_graph has {} nodes", sg.num_atoms()));
    }
    let sn = sg.num_atoms() - 1;
    if sg.supernode_cardinality(sn) != Some(s.len() as u32) {
        return Err("supernode_per_graph cardinality".into());
    }
    if gg.edges.iter().any(|e| e.src == e.dst && e.offset == [0; 3]) {
        return Err("supernode self loop".into());
    }
    // regular atoms adjacent to any member of S, by index after renumbering
    let touching: BTreeSet<usize> = full
        .edges
        .iter()
        .filter(|e| system.tags[e.src] != 0 && system.tags[e.dst] == 0)
        .map(|e| (0..e.src).filter(|&i| system.tags[i] != 0).count())
        .collect();
    let into_sn: BTreeSet<usize> = gg.edges.iter().filter(|e| e.dst == sn).map(|e| e.src).collect();
    if touching != into_sn {
        return Err("supernode_per_graph adjacency is not the boolean max".into());
    }

    let (st, gt) = apply_to_graph(system, &full, RewireStrategy::SupernodePerAtomType).map_err(|e| e.to_string())?;
    let k = elements.len();
    if st.num_atoms() != n - s.len() + k {
        return Err(format!(
            "supernode_per_atom_type has {} nodes for {k} elements",
            st.num_atoms()
        ));
    }
    let base = n - s.len();
    let inter = gt.edges.iter().filter(|e| e.src >= base && e.dst >= base).count();
    if inter != k * (k - 1) {
        return Err(format!("{inter} inter-supernode edges for {k} supernodes"));
    }
    let total: u32 = (base..st.num_atoms())
        .map(|i| st.supernode_cardinality(i).unwrap_or(0))
        .sum();
    if total as usize != s.len() {
        return Err("per-type cardinalities do not add up to |S|".into());
    }
    Ok(())
}

/// Generated samples reduced with `remove_tag0`: small enough for exhaustive
/// model checks while keeping a realistic surface and adsorbate.
pub fn small_samples(n: usize, split: Split) -> Vec<(AtomicSystem, Graph)> {
    let build = catgraph::GraphBuildConfig::default();
    generated(n, split)
        .iter()
        .map(|s| catgraph::rewire::prepare(s, catgraph::RewireStrategy::RemoveTag0, &build).unwrap())
        .collect()
}

pub fn model_config(
    kind: catgraph::models::BackboneKind,
    energy_head: catgraph::models::EnergyHeadKind,
    force_head: catgraph::models::ForceHeadKind,
) -> catgraph::models::ModelConfig {
    let mut c = catgraph::models::ModelConfig::default();
    c.backbone.kind = kind;
    c.heads.energy_head = energy_head;
    c.heads.force_head = force_head;
    c.embeddings = catgraph::embed::EmbeddingConfig::variant("all").unwrap();
    c
}

/// A model with every parameter non-zero, so zero-initialized readouts do
/// not make checks vacuous.
pub fn busy_model(config: catgraph::models::ModelConfig, seed: u64) -> catgraph::models::Model {
    let mut m = catgraph::models::Model::new(config, &ElementTable::bundled(), seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let mut v = (**m.store.value(id)).clone();
        for x in v.as_mut_slice().iter_mut().filter(|x| **x == 0.0) {
            *x = r.random_range(-0.3..0.3);
        }
        m.store.set_value(id, v);
    }
    m
}

pub fn prepare(model: &catgraph::models::Model, samples: &[(AtomicSystem, Graph)]) -> catgraph::models::Prepared {
    let (s, g): (Vec<_>, Vec<_>) = samples.iter().cloned().unzip();
    model.prepare(catgraph::make_batch(s, g).unwrap()).unwrap()
}

pub const BACKBONES: [catgraph::models::BackboneKind; 2] = [
    catgraph::models::BackboneKind::SchnetLite,
    catgraph::models::BackboneKind::Dimelite,
];
pub const ENERGY_HEADS: [catgraph::models::EnergyHeadKind; 3] = [
    catgraph::models::EnergyHeadKind::GlobalSum,
    catgraph::models::EnergyHeadKind::WInit,
    catgraph::models::EnergyHeadKind::WFinal,
];
