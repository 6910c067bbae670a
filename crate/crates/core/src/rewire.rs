//! Tag-based graph rewiring: dropping sub-surface atoms or collapsing them into
//! supernodes, plus node/edge reduction accounting.
//!
//! All strategies take a (system, graph) pair and return a fresh pair. Node
//! indices of surviving atoms are remapped densely in their original order and
//! supernodes are appended after them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec3};
use crate::graph::{build_radius_graph, GraphBuildConfig, GraphError};
use crate::types::{AtomicSystem, Edge, Graph, SupernodeInfo, SUPERNODE_Z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewireStrategy {
    #[default]
    None,
    #[serde(alias = "remove-tag0", alias = "remove_tag_0")]
    RemoveTag0,
    #[serde(alias = "supernode-per-graph", alias = "sn_graph")]
    SupernodePerGraph,
    #[serde(alias = "supernode-per-atom-type", alias = "sn_atom_type")]
    SupernodePerAtomType,
}

impl RewireStrategy {
    pub const ALL: [RewireStrategy; 4] = [
        RewireStrategy::None,
        RewireStrategy::RemoveTag0,
        RewireStrategy::SupernodePerGraph,
        RewireStrategy::SupernodePerAtomType,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RewireStrategy::None => "none",
            RewireStrategy::RemoveTag0 => "remove_tag0",
            RewireStrategy::SupernodePerGraph => "supernode_per_graph",
            RewireStrategy::SupernodePerAtomType => "supernode_per_atom_type",
        }
    }

    pub fn creates_supernodes(&self) -> bool {
        matches!(
            self,
            RewireStrategy::SupernodePerGraph | RewireStrategy::SupernodePerAtomType
        )
    }
}

impl fmt::Display for RewireStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewireStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "none" => Ok(RewireStrategy::None),
            "remove_tag0" | "remove_tag_0" => Ok(RewireStrategy::RemoveTag0),
            "supernode_per_graph" | "sn_graph" => Ok(RewireStrategy::SupernodePerGraph),
            "supernode_per_atom_type" | "sn_atom_type" => Ok(RewireStrategy::SupernodePerAtomType),
            _ => Err(format!("unknown rewiring strategy {s:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewireError {
    #[error("sample {0}: every atom has tag 0, nothing would remain")]
    AllTag0(String),
    #[error("sample {0}: no tag-0 atoms, supernode strategy inapplicable")]
    NoTag0(String),
    #[error("cardinality encoding needs an even dimension >= 2, got {0}")]
    BadEncodingDim(usize),
    #[error("cardinality must be positive")]
    ZeroCardinality,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Keeps the atoms where `keep[i]` is true, carrying every per-atom field and
/// supernode entry along.
fn filter_system(system: &AtomicSystem, keep: &[bool]) -> AtomicSystem {
    let remap = dense_remap(keep);
    let pick = |i: &usize| keep[*i];
    let idx: Vec<usize> = (0..system.num_atoms()).filter(pick).collect();
    AtomicSystem {
        sample_id: system.sample_id.clone(),
        positions: idx.iter().map(|&i| system.positions[i]).collect(),
        atomic_numbers: idx.iter().map(|&i| system.atomic_numbers[i]).collect(),
        tags: idx.iter().map(|&i| system.tags[i]).collect(),
        cell: system.cell,
        pbc: system.pbc,
        energy: system.energy,
        forces: system.forces.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
        supernodes: system
            .supernodes
            .iter()
            .filter_map(|(i, info)| remap[*i].map(|j| (j, info.clone())))
            .collect(),
    }
}

fn dense_remap(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Drops every tag-0 atom. Systems without tag-0 atoms come back unchanged.
pub fn remove_tag0(system: &AtomicSystem) -> Result<AtomicSystem, RewireError> {
    let keep: Vec<bool> = system.tags.iter().map(|&t| t != 0).collect();
    if keep.iter().all(|&k| k) {
        return Ok(system.clone());
    }
    if !keep.iter().any(|&k| k) {
        return Err(RewireError::AllTag0(system.sample_id.clone()));
    }
    Ok(filter_system(system, &keep))
}

/// Restricts `graph` to the kept nodes, dropping every edge that touches a
/// removed node and renumbering the rest.
pub fn filter_graph(graph: &Graph, keep: &[bool]) -> Graph {
    let remap = dense_remap(keep);
    let mut out = Graph {
        num_nodes: keep.iter().filter(|&&k| k).count(),
        ..Graph::default()
    };
    for (e, &d) in graph.edges.iter().zip(&graph.distances) {
        if let (Some(src), Some(dst)) = (remap[e.src], remap[e.dst]) {
            out.edges.push(Edge {
                src,
                dst,
                offset: e.offset,
            });
            out.distances.push(d);
        }
    }
    out
}

/// `remove_tag0` applied to an existing (system, graph) pair by filtering the
/// graph instead of rebuilding it.
pub fn remove_tag0_with_graph(system: &AtomicSystem, graph: &Graph) -> Result<(AtomicSystem, Graph), RewireError> {
    let keep: Vec<bool> = system.tags.iter().map(|&t| t != 0).collect();
    let filtered = remove_tag0(system)?;
    Ok((filtered, filter_graph(graph, &keep)))
}

fn mean_position(system: &AtomicSystem, members: &[usize]) -> Vec3 {
    let mut acc = [0.0; 3];
    for &i in members {
        acc = geom::add(acc, system.positions[i]);
    }
    geom::scale(acc, 1.0 / members.len() as f64)
}

fn composition(system: &AtomicSystem, members: &[usize]) -> Vec<(u32, u32)> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for &i in members {
        *counts.entry(system.atomic_numbers[i]).or_default() += 1;
    }
    counts.into_iter().collect()
}

/// Collapses the tag-0 atoms into the given groups, one supernode each.
fn collapse(system: &AtomicSystem, graph: &Graph, groups: Vec<(u32, Vec<usize>)>) -> (AtomicSystem, Graph) {
    let n = system.num_atoms();
    let keep: Vec<bool> = system.tags.iter().map(|&t| t != 0).collect();
    let remap = dense_remap(&keep);
    let mut out = filter_system(system, &keep);
    let base = out.num_atoms();

    // group membership of each original atom
    let mut group_of = vec![None; n];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &i in members {
            group_of[i] = Some(g);
        }
    }
    for (g, (z, members)) in groups.iter().enumerate() {
        out.positions.push(mean_position(system, members));
        out.atomic_numbers.push(*z);
        out.tags.push(0);
        if let Some(f) = out.forces.as_mut() {
            f.push([0.0; 3]);
        }
        out.supernodes.insert(
            base + g,
            SupernodeInfo {
                cardinality: members.len() as u32,
                members: composition(system, members),
            },
        );
    }

    // boolean max over each group: (regular -> supernode) and (supernode -> regular)
    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    for e in &graph.edges {
        match (remap[e.src], remap[e.dst], group_of[e.src], group_of[e.dst]) {
            (Some(src), Some(dst), _, _) => {
                edges.insert(Edge {
                    src,
                    dst,
                    offset: e.offset,
                });
            }
            (Some(src), None, _, Some(g)) => {
                edges.insert(Edge {
                    src,
                    dst: base + g,
                    offset: [0; 3],
                });
            }
            (None, Some(dst), Some(g), _) => {
                edges.insert(Edge {
                    src: base + g,
                    dst,
                    offset: [0; 3],
                });
            }
            _ => {}
        }
    }
    for a in 0..groups.len() {
        for b in 0..groups.len() {
            if a != b {
                edges.insert(Edge {
                    src: base + a,
                    dst: base + b,
                    offset: [0; 3],
                });
            }
        }
    }
    let graph = Graph::from_edges(&out, edges.into_iter().collect());
    (out, graph)
}

fn tag0_indices(system: &AtomicSystem) -> Result<Vec<usize>, RewireError> {
    let s: Vec<usize> = (0..system.num_atoms()).filter(|&i| system.tags[i] == 0).collect();
    if s.is_empty() {
        return Err(RewireError::NoTag0(system.sample_id.clone()));
    }
    Ok(s)
}

/// Replaces all tag-0 atoms by one node (atomic code 119) at their mean position.
pub fn supernode_per_graph(system: &AtomicSystem, graph: &Graph) -> Result<(AtomicSystem, Graph), RewireError> {
    let s = tag0_indices(system)?;
    Ok(collapse(system, graph, vec![(SUPERNODE_Z, s)]))
}

/// One supernode per distinct tag-0 element (ascending atomic number), each
/// keeping its element's atomic number; supernodes are mutually connected.
pub fn supernode_per_atom_type(system: &AtomicSystem, graph: &Graph) -> Result<(AtomicSystem, Graph), RewireError> {
    let s = tag0_indices(system)?;
    let mut by_z: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in s {
        by_z.entry(system.atomic_numbers[i]).or_default().push(i);
    }
    Ok(collapse(system, graph, by_z.into_iter().collect()))
}

/// Sinusoidal encoding of a supernode's cardinality.
pub fn cardinality_encoding(cardinality: u32, dim: usize) -> Result<Vec<f64>, RewireError> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(RewireError::BadEncodingDim(dim));
    }
    if cardinality == 0 {
        return Err(RewireError::ZeroCardinality);
    }
    let c = cardinality as f64;
    let mut out = Vec::with_capacity(dim);
    for m in 0..dim / 2 {
        let angle = c / 10000f64.powf(2.0 * m as f64 / dim as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Applies `strategy` to a raw system and produces the graph the models see.
///
/// `RemoveTag0` filters first and builds the (much smaller) graph directly;
/// the supernode strategies need the full graph for their adjacency. Systems
/// without tag-0 atoms fall back to the unchanged graph.
pub fn prepare(
    system: &AtomicSystem,
    strategy: RewireStrategy,
    build: &GraphBuildConfig,
) -> Result<(AtomicSystem, Graph), RewireError> {
    match strategy {
        RewireStrategy::None => Ok((system.clone(), build_radius_graph(system, build)?)),
        RewireStrategy::RemoveTag0 => {
            let filtered = remove_tag0(system)?;
            let graph = build_radius_graph(&filtered, build)?;
            Ok((filtered, graph))
        }
        RewireStrategy::SupernodePerGraph | RewireStrategy::SupernodePerAtomType => {
            let graph = build_radius_graph(system, build)?;
            if system.count_tag(0) == 0 {
                return Ok((system.clone(), graph));
            }
            apply_to_graph(system, &graph, strategy)
        }
    }
}

/// Applies `strategy` to an existing (system, graph) pair.
pub fn apply_to_graph(
    system: &AtomicSystem,
    graph: &Graph,
    strategy: RewireStrategy,
) -> Result<(AtomicSystem, Graph), RewireError> {
    match strategy {
        RewireStrategy::None => Ok((system.clone(), graph.clone())),
        RewireStrategy::RemoveTag0 => remove_tag0_with_graph(system, graph),
        RewireStrategy::SupernodePerGraph => supernode_per_graph(system, graph),
        RewireStrategy::SupernodePerAtomType => supernode_per_atom_type(system, graph),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReduction {
    pub sample_id: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewiringStats {
    pub atoms_remaining_pct: f64,
    pub edges_remaining_pct: f64,
    pub per_sample: Vec<SampleReduction>,
}

impl RewiringStats {
    /// Writes `sample_id,nodes_before,nodes_after,edges_before,edges_after`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.per_sample {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Node and edge counts remaining after `strategy`, relative to full graphs.
/// Percentages are ratios of dataset totals.
pub fn rewiring_stats(
    dataset: &[AtomicSystem],
    strategy: RewireStrategy,
    build: &GraphBuildConfig,
) -> Result<RewiringStats, RewireError> {
    let per_sample: Vec<SampleReduction> = dataset
        .par_iter()
        .map(|s| {
            let full = build_radius_graph(s, build)?;
            let (after_sys, after_graph) = prepare(s, strategy, build)?;
            Ok(SampleReduction {
                sample_id: s.sample_id.clone(),
                nodes_before: s.num_atoms(),
                nodes_after: after_sys.num_atoms(),
                edges_before: full.num_edges(),
                edges_after: after_graph.num_edges(),
            })
        })
        .collect::<Result<_, RewireError>>()?;
    let sum = |f: fn(&SampleReduction) -> usize| per_sample.iter().map(f).sum::<usize>() as f64;
    let pct = |after: f64, before: f64| if before > 0.0 { 100.0 * after / before } else { 100.0 };
    Ok(RewiringStats {
        atoms_remaining_pct: pct(sum(|r| r.nodes_after), sum(|r| r.nodes_before)),
        edges_remaining_pct: pct(sum(|r| r.edges_after), sum(|r| r.edges_before)),
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab_like() -> AtomicSystem {
        let mut s = AtomicSystem::new(
            "s",
            vec![[0.0, 0.0, 4.0], [1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![8, 78, 78, 78],
            vec![2, 1, 0, 0],
            [[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 30.0]],
            [true, true, false],
        );
        s.forces = Some(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        s
    }

    #[test]
    fn remove_tag0_filters_fields() {
        let s = slab_like();
        let r = remove_tag0(&s).unwrap();
        assert_eq!(r.num_atoms(), 2);
        assert_eq!(r.tags, vec![2, 1]);
        assert_eq!(r.positions, s.positions[..2].to_vec());
        assert_eq!(r.forces.unwrap(), vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    }

    #[test]
    fn remove_tag0_identity_and_idempotent() {
        let s = remove_tag0(&slab_like()).unwrap();
        assert_eq!(remove_tag0(&s).unwrap(), s);
    }

    #[test]
    fn all_tag0_is_an_error() {
        let mut s = slab_like();
        s.tags = vec![0; 4];
        assert!(matches!(remove_tag0(&s), Err(RewireError::AllTag0(_))));
    }

    #[test]
    fn single_tag0_supernode() {
        let mut s = slab_like();
        s.tags = vec![2, 1, 1, 0];
        s.positions[3] = [1.0, 2.0, 3.0];
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let (r, _) = supernode_per_graph(&s, &g).unwrap();
        assert_eq!(*r.positions.last().unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(r.supernode_cardinality(3), Some(1));
        assert_eq!(*r.atomic_numbers.last().unwrap(), SUPERNODE_Z);
        assert_eq!(*r.tags.last().unwrap(), 0);
    }

    #[test]
    fn supernode_mean_position() {
        let s = AtomicSystem::new(
            "m",
            vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [1.0, 1.0, 2.0]],
            vec![78, 78, 78, 8],
            vec![0, 0, 0, 2],
            [[100.0, 0.0, 0.0], [0.0, 100.0, 0.0], [0.0, 0.0, 100.0]],
            [false; 3],
        );
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let (r, rg) = supernode_per_graph(&s, &g).unwrap();
        // independent summation
        let xs: f64 = [0.0, 3.0, 0.0].iter().sum::<f64>() / 3.0;
        let ys: f64 = [0.0, 0.0, 3.0].iter().sum::<f64>() / 3.0;
        assert_eq!(r.positions[1], [xs, ys, 0.0]);
        assert_eq!(r.positions[1], [1.0, 1.0, 0.0]);
        // the tag-2 atom connected to three tag-0 atoms gets exactly one edge each way
        let to_s = rg.edges.iter().filter(|e| e.src == 0 && e.dst == 1).count();
        let from_s = rg.edges.iter().filter(|e| e.src == 1 && e.dst == 0).count();
        assert_eq!((to_s, from_s), (1, 1));
        assert!(rg.edges.iter().all(|e| e.src != e.dst));
        rg.check_against(&r).unwrap();
    }

    #[test]
    fn per_atom_type_two_elements() {
        let mut s = slab_like();
        s.atomic_numbers = vec![8, 78, 13, 78];
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let (r, rg) = supernode_per_atom_type(&s, &g).unwrap();
        assert_eq!(r.num_atoms(), 4);
        assert_eq!(&r.atomic_numbers[2..], &[13, 78]);
        let ss = rg.edges.iter().filter(|e| e.src >= 2 && e.dst >= 2).count();
        assert_eq!(ss, 2);
    }

    #[test]
    fn single_type_matches_per_graph() {
        let s = slab_like();
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let (a, ag) = supernode_per_graph(&s, &g).unwrap();
        let (b, bg) = supernode_per_atom_type(&s, &g).unwrap();
        assert_eq!(ag, bg);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.atomic_numbers[2], SUPERNODE_Z);
        assert_eq!(b.atomic_numbers[2], 78);
    }

    #[test]
    fn supernode_strategy_needs_tag0() {
        let s = remove_tag0(&slab_like()).unwrap();
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        assert!(matches!(supernode_per_graph(&s, &g), Err(RewireError::NoTag0(_))));
    }

    #[test]
    fn encoding_formula() {
        let e = cardinality_encoding(1, 4).unwrap();
        let w = 10000f64.powf(-0.5);
        assert_eq!(e, vec![1f64.sin(), 1f64.cos(), w.sin(), w.cos()]);
        assert_eq!(cardinality_encoding(7, 8).unwrap(), cardinality_encoding(7, 8).unwrap());
        assert_eq!(cardinality_encoding(1, 3), Err(RewireError::BadEncodingDim(3)));
        assert_eq!(cardinality_encoding(1, 0), Err(RewireError::BadEncodingDim(0)));
        assert_eq!(cardinality_encoding(0, 4), Err(RewireError::ZeroCardinality));
    }

    #[test]
    fn encoding_injective_on_range() {
        let mut seen: Vec<Vec<f64>> = (1..=10_000).map(|c| cardinality_encoding(c, 4).unwrap()).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in seen.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn stats_without_tag0_are_full() {
        let s = remove_tag0(&slab_like()).unwrap();
        let st = rewiring_stats(&[s], RewireStrategy::RemoveTag0, &GraphBuildConfig::default()).unwrap();
        assert_eq!(st.atoms_remaining_pct, 100.0);
        assert_eq!(st.edges_remaining_pct, 100.0);
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample_id,nodes_before,nodes_after,edges_before,edges_after\n"));
    }

    #[test]
    fn strategy_names_parse() {
        for s in RewireStrategy::ALL {
            assert_eq!(s.name().parse::<RewireStrategy>().unwrap(), s);
        }
        assert_eq!(
            "remove-tag0".parse::<RewireStrategy>().unwrap(),
            RewireStrategy::RemoveTag0
        );
    }
}
