//! Shared data model: atomic systems, their graphs, and disjoint-union batches.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Mat3, Vec3};

/// Atomic number assigned to the single aggregate node of a per-graph supernode.
pub const SUPERNODE_Z: u32 = 119;
/// Largest atomic code any table row is allocated for.
pub const MAX_CODE: u32 = SUPERNODE_Z;

/// Tolerance used when checking cached edge distances against positions.
pub const DISTANCE_TOL: f64 = 1e-9;

/// Bookkeeping for a node that replaces a set of sub-surface atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernodeInfo {
    /// Number of original atoms aggregated into the node.
    pub cardinality: u32,
    /// `(atomic number, count)` of the aggregated atoms, ascending by atomic number.
    pub members: Vec<(u32, u32)>,
}

/// One adsorbate–catalyst sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSystem {
    pub sample_id: String,
    /// Cartesian positions in Å.
    pub positions: Vec<Vec3>,
    pub atomic_numbers: Vec<u32>,
    /// 0 sub-surface, 1 surface, 2 adsorbate.
    pub tags: Vec<u8>,
    /// Row lattice vectors in Å.
    pub cell: Mat3,
    pub pbc: [bool; 3],
    /// Total energy in eV.
    pub energy: Option<f64>,
    /// Per-atom forces in eV/Å.
    pub forces: Option<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub supernodes: BTreeMap<usize, SupernodeInfo>,
}

impl AtomicSystem {
    /// A system without labels or supernodes.
    pub fn new(
        sample_id: impl Into<String>,
        positions: Vec<Vec3>,
        atomic_numbers: Vec<u32>,
        tags: Vec<u8>,
        cell: Mat3,
        pbc: [bool; 3],
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            positions,
            atomic_numbers,
            tags,
            cell,
            pbc,
            energy: None,
            forces: None,
            supernodes: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn num_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn is_supernode(&self, i: usize) -> bool {
        self.supernodes.contains_key(&i)
    }

    pub fn supernode_cardinality(&self, i: usize) -> Option<u32> {
        self.supernodes.get(&i).map(|s| s.cardinality)
    }

    pub fn any_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    pub fn count_tag(&self, tag: u8) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Vector from `src` to the `offset` image of `dst`.
    #[inline]
    pub fn edge_vector(&self, src: usize, dst: usize, offset: [i32; 3]) -> Vec3 {
        let shift = geom::offset_shift(offset, &self.cell);
        geom::sub(geom::add(self.positions[dst], shift), self.positions[src])
    }
}

/// A single failed invariant of an [`AtomicSystem`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    LengthMismatch {
        field: &'static str,
        len: usize,
        expected: usize,
    },
    TagOutOfRange {
        index: usize,
        tag: u8,
    },
    AtomicNumberOutOfRange {
        index: usize,
        z: u32,
    },
    CellNotInvertible,
    NonFinitePosition {
        index: usize,
    },
    SupernodeIndex {
        index: usize,
    },
    SupernodeCardinality {
        index: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "system has no atoms"),
            Violation::LengthMismatch { field, len, expected } => {
                write!(f, "{field} has length {len}, expected {expected}")
            }
            Violation::TagOutOfRange { index, .. } => {
                write!(f, "tag out of {{0,1,2}} at index {index}")
            }
            Violation::AtomicNumberOutOfRange { index, z } => {
                write!(f, "atomic number {z} out of range at index {index}")
            }
            Violation::CellNotInvertible => write!(f, "cell not invertible"),
            Violation::NonFinitePosition { index } => {
                write!(f, "non-finite position at index {index}")
            }
            Violation::SupernodeIndex { index } => {
                write!(f, "supernode entry refers to a regular atom at index {index}")
            }
            Violation::SupernodeCardinality { index } => {
                write!(f, "supernode cardinality inconsistent at index {index}")
            }
        }
    }
}

/// Result of [`validate_system`]; an empty list means the system is well formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

pub fn validate_system(system: &AtomicSystem) -> ValidationReport {
    let mut violations = Vec::new();
    let n = system.positions.len();
    if n == 0 {
        violations.push(Violation::Empty);
    }
    if system.atomic_numbers.len() != n {
        violations.push(Violation::LengthMismatch {
            field: "atomic_numbers",
            len: system.atomic_numbers.len(),
            expected: n,
        });
    }
    if system.tags.len() != n {
        violations.push(Violation::LengthMismatch {
            field: "tags",
            len: system.tags.len(),
            expected: n,
        });
    }
    if let Some(f) = &system.forces {
        if f.len() != n {
            violations.push(Violation::LengthMismatch {
                field: "forces",
                len: f.len(),
                expected: n,
            });
        }
    }
    for (index, &tag) in system.tags.iter().enumerate() {
        if tag > 2 {
            violations.push(Violation::TagOutOfRange { index, tag });
        }
    }
    for (index, &z) in system.atomic_numbers.iter().enumerate() {
        if z == 0 || z > MAX_CODE {
            violations.push(Violation::AtomicNumberOutOfRange { index, z });
        }
    }
    for (index, p) in system.positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            violations.push(Violation::NonFinitePosition { index });
        }
    }
    if system.any_periodic() && geom::inverse(&system.cell).is_none() {
        violations.push(Violation::CellNotInvertible);
    }
    for (&index, info) in &system.supernodes {
        let aggregate = index < n
            && (system.atomic_numbers.get(index).is_some_and(|&z| z >= SUPERNODE_Z)
                || system.tags.get(index) == Some(&0));
        if !aggregate {
            violations.push(Violation::SupernodeIndex { index });
        }
        let members: u32 = info.members.iter().map(|m| m.1).sum();
        if info.cardinality == 0 || members != info.cardinality {
            violations.push(Violation::SupernodeCardinality { index });
        }
    }
    ValidationReport { violations }
}

/// One directed edge: messages flow from `src` to `dst`, and the geometric
/// vector is `pos[dst] + offset·cell − pos[src]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub offset: [i32; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
    /// Cached `|edge vector|` per edge, Å.
    pub distances: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphConsistencyError {
    #[error("graph has {graph} nodes but system has {system}")]
    NodeCount { graph: usize, system: usize },
    #[error("edge {edge} references node out of range")]
    IndexOutOfRange { edge: usize },
    #[error("edge {edge} is a zero-offset self loop")]
    SelfLoop { edge: usize },
    #[error("edge {edge} cached distance {cached} differs from recomputed {actual}")]
    Distance { edge: usize, cached: f64, actual: f64 },
    #[error("distances has {got} entries for {edges} edges")]
    DistanceCount { got: usize, edges: usize },
}

impl Graph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Builds a graph from edges, computing distances from `system`.
    pub fn from_edges(system: &AtomicSystem, edges: Vec<Edge>) -> Self {
        let distances = edges
            .iter()
            .map(|e| geom::norm(system.edge_vector(e.src, e.dst, e.offset)))
            .collect();
        Self {
            num_nodes: system.num_atoms(),
            edges,
            distances,
        }
    }

    /// Checks the structural invariants against the owning system.
    pub fn check_against(&self, system: &AtomicSystem) -> Result<(), GraphConsistencyError> {
        let n = system.num_atoms();
        if self.num_nodes != n {
            return Err(GraphConsistencyError::NodeCount {
                graph: self.num_nodes,
                system: n,
            });
        }
        if self.distances.len() != self.edges.len() {
            return Err(GraphConsistencyError::DistanceCount {
                got: self.distances.len(),
                edges: self.edges.len(),
            });
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(GraphConsistencyError::IndexOutOfRange { edge: k });
            }
            if e.src == e.dst && e.offset == [0, 0, 0] {
                return Err(GraphConsistencyError::SelfLoop { edge: k });
            }
            let actual = geom::norm(system.edge_vector(e.src, e.dst, e.offset));
            if (actual - self.distances[k]).abs() > DISTANCE_TOL {
                return Err(GraphConsistencyError::Distance {
                    edge: k,
                    cached: self.distances[k],
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Edge triples sorted, for multiset comparisons.
    pub fn sorted_edges(&self) -> Vec<Edge> {
        let mut e = self.edges.clone();
        e.sort_unstable();
        e
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("batch needs at least one system")]
    Empty,
    #[error("{systems} systems but {graphs} graphs")]
    LengthMismatch { systems: usize, graphs: usize },
    #[error("graph {index} inconsistent with its system: {source}")]
    Inconsistent {
        index: usize,
        #[source]
        source: GraphConsistencyError,
    },
}

/// Disjoint union of several (system, graph) pairs with global numbering.
///
/// Node `i` of graph `g` becomes `node_offsets[g] + i`; edges are renumbered
/// the same way and stored graph after graph.
#[derive(Debug, Clone)]
pub struct Batch {
    systems: Vec<AtomicSystem>,
    graphs: Vec<Graph>,
    node_graph_index: Arc<[usize]>,
    edge_graph_index: Arc<[usize]>,
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

pub fn make_batch(systems: Vec<AtomicSystem>, graphs: Vec<Graph>) -> Result<Batch, BatchError> {
    if systems.is_empty() {
        return Err(BatchError::Empty);
    }
    if systems.len() != graphs.len() {
        return Err(BatchError::LengthMismatch {
            systems: systems.len(),
            graphs: graphs.len(),
        });
    }
    for (index, (s, g)) in systems.iter().zip(&graphs).enumerate() {
        g.check_against(s)
            .map_err(|source| BatchError::Inconsistent { index, source })?;
    }
    let mut node_offsets = vec![0];
    let mut edge_offsets = vec![0];
    let mut node_graph_index = Vec::new();
    let mut edge_graph_index = Vec::new();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (g, (s, graph)) in systems.iter().zip(&graphs).enumerate() {
        let base = *node_offsets.last().unwrap();
        node_graph_index.extend(std::iter::repeat_n(g, s.num_atoms()));
        edge_graph_index.extend(std::iter::repeat_n(g, graph.num_edges()));
        for e in &graph.edges {
            src.push(base + e.src);
            dst.push(base + e.dst);
        }
        node_offsets.push(base + s.num_atoms());
        edge_offsets.push(edge_offsets.last().unwrap() + graph.num_edges());
    }
    Ok(Batch {
        systems,
        graphs,
        node_graph_index: node_graph_index.into(),
        edge_graph_index: edge_graph_index.into(),
        node_offsets,
        edge_offsets,
        src: src.into(),
        dst: dst.into(),
    })
}

impl Batch {
    /// Single-graph convenience wrapper around [`make_batch`].
    pub fn single(system: AtomicSystem, graph: Graph) -> Result<Self, BatchError> {
        make_batch(vec![system], vec![graph])
    }

    pub fn num_graphs(&self) -> usize {
        self.systems.len()
    }

    pub fn num_nodes(&self) -> usize {
        *self.node_offsets.last().unwrap()
    }

    pub fn num_edges(&self) -> usize {
        *self.edge_offsets.last().unwrap()
    }

    pub fn systems(&self) -> &[AtomicSystem] {
        &self.systems
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn node_graph_index(&self) -> &Arc<[usize]> {
        &self.node_graph_index
    }

    pub fn edge_graph_index(&self) -> &Arc<[usize]> {
        &self.edge_graph_index
    }

    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }

    /// Global source index per edge.
    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    /// Global destination index per edge.
    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }

    pub fn atomic_numbers(&self) -> Vec<u32> {
        self.systems
            .iter()
            .flat_map(|s| s.atomic_numbers.iter().copied())
            .collect()
    }

    pub fn tags(&self) -> Vec<u8> {
        self.systems.iter().flat_map(|s| s.tags.iter().copied()).collect()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.systems.iter().flat_map(|s| s.positions.iter().copied()).collect()
    }

    /// `offset·cell` per edge, using the owning system's cell.
    pub fn edge_shifts(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (s, g) in self.systems.iter().zip(&self.graphs) {
            out.extend(g.edges.iter().map(|e| geom::offset_shift(e.offset, &s.cell)));
        }
        out
    }

    pub fn edge_offsets_per_edge(&self) -> Vec<[i32; 3]> {
        self.graphs
            .iter()
            .flat_map(|g| g.edges.iter().map(|e| e.offset))
            .collect()
    }

    /// Supernode cardinality per global node, `None` for regular atoms.
    pub fn cardinalities(&self) -> Vec<Option<u32>> {
        let mut out = Vec::with_capacity(self.num_nodes());
        for s in &self.systems {
            out.extend((0..s.num_atoms()).map(|i| s.supernode_cardinality(i)));
        }
        out
    }

    /// Splits the union back into per-graph systems and graphs, rebuilding each
    /// graph from the global edge arrays.
    pub fn unbatch(&self) -> (Vec<AtomicSystem>, Vec<Graph>) {
        let offsets = self.edge_offsets_per_edge();
        let graphs = (0..self.num_graphs())
            .map(|g| {
                let base = self.node_offsets[g];
                let edges = self
                    .edge_range(g)
                    .map(|k| Edge {
                        src: self.src[k] - base,
                        dst: self.dst[k] - base,
                        offset: offsets[k],
                    })
                    .collect();
                Graph {
                    num_nodes: self.node_range(g).len(),
                    edges,
                    distances: self.graphs[g].distances.clone(),
                }
            })
            .collect();
        (self.systems.clone(), graphs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ID: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn two_atoms() -> AtomicSystem {
        AtomicSystem::new(
            "a",
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
            vec![1, 8],
            vec![1, 2],
            ID,
            [false; 3],
        )
    }

    fn chain(n: usize, id: &str) -> (AtomicSystem, Graph) {
        let positions = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = AtomicSystem::new(id, positions, vec![6; n], vec![1; n], ID, [false; 3]);
        let mut edges = Vec::new();
        for i in 0..n.saturating_sub(1) {
            edges.push(Edge {
                src: i,
                dst: i + 1,
                offset: [0; 3],
            });
            edges.push(Edge {
                src: i + 1,
                dst: i,
                offset: [0; 3],
            });
        }
        let g = Graph::from_edges(&s, edges);
        (s, g)
    }

    #[test]
    fn minimal_system_is_valid() {
        let r = validate_system(&two_atoms());
        assert!(r.is_ok(), "{:?}", r.messages());
    }

    #[test]
    fn bad_tag_reported_with_index() {
        let mut s = two_atoms();
        s.tags = vec![0, 3];
        let r = validate_system(&s);
        assert_eq!(r.messages(), vec!["tag out of {0,1,2} at index 1".to_string()]);
    }

    #[test]
    fn singular_cell_with_pbc() {
        let mut s = two_atoms();
        s.pbc = [true, true, false];
        s.cell = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let r = validate_system(&s);
        assert_eq!(r.messages(), vec!["cell not invertible".to_string()]);
        // pure: repeated calls agree
        assert_eq!(validate_system(&s), r);
    }

    #[test]
    fn force_rows_must_match() {
        let mut s = two_atoms();
        s.forces = Some(vec![[0.0; 3]]);
        assert!(!validate_system(&s).is_ok());
    }

    #[test]
    fn supernode_entry_on_regular_atom_is_flagged() {
        let mut s = two_atoms();
        s.supernodes.insert(
            0,
            SupernodeInfo {
                cardinality: 1,
                members: vec![(1, 1)],
            },
        );
        assert_eq!(
            validate_system(&s).violations,
            vec![Violation::SupernodeIndex { index: 0 }]
        );
    }

    #[test]
    fn single_system_batch_index() {
        let (s, g) = chain(3, "x");
        let b = Batch::single(s, g).unwrap();
        assert_eq!(&b.node_graph_index()[..], &[0, 0, 0]);
    }

    #[test]
    fn two_system_batch_renumbers_edges() {
        let (s1, g1) = chain(2, "a");
        let (s2, g2) = chain(3, "b");
        let b = make_batch(vec![s1, s2], vec![g1, g2]).unwrap();
        assert_eq!(&b.node_graph_index()[..], &[0, 0, 1, 1, 1]);
        // first edge of the second graph is (0,1) locally
        let k = b.edge_range(1).start;
        assert_eq!((b.src()[k], b.dst()[k]), (2, 3));
    }

    #[test]
    fn batch_rejects_mismatch() {
        let (s1, g1) = chain(2, "a");
        assert_eq!(
            make_batch(vec![s1.clone()], vec![g1.clone(), g1.clone()]).unwrap_err(),
            BatchError::LengthMismatch { systems: 1, graphs: 2 }
        );
        let (_, g3) = chain(3, "b");
        assert!(matches!(
            make_batch(vec![s1], vec![g3]),
            Err(BatchError::Inconsistent { .. })
        ));
        assert_eq!(make_batch(vec![], vec![]).unwrap_err(), BatchError::Empty);
    }
}
