//! Cutoff radius graphs under periodic boundary conditions.
//!
//! Every periodic image of every atom that can lie within the cutoff of some
//! atom is generated and binned into cubic cells of edge length `cutoff`; each
//! atom then scans the 27 surrounding cells. The result is the complete set of
//! `(src, dst, offset)` with `0 < |x_dst + offset·cell − x_src| ≤ cutoff`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec3};
use crate::types::{AtomicSystem, Edge, Graph};

/// Default cutoff in Å.
pub const DEFAULT_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuildConfig {
    pub cutoff: f64,
    pub max_neighbors: Option<usize>,
    pub enforce_pbc: bool,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            max_neighbors: None,
            enforce_pbc: true,
        }
    }
}

impl GraphBuildConfig {
    pub fn with_cutoff(cutoff: f64) -> Self {
        Self {
            cutoff,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(GraphError::NonPositiveCutoff(self.cutoff));
        }
        if self.max_neighbors == Some(0) {
            return Err(GraphError::ZeroMaxNeighbors);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("cutoff must be positive, got {0}")]
    NonPositiveCutoff(f64),
    #[error("max_neighbors must be at least 1")]
    ZeroMaxNeighbors,
    #[error("periodic boundary conditions require an invertible cell")]
    CellRequired,
}

/// Periodic axes that take part in the image search.
pub fn periodic_axes(system: &AtomicSystem, config: &GraphBuildConfig) -> [bool; 3] {
    if config.enforce_pbc {
        system.pbc
    } else {
        [false; 3]
    }
}

/// Per-axis offset bounds `[-n_k, n_k]` that are sufficient for `system`:
/// `ceil(cutoff / h_k)` plus the spread of the fractional coordinates, so
/// positions outside the home cell are still handled.
fn offset_bounds(system: &AtomicSystem, periodic: [bool; 3], cutoff: f64) -> Result<[i32; 3], GraphError> {
    if !periodic.iter().any(|&p| p) {
        return Ok([0; 3]);
    }
    let inv = geom::inverse(&system.cell).ok_or(GraphError::CellRequired)?;
    let heights = geom::cell_heights(&system.cell);
    let mut bounds = [0; 3];
    for k in 0..3 {
        if !periodic[k] {
            continue;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &system.positions {
            let f = geom::vec_mat(*p, &inv)[k];
            lo = lo.min(f);
            hi = hi.max(f);
        }
        let spread = (hi - lo).max(0.0);
        bounds[k] = (cutoff / heights[k] + spread).ceil() as i32;
    }
    Ok(bounds)
}

type BinKey = (i64, i64, i64);

pub fn build_radius_graph(system: &AtomicSystem, config: &GraphBuildConfig) -> Result<Graph, GraphError> {
    config.validate()?;
    let cutoff = config.cutoff;
    let periodic = periodic_axes(system, config);
    let bounds = offset_bounds(system, periodic, cutoff)?;
    let n = system.num_atoms();

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &system.positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // slack keeps boundary points inside the scanned neighbourhood under rounding
    let bin = cutoff * (1.0 + 1e-9);
    let margin = bin;
    let key = |p: Vec3| -> BinKey {
        (
            ((p[0] - lo[0]) / bin).floor() as i64,
            ((p[1] - lo[1]) / bin).floor() as i64,
            ((p[2] - lo[2]) / bin).floor() as i64,
        )
    };

    let mut bins: HashMap<BinKey, Vec<(usize, [i32; 3])>> = HashMap::new();
    for a in -bounds[0]..=bounds[0] {
        for b in -bounds[1]..=bounds[1] {
            for c in -bounds[2]..=bounds[2] {
                let offset = [a, b, c];
                let shift = geom::offset_shift(offset, &system.cell);
                for j in 0..n {
                    let p = geom::add(system.positions[j], shift);
                    let inside = (0..3).all(|k| p[k] >= lo[k] - margin && p[k] <= hi[k] + margin);
                    if inside {
                        bins.entry(key(p)).or_default().push((j, offset));
                    }
                }
            }
        }
    }

    let mut edges = Vec::new();
    let mut distances = Vec::new();
    for i in 0..n {
        let (bx, by, bz) = key(system.positions[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cands) = bins.get(&(bx + dx, by + dy, bz + dz)) else {
                        continue;
                    };
                    for &(j, offset) in cands {
                        let d = geom::norm(system.edge_vector(i, j, offset));
                        if d > 0.0 && d <= cutoff {
                            edges.push(Edge { src: i, dst: j, offset });
                            distances.push(d);
                        }
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_unstable_by_key(|&k| edges[k]);
    let mut graph = Graph {
        num_nodes: n,
        edges: order.iter().map(|&k| edges[k]).collect(),
        distances: order.iter().map(|&k| distances[k]).collect(),
    };
    if let Some(m) = config.max_neighbors {
        graph = keep_nearest_incoming(graph, m);
    }
    Ok(graph)
}

/// Keeps, for every destination node, its `m` nearest incoming edges. Ties at
/// equal distance go to the lexicographically smaller offset, then the smaller
/// source index.
fn keep_nearest_incoming(graph: Graph, m: usize) -> Graph {
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); graph.num_nodes];
    for (k, e) in graph.edges.iter().enumerate() {
        incoming[e.dst].push(k);
    }
    let mut keep = vec![false; graph.edges.len()];
    for list in &mut incoming {
        list.sort_by(|&a, &b| {
            let (ea, eb) = (&graph.edges[a], &graph.edges[b]);
            graph.distances[a]
                .total_cmp(&graph.distances[b])
                .then(ea.offset.cmp(&eb.offset))
                .then(ea.src.cmp(&eb.src))
        });
        for &k in list.iter().take(m) {
            keep[k] = true;
        }
    }
    let (edges, distances) = graph
        .edges
        .iter()
        .zip(&graph.distances)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|((e, d), _)| (*e, *d))
        .unzip();
    Graph {
        num_nodes: graph.num_nodes,
        edges,
        distances,
    }
}

/// Builds graphs for many systems in parallel; output order follows input order.
pub fn build_radius_graphs(systems: &[AtomicSystem], config: &GraphBuildConfig) -> Result<Vec<Graph>, GraphError> {
    systems.par_iter().map(|s| build_radius_graph(s, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(l: f64) -> [[f64; 3]; 3] {
        [[l, 0.0, 0.0], [0.0, l, 0.0], [0.0, 0.0, l]]
    }

    fn system(pos: Vec<Vec3>, cell: [[f64; 3]; 3], pbc: [bool; 3]) -> AtomicSystem {
        let n = pos.len();
        AtomicSystem::new("t", pos, vec![29; n], vec![1; n], cell, pbc)
    }

    #[test]
    fn direct_pair() {
        let s = system(vec![[0.0; 3], [1.0, 0.0, 0.0]], cube(100.0), [false; 3]);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(g.distances, vec![1.0, 1.0]);
    }

    #[test]
    fn beyond_cutoff() {
        let s = system(vec![[0.0; 3], [7.0, 0.0, 0.0]], cube(100.0), [true; 3]);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn lone_atom_self_images_beyond_cutoff() {
        let s = system(vec![[0.5, 5.0, 5.0]], cube(10.0), [true; 3]);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn wraps_across_boundary() {
        let s = system(vec![[0.5, 5.0, 5.0], [9.5, 5.0, 5.0]], cube(10.0), [true; 3]);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        let e = g
            .edges
            .iter()
            .position(|e| e.src == 0 && e.dst == 1 && e.offset == [-1, 0, 0])
            .expect("wrapped edge present");
        assert!((g.distances[e] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cutoff_is_inclusive() {
        let s = system(vec![[0.0; 3], [6.0, 0.0, 0.0]], cube(100.0), [false; 3]);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn max_neighbors_keeps_nearest() {
        let s = system(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
            cube(100.0),
            [false; 3],
        );
        let cfg = GraphBuildConfig {
            max_neighbors: Some(1),
            ..Default::default()
        };
        let g = build_radius_graph(&s, &cfg).unwrap();
        let into0: Vec<_> = g.edges.iter().zip(&g.distances).filter(|(e, _)| e.dst == 0).collect();
        assert_eq!(into0.len(), 1);
        assert_eq!(into0[0].0.src, 1);
        assert_eq!(*into0[0].1, 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let s = system(vec![[0.0; 3]], cube(10.0), [false; 3]);
        assert_eq!(
            build_radius_graph(&s, &GraphBuildConfig::with_cutoff(0.0)).unwrap_err(),
            GraphError::NonPositiveCutoff(0.0)
        );
        let singular = system(vec![[0.0; 3]], [[0.0; 3]; 3], [true; 3]);
        assert_eq!(
            build_radius_graph(&singular, &GraphBuildConfig::default()).unwrap_err(),
            GraphError::CellRequired
        );
    }

    #[test]
    fn enforce_pbc_off_ignores_images() {
        let s = system(vec![[0.5, 5.0, 5.0], [9.5, 5.0, 5.0]], cube(10.0), [true; 3]);
        let cfg = GraphBuildConfig {
            cutoff: 6.0,
            max_neighbors: None,
            enforce_pbc: false,
        };
        let g = build_radius_graph(&s, &cfg).unwrap();
        assert!(g.edges.iter().all(|e| e.offset == [0, 0, 0]));
        assert_eq!(g.num_edges(), 0);
    }
}
