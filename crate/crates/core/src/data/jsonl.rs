//! One JSON object per line.
//!
//! Mandatory keys: `positions`, `atomic_numbers`, `tags`, `cell`, `pbc`,
//! `sid`. `energy` and `forces` may be null or absent. Rewired datasets may
//! also carry `edge_index` (`[src, dst]`), `cell_offsets` and `supernodes`,
//! because supernode adjacency cannot be recomputed from positions.
//! Floats are written in shortest round-trip form, so reading back yields
//! bit-identical values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geom::{Mat3, Vec3};
use crate::types::{validate_system, AtomicSystem, Edge, Graph, SupernodeInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Line {
    sid: String,
    positions: Vec<Vec3>,
    atomic_numbers: Vec<u32>,
    tags: Vec<u8>,
    cell: Mat3,
    pbc: [bool; 3],
    #[serde(default)]
    energy: Option<f64>,
    #[serde(default)]
    forces: Option<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_index: Option<[Vec<usize>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell_offsets: Option<Vec<[i32; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supernodes: Option<BTreeMap<usize, SupernodeInfo>>,
}

/// A system plus the graph stored alongside it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct JsonRecord {
    pub system: AtomicSystem,
    pub graph: Option<Graph>,
}

fn to_line(system: &AtomicSystem, graph: Option<&Graph>) -> Line {
    Line {
        sid: system.sample_id.clone(),
        positions: system.positions.clone(),
        atomic_numbers: system.atomic_numbers.clone(),
        tags: system.tags.clone(),
        cell: system.cell,
        pbc: system.pbc,
        energy: system.energy,
        forces: system.forces.clone(),
        edge_index: graph.map(|g| {
            [
                g.edges.iter().map(|e| e.src).collect(),
                g.edges.iter().map(|e| e.dst).collect(),
            ]
        }),
        cell_offsets: graph.map(|g| g.edges.iter().map(|e| e.offset).collect()),
        supernodes: (!system.supernodes.is_empty()).then(|| system.supernodes.clone()),
    }
}

fn from_line(line: Line, number: usize) -> Result<JsonRecord, DataError> {
    let err = |message: String| DataError::Line { line: number, message };
    let system = AtomicSystem {
        sample_id: line.sid,
        positions: line.positions,
        atomic_numbers: line.atomic_numbers,
        tags: line.tags,
        cell: line.cell,
        pbc: line.pbc,
        energy: line.energy,
        forces: line.forces,
        supernodes: line.supernodes.unwrap_or_default(),
    };
    let report = validate_system(&system);
    if !report.is_ok() {
        return Err(err(report.messages().join("; ")));
    }
    let graph = match (line.edge_index, line.cell_offsets) {
        (None, None) => None,
        (Some([src, dst]), offsets) => {
            if src.len() != dst.len() {
                return Err(err("edge_index rows differ in length".into()));
            }
            let offsets = offsets.unwrap_or_else(|| vec![[0; 3]; src.len()]);
            if offsets.len() != src.len() {
                return Err(err("cell_offsets length differs from edge count".into()));
            }
            let n = system.num_atoms();
            if src.iter().chain(&dst).any(|&i| i >= n) {
                return Err(err("edge_index refers to a missing node".into()));
            }
            let edges = src
                .into_iter()
                .zip(dst)
                .zip(offsets)
                .map(|((src, dst), offset)| Edge { src, dst, offset })
                .collect();
            let g = Graph::from_edges(&system, edges);
            g.check_against(&system).map_err(|e| err(e.to_string()))?;
            Some(g)
        }
        (None, Some(_)) => return Err(err("cell_offsets without edge_index".into())),
    };
    Ok(JsonRecord { system, graph })
}

pub fn write_jsonl_records(records: &[JsonRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = to_line(&r.system, r.graph.as_ref());
        serde_json::to_writer(&mut w, &line).map_err(|e| DataError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_jsonl(systems: &[AtomicSystem], path: impl AsRef<Path>) -> Result<(), DataError> {
    let records: Vec<JsonRecord> = systems
        .iter()
        .map(|s| JsonRecord {
            system: s.clone(),
            graph: None,
        })
        .collect();
    write_jsonl_records(&records, path)
}

/// Reads every line; blank lines are skipped. Line numbers in errors are 1-based.
pub fn read_jsonl_records(path: impl AsRef<Path>) -> Result<Vec<JsonRecord>, DataError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| DataError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(from_line(parsed, i + 1)?);
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<AtomicSystem>, DataError> {
    Ok(read_jsonl_records(path)?.into_iter().map(|r| r.system).collect())
}
