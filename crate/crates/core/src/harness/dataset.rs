use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::data::{
    derive_oracle_params, generate_dataset, read_jsonl_records, write_jsonl_records, GeneratorConfig, JsonRecord,
    Split, SPLITS,
};
use crate::elements::ElementTable;
use crate::graph::GraphBuildConfig;
use crate::rewire::{self, RewireStrategy, RewiringStats};
use crate::types::{AtomicSystem, Graph};

/// Name of the metadata file written next to preprocessed splits.
pub const PREPROCESS_META: &str = "preprocess.json";

/// Recorded by `preprocess` so training can reuse the stored graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMeta {
    pub strategy: RewireStrategy,
    pub graph: GraphBuildConfig,
}

/// Every split's samples, optionally with stored graphs.
#[derive(Debug, Clone, Default)]
pub struct Records {
    pub splits: BTreeMap<Split, Vec<JsonRecord>>,
    pub meta: Option<PreprocessMeta>,
}

impl Records {
    pub fn split(&self, split: Split) -> &[JsonRecord] {
        self.splits.get(&split).map_or(&[], |v| v.as_slice())
    }

    pub fn systems(&self, split: Split) -> Vec<AtomicSystem> {
        self.split(split).iter().map(|r| r.system.clone()).collect()
    }
}

pub fn read_records_dir(dir: &Path) -> Result<Records, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Data(format!("{} is not a directory", dir.display())));
    }
    let meta_path = dir.join(PREPROCESS_META);
    let meta = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| HarnessError::io(&meta_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", meta_path.display())))?)
    } else {
        None
    };
    let mut splits = BTreeMap::new();
    for s in SPLITS {
        let path = dir.join(format!("{s}.jsonl"));
        if path.exists() {
            splits.insert(s, read_jsonl_records(&path)?);
        }
    }
    Ok(Records { splits, meta })
}

pub fn generated_records(gen: &GeneratorConfig, table: &ElementTable) -> Result<Records, HarnessError> {
    let oracle = derive_oracle_params(table, &gen.elements())?;
    let ds = generate_dataset(gen, &oracle)?;
    let splits = SPLITS
        .into_iter()
        .map(|s| {
            let recs = ds
                .split(s)
                .iter()
                .map(|sys| JsonRecord {
                    system: sys.clone(),
                    graph: None,
                })
                .collect();
            (s, recs)
        })
        .collect();
    Ok(Records { splits, meta: None })
}

/// Loads the data named by the config; the default generator is used when
/// neither a directory nor a generator is given.
pub fn load_records(cfg: &ExperimentConfig, table: &ElementTable) -> Result<Records, HarnessError> {
    match (&cfg.data.dir, &cfg.data.generator) {
        (Some(dir), _) => read_records_dir(dir),
        (None, Some(gen)) => generated_records(gen, table),
        (None, None) => generated_records(&GeneratorConfig::default(), table),
    }
}

/// Builds the model-ready (system, graph) pairs for `records` under `strategy`.
///
/// Stored graphs are reused when they were produced by `meta` with the same
/// strategy (or when the requested strategy is `none`).
pub fn build_samples(
    records: &[JsonRecord],
    strategy: RewireStrategy,
    build: &GraphBuildConfig,
    meta: Option<&PreprocessMeta>,
) -> Result<Vec<(AtomicSystem, Graph)>, HarnessError> {
    if let Some(m) = meta {
        if strategy != RewireStrategy::None && strategy != m.strategy {
            return Err(HarnessError::Config(format!(
                "data was preprocessed with {} but the config asks for {strategy}",
                m.strategy
            )));
        }
    }
    records
        .par_iter()
        .map(|r| match &r.graph {
            Some(g) if meta.is_some() => Ok((r.system.clone(), g.clone())),
            _ => Ok(rewire::prepare(&r.system, strategy, build)?),
        })
        .collect()
}

/// Writes every split of `records` after applying `strategy`, together with
/// the metadata file, and returns the reduction statistics over all splits.
pub fn preprocess_dir(
    input: &Path,
    output: &Path,
    strategy: RewireStrategy,
    build: &GraphBuildConfig,
) -> Result<RewiringStats, HarnessError> {
    let records = read_records_dir(input)?;
    if records.meta.is_some() {
        return Err(HarnessError::Data(format!(
            "{} is already preprocessed",
            input.display()
        )));
    }
    std::fs::create_dir_all(output).map_err(|e| HarnessError::io(output, e))?;
    let mut all = Vec::new();
    for (&split, recs) in &records.splits {
        let samples = build_samples(recs, strategy, build, None)?;
        let out: Vec<JsonRecord> = samples
            .into_iter()
            .map(|(system, graph)| JsonRecord {
                system,
                graph: Some(graph),
            })
            .collect();
        write_jsonl_records(&out, output.join(format!("{split}.jsonl")))?;
        all.extend(recs.iter().map(|r| r.system.clone()));
    }
    let meta = PreprocessMeta {
        strategy,
        graph: *build,
    };
    let meta_path = output.join(PREPROCESS_META);
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| HarnessError::io(&meta_path, e))?;
    Ok(rewire::rewiring_stats(&all, strategy, build)?)
}
