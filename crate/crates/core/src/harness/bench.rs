use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::{build_samples, PreprocessMeta};
use super::train::{prepare_batch, Sample};
use super::HarnessError;
use crate::data::{read_jsonl_records, JsonRecord, Split};
use crate::models::Model;
use crate::rewire::RewireStrategy;

/// Where benchmark samples are loaded from on every timed repeat.
#[derive(Debug, Clone)]
pub enum BenchSource {
    /// `<dir>/<split>.jsonl`, read from disk each repeat.
    Dir { dir: PathBuf, meta: Option<PreprocessMeta> },
    /// Records already in memory (generated data); loading is a copy.
    Memory(Vec<JsonRecord>),
}

impl BenchSource {
    fn load(&self, split: Split) -> Result<Vec<JsonRecord>, HarnessError> {
        match self {
            BenchSource::Dir { dir, .. } => Ok(read_jsonl_records(dir.join(format!("{split}.jsonl")))?),
            BenchSource::Memory(r) => Ok(r.clone()),
        }
    }

    fn meta(&self) -> Option<&PreprocessMeta> {
        match self {
            BenchSource::Dir { meta, .. } => meta.as_ref(),
            BenchSource::Memory(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub split: Split,
    pub repeats: usize,
    pub batch_size: usize,
    pub rewire: RewireStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub split: String,
    pub rewire: RewireStrategy,
    pub repeats: usize,
    pub n_samples: usize,
    pub batch_size: usize,
    /// Median wall time of a full pass: loading, graph building, batching, inference.
    pub inference_time_s: f64,
    /// Median samples per second counting only the forward calls on pre-built batches.
    pub throughput_sps: f64,
    /// Median of the forward-only wall times behind `throughput_sps`.
    pub forward_time_s: f64,
    /// Largest tape recorded for one batch; 0 when inference needs no tape.
    pub peak_tape_nodes: usize,
    pub inference_times_s: Vec<f64>,
    pub forward_times_s: Vec<f64>,
}

impl BenchReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Times `model` on one split under the two protocols.
pub fn bench_model(
    model: &Model,
    cfg: &ExperimentConfig,
    source: &BenchSource,
    opts: BenchOptions,
) -> Result<BenchReport, HarnessError> {
    if opts.repeats == 0 {
        return Err(HarnessError::Config("repeats must be positive".into()));
    }
    let build = cfg.graph_config();
    let mut inference = Vec::with_capacity(opts.repeats);
    let mut forward = Vec::with_capacity(opts.repeats);
    let mut peak = 0;
    let mut n_samples = 0;

    for _ in 0..opts.repeats {
        let t0 = Instant::now();
        let records = source.load(opts.split)?;
        let samples = build_samples(&records, opts.rewire, &build, source.meta())?;
        for chunk in samples.chunks(opts.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let p = prepare_batch(model, &refs)?;
            let pred = model.infer(&p)?;
            peak = peak.max(pred.tape_nodes);
        }
        inference.push(t0.elapsed().as_secs_f64());
        n_samples = samples.len();
    }

    let records = source.load(opts.split)?;
    let samples = build_samples(&records, opts.rewire, &build, source.meta())?;
    let prepared = samples
        .chunks(opts.batch_size.max(1))
        .map(|chunk| prepare_batch(model, &chunk.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    for _ in 0..opts.repeats {
        let t0 = Instant::now();
        for p in &prepared {
            let pred = model.infer(p)?;
            peak = peak.max(pred.tape_nodes);
        }
        forward.push(t0.elapsed().as_secs_f64());
    }
    let forward_time_s = median(&forward);
    Ok(BenchReport {
        version: super::eval::version_stamp(),
        split: opts.split.name().to_string(),
        rewire: opts.rewire,
        repeats: opts.repeats,
        n_samples,
        batch_size: opts.batch_size,
        inference_time_s: median(&inference),
        throughput_sps: n_samples as f64 / forward_time_s,
        forward_time_s,
        peak_tape_nodes: peak,
        inference_times_s: inference,
        forward_times_s: forward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
