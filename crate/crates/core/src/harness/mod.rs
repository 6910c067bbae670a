//! Training, evaluation, benchmarking and ablation grids.
//!
//! Everything here is deterministic given the config and its seed except
//! wall-clock timings, which are only reported by [`bench_model`] and the
//! ablation table.

mod ablate;
mod bench;
mod config;
mod dataset;
mod eval;
mod optim;
mod train;

use std::path::Path;

use thiserror::Error;

pub use ablate::{run_ablation, run_ablation_on, AblationGrid, AblationRow, AblationTable, Cell};
pub use bench::{bench_model, median, BenchOptions, BenchReport, BenchSource};
pub use config::{
    baseline_config, improved_config, DataConfig, EcMode, ExperimentConfig, ForceVariant, OptimizerConfig,
    OptimizerKind, Task,
};
pub use dataset::{
    build_samples, generated_records, load_records, preprocess_dir, read_records_dir, PreprocessMeta, Records,
    PREPROCESS_META,
};
pub use eval::{
    evaluate_model, evaluate_samples, metrics_from_predictions, predict_samples, selection_score, version_stamp,
    RunReport, SplitMetrics, SplitPredictions,
};
pub use optim::{cosine_lr, grad_norm, Adam};
pub use train::{
    batch_gradients, epoch_order, fit_normalization, prepare_data, train, train_on, EpochLog, LossParts, PreparedData,
    Sample, TrainOutcome,
};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "PHAST_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] crate::models::CheckpointError),
    #[error(transparent)]
    Rewire(#[from] crate::rewire::RewireError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Dataset(#[from] crate::data::DataError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Model(crate::models::ModelError::Config(_)) => 2,
            HarnessError::Divergence(_) => 3,
            _ => 1,
        }
    }
}

/// Sizes the global worker pool from `PHAST_THREADS` when it is set.
/// Returns the thread count in effect.
pub fn init_thread_pool() -> Result<usize, HarnessError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // a pool that is already initialized keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
