//! Dataset readers and writers, the synthetic slab generator and its
//! analytic energy/force oracle.

mod extxyz;
mod generator;
mod jsonl;
mod oracle;

use thiserror::Error;

pub use extxyz::{parse_extxyz, read_extxyz};
pub use generator::{
    generate_dataset, generate_split, tag0_fraction, Dataset, EnergyTarget, GeneratorConfig, Split, SPLITS,
};
pub use jsonl::{read_jsonl, read_jsonl_records, write_jsonl, write_jsonl_records, JsonRecord};
pub use oracle::{derive_oracle_params, morse, oracle_energy_forces, OracleParams, PairParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("generator: {0}")]
    Generator(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
