use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use catgraph::data::{derive_oracle_params, generate_dataset, GeneratorConfig, Split};
use catgraph::elements::ElementTable;
use catgraph::harness::{
    bench_model, evaluate_model, init_thread_pool, load_records, preprocess_dir, read_records_dir, run_ablation,
    AblationGrid, BenchOptions, BenchSource, ExperimentConfig, HarnessError, RunReport,
};
use catgraph::models::load_checkpoint;
use catgraph::rewire::RewireStrategy;

#[derive(Parser)]
#[command(name = "catgraph", version, about = "Adsorbate-catalyst graph learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into one JSONL file per split.
    Generate {
        /// Generator config JSON; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewire every split of a dataset and store the resulting graphs.
    Preprocess {
        #[arg(long, default_value = "remove-tag0")]
        strategy: RewireStrategy,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-sample node and edge counts as CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Experiment config whose graph settings to use.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; writes checkpoints, train_log.csv and metrics.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on validation splits.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// `all` for every validation split, or a comma-separated list.
        #[arg(long, default_value = "all")]
        splits: String,
        /// Report to compute the improvement against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time inference of a checkpoint on one split.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "val_id")]
        split: Split,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Override the rewiring the checkpoint was trained with.
        #[arg(long)]
        rewire: Option<RewireStrategy>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every cell of a grid; writes a CSV table and a JSON file beside it.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match init_thread_pool().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn checkpoint_config(echo: serde_json::Value) -> Result<ExperimentConfig, HarnessError> {
    serde_json::from_value(echo).map_err(|e| HarnessError::Config(format!("checkpoint config echo: {e}")))
}

fn parse_splits(s: &str) -> Result<Vec<Split>, HarnessError> {
    if s == "all" {
        return Ok(Split::VALIDATION.to_vec());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<Split>()
                .map_err(|e| HarnessError::Config(e.to_string()))
        })
        .collect()
}

fn run(command: Command) -> Result<(), HarnessError> {
    let table = ElementTable::bundled();
    match command {
        Command::Generate { config, out } => {
            let gen: GeneratorConfig = match config {
                Some(p) => read_json(&p)?,
                None => GeneratorConfig::default(),
            };
            gen.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            let oracle = derive_oracle_params(&table, &gen.elements())?;
            let ds = generate_dataset(&gen, &oracle)?;
            ds.write_dir(&out)?;
            log::info!("wrote dataset to {}", out.display());
        }
        Command::Preprocess {
            strategy,
            input,
            out,
            stats,
            config,
        } => {
            let build = match config {
                Some(p) => ExperimentConfig::from_path(&p)?.graph_config(),
                None => ExperimentConfig::default().graph_config(),
            };
            let s = preprocess_dir(&input, &out, strategy, &build)?;
            log::info!(
                "{strategy}: {:.1}% of atoms and {:.1}% of edges remain",
                s.atoms_remaining_pct,
                s.edges_remaining_pct
            );
            if let Some(p) = stats {
                s.write_csv_path(&p)
                    .map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))?;
            }
        }
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::Data(format!("{}: {e}", out.display())))?;
            let outcome = catgraph::harness::train(&cfg, &table, Some(&out))?;
            log::info!(
                "best epoch {}: average E-MAE {:.1} meV",
                outcome.best_epoch,
                outcome.report.average_e_mae_mev
            );
        }
        Command::Eval {
            ckpt,
            splits,
            baseline,
            out,
        } => {
            let (model, echo) = load_checkpoint(&ckpt, &table)?;
            let cfg = checkpoint_config(echo)?;
            let records = load_records(&cfg, &table)?;
            let mut report = evaluate_model(&model, &cfg, &records, &parse_splits(&splits)?)?;
            if let Some(b) = baseline {
                let base = RunReport::read(&b)?;
                report.compare_to(&base, &b.display().to_string())?;
            }
            emit(&report.to_json_string(), out.as_deref())?;
        }
        Command::Bench {
            ckpt,
            split,
            repeats,
            rewire,
            batch_size,
            out,
        } => {
            let (model, echo) = load_checkpoint(&ckpt, &table)?;
            let cfg = checkpoint_config(echo)?;
            let source = match &cfg.data.dir {
                Some(dir) => BenchSource::Dir {
                    dir: dir.clone(),
                    meta: read_records_dir(dir)?.meta,
                },
                None => BenchSource::Memory(load_records(&cfg, &table)?.split(split).to_vec()),
            };
            let opts = BenchOptions {
                split,
                repeats,
                batch_size: batch_size.unwrap_or(cfg.eval_batch_size),
                rewire: rewire.unwrap_or(cfg.rewire),
            };
            let report = bench_model(&model, &cfg, &source, opts)?;
            emit(&report.to_json_string(), out.as_deref())?;
        }
        Command::Ablate { grid, out } => {
            let grid = AblationGrid::from_path(&grid)?;
            let table_out = run_ablation(&grid, &table)?;
            table_out.write_csv(&out)?;
            table_out.write_json(&out.with_extension("json"))?;
            let failed = table_out.rows.iter().filter(|r| r.error.is_some()).count();
            log::info!("{} cells, {failed} failed", table_out.rows.len());
        }
    }
    Ok(())
}
