use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ForceVariant};
use super::dataset::{load_records, Records};
use super::eval::RunReport;
use super::train::{prepare_data, train_on, PreparedData};
use super::HarnessError;
use crate::data::Split;
use crate::elements::ElementTable;
use crate::embed::EmbeddingConfig;
use crate::models::EnergyHeadKind;
use crate::rewire::RewireStrategy;

/// A grid of runs around a base config. Empty axes fall back to the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub base: ExperimentConfig,
    pub rewire: Vec<RewireStrategy>,
    /// Named embedding variants, see [`EmbeddingConfig::variant`].
    pub embeddings: Vec<String>,
    pub energy_heads: Vec<EnergyHeadKind>,
    /// S2EF force variants; leave empty for energy-only grids.
    pub force_variants: Vec<ForceVariant>,
    /// Weight of the Grad and Cos terms.
    pub lambda_ec: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rewire: RewireStrategy,
    pub embeddings: String,
    pub energy_head: EnergyHeadKind,
    pub force_variant: Option<ForceVariant>,
    pub seed: u64,
}

impl Cell {
    pub fn is_baseline(&self) -> bool {
        self.rewire == RewireStrategy::None && self.embeddings == "z" && self.energy_head == EnergyHeadKind::GlobalSum
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}/{}/{:?}", self.rewire, self.embeddings, self.energy_head);
        if let Some(v) = self.force_variant {
            s.push('/');
            s.push_str(v.name());
        }
        s
    }

    pub fn config(&self, base: &ExperimentConfig, lambda_ec: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = base.clone();
        cfg.rewire = self.rewire;
        cfg.embeddings = EmbeddingConfig {
            d_cardinality: base.embeddings.d_cardinality,
            ..EmbeddingConfig::variant(&self.embeddings).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        cfg.heads.energy_head = self.energy_head;
        cfg.seed = self.seed;
        if let Some(v) = self.force_variant {
            v.apply(&mut cfg, lambda_ec);
        }
        cfg.name = self.label();
        cfg.validate()?;
        Ok(cfg)
    }
}

impl AblationGrid {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Cartesian product in the order rewire, embeddings, energy head,
    /// force variant, seed.
    pub fn cells(&self) -> Vec<Cell> {
        fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let rewires = or(&self.rewire, self.base.rewire);
        let embeds = if self.embeddings.is_empty() {
            vec!["z".to_string()]
        } else {
            self.embeddings.clone()
        };
        let heads = or(&self.energy_heads, self.base.heads.energy_head);
        let forces: Vec<Option<ForceVariant>> = if self.force_variants.is_empty() {
            vec![None]
        } else {
            self.force_variants.iter().copied().map(Some).collect()
        };
        let seeds = or(&self.seeds, self.base.seed);
        let mut out = Vec::new();
        for &rewire in &rewires {
            for embeddings in &embeds {
                for &energy_head in &heads {
                    for &force_variant in &forces {
                        for &seed in &seeds {
                            out.push(Cell {
                                rewire,
                                embeddings: embeddings.clone(),
                                energy_head,
                                force_variant,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: Cell,
    pub report: Option<RunReport>,
    pub error: Option<String>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One line per cell. `improvement_pct` is against the baseline cell with
    /// the same seed and force variant; negative values are improvements.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Data(e.to_string()))?;
        let mut header = vec![
            "rewire",
            "embeddings",
            "energy_head",
            "force_variant",
            "seed",
            "status",
            "avg_e_mae_mev",
        ];
        let split_cols: Vec<String> = Split::VALIDATION.iter().map(|s| format!("{s}_e_mae_mev")).collect();
        header.extend(split_cols.iter().map(|s| s.as_str()));
        header.extend([
            "avg_f_mae_mev_per_A",
            "val_id_ec_dist",
            "val_id_ec_cos",
            "improvement_pct",
            "improved",
            "train_seconds",
        ]);
        w.write_record(&header).map_err(|e| HarnessError::Data(e.to_string()))?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for row in &self.rows {
            let c = &row.cell;
            let r = row.report.as_ref();
            let mut rec = vec![
                c.rewire.to_string(),
                c.embeddings.clone(),
                format!("{:?}", c.energy_head).to_lowercase(),
                c.force_variant.map(|v| v.name().to_string()).unwrap_or_default(),
                c.seed.to_string(),
                row.error
                    .clone()
                    .map(|e| format!("error: {e}"))
                    .unwrap_or_else(|| "ok".into()),
                fmt(r.map(|r| r.average_e_mae_mev)),
            ];
            for s in Split::VALIDATION {
                rec.push(fmt(r.and_then(|r| r.split(s)).map(|m| m.e_mae_mev)));
            }
            let vid = r.and_then(|r| r.split(Split::ValId));
            let imp = r.and_then(|r| r.improvement_pct);
            rec.extend([
                fmt(r.and_then(|r| r.average_f_mae_mev_per_a)),
                fmt(vid.and_then(|m| m.ec_dist)),
                fmt(vid.and_then(|m| m.ec_cos)),
                fmt(imp),
                imp.map(|v| (v < 0.0).to_string()).unwrap_or_default(),
                format!("{:.3}", row.train_seconds),
            ]);
            w.write_record(&rec).map_err(|e| HarnessError::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }
}

/// Trains and evaluates every cell. Failing cells are recorded and the grid continues.
pub fn run_ablation(grid: &AblationGrid, table: &ElementTable) -> Result<AblationTable, HarnessError> {
    let records = load_records(&grid.base, table)?;
    run_ablation_on(grid, table, &records)
}

pub fn run_ablation_on(
    grid: &AblationGrid,
    table: &ElementTable,
    records: &Records,
) -> Result<AblationTable, HarnessError> {
    let lambda_ec = grid.lambda_ec.unwrap_or(0.1);
    let mut cache: HashMap<RewireStrategy, PreparedData> = HashMap::new();
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let t0 = Instant::now();
        let result = cell.config(&grid.base, lambda_ec).and_then(|cfg| {
            if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(cfg.rewire) {
                slot.insert(prepare_data(&cfg, records)?);
            }
            log::info!("ablation cell {}", cfg.name);
            train_on(&cfg, table, &cache[&cfg.rewire], None)
        });
        let train_seconds = t0.elapsed().as_secs_f64();
        rows.push(match result {
            Ok(outcome) => AblationRow {
                cell,
                report: Some(outcome.report),
                error: None,
                train_seconds,
            },
            Err(e) => {
                log::warn!("ablation cell {} failed: {e}", cell.label());
                AblationRow {
                    cell,
                    report: None,
                    error: Some(e.to_string()),
                    train_seconds,
                }
            }
        });
    }
    let baselines: Vec<(u64, Option<ForceVariant>, RunReport)> = rows
        .iter()
        .filter(|r| r.cell.is_baseline())
        .filter_map(|r| r.report.clone().map(|rep| (r.cell.seed, r.cell.force_variant, rep)))
        .collect();
    for row in &mut rows {
        let Some(rep) = row.report.as_mut() else { continue };
        if let Some((_, _, base)) = baselines
            .iter()
            .find(|(s, f, _)| *s == row.cell.seed && *f == row.cell.force_variant)
        {
            rep.compare_to(base, &format!("baseline seed {}", row.cell.seed)).ok();
        }
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_grid_has_four_cells() {
        let grid = AblationGrid {
            rewire: vec![RewireStrategy::None, RewireStrategy::RemoveTag0],
            energy_heads: vec![EnergyHeadKind::GlobalSum, EnergyHeadKind::WInit],
            ..Default::default()
        };
        let cells = grid.cells();
        assert_eq!(cells.len(), 4);
        assert!(cells[0].is_baseline());
        assert!(!cells[3].is_baseline());
    }

    #[test]
    fn cells_build_valid_configs() {
        let grid = AblationGrid {
            embeddings: EmbeddingConfig::VARIANTS.iter().map(|s| s.to_string()).collect(),
            force_variants: ForceVariant::ALL.to_vec(),
            ..Default::default()
        };
        assert_eq!(grid.cells().len(), 24);
        for c in grid.cells() {
            let cfg = c.config(&grid.base, 0.1).unwrap();
            assert_eq!(cfg.task, crate::harness::Task::S2ef);
        }
    }
}
