use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use super::dataset::{build_samples, Records};
use super::train::{prepare_batch, Sample};
use super::HarnessError;
use crate::data::Split;
use crate::losses::{ec_cos, mae_improvement, metric_ec_dist, metric_mae, DEFAULT_EPS};
use crate::matrix::Matrix;
use crate::models::{ForceHeadKind, Model};

/// Per-split metrics; force and energy-conservation fields are `null`
/// for energy-only models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub e_mae_mev: f64,
    #[serde(rename = "f_mae_mev_per_A")]
    pub f_mae_mev_per_a: Option<f64>,
    pub ec_dist: Option<f64>,
    pub ec_cos: Option<f64>,
    pub n_samples: usize,
}

/// Lower is better: energy MAE, plus force MAE when forces are predicted.
pub fn selection_score(m: &SplitMetrics) -> f64 {
    m.e_mae_mev + m.f_mae_mev_per_a.unwrap_or(0.0)
}

pub fn version_stamp() -> String {
    format!("catgraph {}", env!("CARGO_PKG_VERSION"))
}

/// Deterministic evaluation results; timings live in [`super::BenchReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: serde_json::Value,
    pub splits: Vec<SplitMetrics>,
    /// Mean E-MAE over the validation splits present.
    pub average_e_mae_mev: f64,
    #[serde(rename = "average_f_mae_mev_per_A")]
    pub average_f_mae_mev_per_a: Option<f64>,
    /// `100·(MAE − MAE_baseline)/MAE_baseline` on the average E-MAE; negative
    /// values are improvements.
    pub improvement_pct: Option<f64>,
    pub baseline: Option<String>,
}

impl RunReport {
    pub fn new(config: serde_json::Value, splits: Vec<SplitMetrics>) -> Self {
        let val: Vec<&SplitMetrics> = splits.iter().filter(|m| m.split != Split::Train.name()).collect();
        let mean = |v: Vec<f64>| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let average_e_mae_mev = mean(val.iter().map(|m| m.e_mae_mev).collect());
        let forces: Option<Vec<f64>> = val.iter().map(|m| m.f_mae_mev_per_a).collect();
        let average_f_mae_mev_per_a = forces.filter(|f| !f.is_empty()).map(mean);
        Self {
            version: version_stamp(),
            config,
            splits,
            average_e_mae_mev,
            average_f_mae_mev_per_a,
            improvement_pct: None,
            baseline: None,
        }
    }

    pub fn split(&self, split: Split) -> Option<&SplitMetrics> {
        self.splits.iter().find(|m| m.split == split.name())
    }

    /// Fills in the improvement against `baseline`, named `name` in the report.
    pub fn compare_to(&mut self, baseline: &RunReport, name: &str) -> Result<f64, HarnessError> {
        let pct = mae_improvement(self.average_e_mae_mev, baseline.average_e_mae_mev)?;
        self.improvement_pct = Some(pct);
        self.baseline = Some(name.to_string());
        Ok(pct)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json_string()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }
}

/// Predictions for a whole split, batched in order.
#[derive(Debug, Clone)]
pub struct SplitPredictions {
    pub energies: Vec<f64>,
    pub energy_labels: Vec<f64>,
    /// Stacked over all non-supernode atoms.
    pub forces: Option<Matrix>,
    pub force_labels: Option<Matrix>,
    pub energy_gradient: Option<Matrix>,
    pub peak_tape_nodes: usize,
}

/// Runs the model over `samples`. Energy gradients are computed only when
/// `with_gradient` is set and the model has a force head.
pub fn predict_samples(
    model: &Model,
    samples: &[Sample],
    batch_size: usize,
    with_gradient: bool,
) -> Result<SplitPredictions, HarnessError> {
    let head = model.config.heads.force_head;
    let mut energies = Vec::with_capacity(samples.len());
    let mut energy_labels = Vec::with_capacity(samples.len());
    let (mut f_rows, mut y_rows, mut g_rows) = (Vec::new(), Vec::new(), Vec::new());
    let mut have_force_labels = true;
    let mut peak = 0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let p = prepare_batch(model, &refs)?;
        let pred = model.infer(&p)?;
        peak = peak.max(pred.tape_nodes);
        energies.extend_from_slice(&pred.energies);
        energy_labels.extend(
            chunk
                .iter()
                .map(|(s, _)| {
                    s.energy
                        .ok_or_else(|| HarnessError::Data(format!("{} has no energy label", s.sample_id)))
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
        if head == ForceHeadKind::None {
            continue;
        }
        let forces = pred.forces.expect("force head produces forces");
        let gradient = match head {
            ForceHeadKind::FromEnergy => Some(forces.map(|v| -v)),
            _ if with_gradient => Some(model.energy_gradient(&p)?.gradient),
            _ => None,
        };
        let labels = p.force_labels();
        have_force_labels &= labels.is_some();
        for i in (0..p.num_nodes()).filter(|&i| p.force_mask[i]) {
            f_rows.push(row3(&forces, i));
            if let Some(g) = &gradient {
                g_rows.push(row3(g, i));
            }
            if let Some(y) = &labels {
                y_rows.push(row3(y, i));
            }
        }
    }
    let forces = (head != ForceHeadKind::None).then(|| Matrix::from_rows(&f_rows));
    Ok(SplitPredictions {
        energies,
        energy_labels,
        force_labels: (forces.is_some() && have_force_labels).then(|| Matrix::from_rows(&y_rows)),
        energy_gradient: (forces.is_some() && (with_gradient || head == ForceHeadKind::FromEnergy))
            .then(|| Matrix::from_rows(&g_rows)),
        forces,
        peak_tape_nodes: peak,
    })
}

fn row3(m: &Matrix, i: usize) -> [f64; 3] {
    let r = m.row(i);
    [r[0], r[1], r[2]]
}

pub fn metrics_from_predictions(pred: &SplitPredictions, split: Split) -> Result<SplitMetrics, HarnessError> {
    let e_mae_mev = metric_mae(&pred.energies, &pred.energy_labels, 1000.0)?;
    let (mut f_mae, mut ec_dist, mut ec_c) = (None, None, None);
    if let (Some(f), Some(y)) = (&pred.forces, &pred.force_labels) {
        if f.rows() > 0 {
            let mask = vec![true; f.rows()];
            f_mae = Some(metric_mae(f.as_slice(), y.as_slice(), 1000.0)?);
            ec_c = Some(ec_cos(f, y, &mask, DEFAULT_EPS)?);
            if let Some(g) = &pred.energy_gradient {
                ec_dist = Some(metric_ec_dist(f, g, &mask)?);
            }
        }
    }
    Ok(SplitMetrics {
        split: split.name().to_string(),
        e_mae_mev,
        f_mae_mev_per_a: f_mae,
        ec_dist,
        ec_cos: ec_c,
        n_samples: pred.energies.len(),
    })
}

pub fn evaluate_samples(
    model: &Model,
    samples: &[Sample],
    split: Split,
    batch_size: usize,
) -> Result<SplitMetrics, HarnessError> {
    let pred = predict_samples(model, samples, batch_size, true)?;
    metrics_from_predictions(&pred, split)
}

/// Evaluates `model` on `splits` of `records`, built the way `cfg` trained it.
/// Fails when the config echo disagrees with the model about the task or heads.
pub fn evaluate_model(
    model: &Model,
    cfg: &ExperimentConfig,
    records: &Records,
    splits: &[Split],
) -> Result<RunReport, HarnessError> {
    if cfg.heads != model.config.heads {
        return Err(HarnessError::Config(format!(
            "config heads {:?} do not match checkpoint heads {:?}",
            cfg.heads, model.config.heads
        )));
    }
    if cfg.task == Task::Is2re && model.config.heads.force_head != ForceHeadKind::None {
        return Err(HarnessError::Config("is2re config with a force-head checkpoint".into()));
    }
    let build = cfg.graph_config();
    let mut metrics = Vec::with_capacity(splits.len());
    for &s in splits {
        if records.split(s).is_empty() {
            return Err(HarnessError::Data(format!("split {s} is missing or empty")));
        }
        let samples = build_samples(records.split(s), cfg.rewire, &build, records.meta.as_ref())?;
        metrics.push(evaluate_samples(model, &samples, s, cfg.eval_batch_size)?);
    }
    Ok(RunReport::new(cfg.to_json(), metrics))
}
