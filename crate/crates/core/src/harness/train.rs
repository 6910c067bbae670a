//! Mini-batch training.
//!
//! Each batch is cut into micro-batches that are differentiated
//! independently (in parallel) and whose gradients are summed in micro-batch
//! order. Loss terms are normalized by batch-level counts, so the sum equals
//! the gradient of the whole-batch objective.
//!
//! Force losses on forces derived from the energy, and the exact variant of
//! the gradient-target loss, need `∂(∇ₓE)/∂θ`. That term is obtained as a
//! central difference of parameter gradients of the energy taken at
//! positions displaced along the loss adjoint `u`:
//! `∂/∂θ (u·∇ₓE) ≈ (∇_θ E(x + hu) − ∇_θ E(x − hu)) / 2h`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EcMode, ExperimentConfig, Task};
use super::dataset::{build_samples, load_records, Records};
use super::eval::{evaluate_samples, selection_score, RunReport, SplitMetrics};
use super::optim::{cosine_lr, grad_norm, Adam};
use super::HarnessError;
use crate::autodiff::{merge_grads, Engine, ParamGrads, Tape};
use crate::data::Split;
use crate::elements::ElementTable;
use crate::losses::{self, EcKind};
use crate::matrix::Matrix;
use crate::models::{save_checkpoint, ForceHeadKind, Model, Normalization, Prepared};
use crate::types::{make_batch, AtomicSystem, Graph};

/// Largest displacement (Å) of any atom in the difference quotient.
const HVP_DISPLACEMENT: f64 = 1e-4;

pub type Sample = (AtomicSystem, Graph);

/// Loss values of one batch or epoch, before the λ weights except for `total`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub energy: f64,
    pub force: f64,
    pub ec: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.energy += o.energy;
        self.force += o.force;
        self.ec += o.ec;
    }

    fn scaled(mut self, c: f64) -> Self {
        self.total *= c;
        self.energy *= c;
        self.force *= c;
        self.ec *= c;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossParts,
    pub val: Option<SplitMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation score.
    pub best: Model,
    pub last: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub report: RunReport,
}

/// Counts shared by every micro-batch of one batch.
#[derive(Debug, Clone, Copy)]
struct BatchCounts {
    graphs: usize,
    atoms: usize,
}

/// Shift and scale from the train labels. The shift is the mean energy; the
/// scale is the population standard deviation of the energies divided by the
/// mean node count, so one unit of raw per-atom output moves a typical graph
/// by one standard deviation. Forces use the root mean square component.
pub fn fit_normalization(samples: &[Sample], task: Task) -> Normalization {
    let energies: Vec<f64> = samples.iter().filter_map(|(s, _)| s.energy).collect();
    let mut n = Normalization::default();
    if energies.is_empty() {
        return n;
    }
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let var = energies.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / energies.len() as f64;
    n.energy_shift = mean;
    let mean_nodes = samples.iter().map(|(s, _)| s.num_atoms()).sum::<usize>() as f64 / samples.len() as f64;
    n.energy_scale = if var > 0.0 { var.sqrt() / mean_nodes } else { 1.0 };
    if task == Task::S2ef {
        let (mut sq, mut count) = (0.0, 0usize);
        for (s, _) in samples {
            if let Some(f) = &s.forces {
                for (i, row) in f.iter().enumerate() {
                    if !s.is_supernode(i) {
                        sq += row.iter().map(|v| v * v).sum::<f64>();
                        count += 3;
                    }
                }
            }
        }
        if count > 0 && sq > 0.0 {
            n.force_scale = (sq / count as f64).sqrt();
        }
    }
    n
}

pub(crate) fn prepare_batch(model: &Model, samples: &[&Sample]) -> Result<Prepared, HarnessError> {
    let systems = samples.iter().map(|s| s.0.clone()).collect();
    let graphs = samples.iter().map(|s| s.1.clone()).collect();
    let batch = make_batch(systems, graphs).map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok(model.prepare(batch)?)
}

fn add_scaled(acc: &mut ParamGrads, g: &ParamGrads, c: f64) {
    for (id, m) in g {
        match acc.get_mut(id) {
            Some(a) => crate::matrix::axpy(c, m.as_slice(), a.as_mut_slice()),
            None => {
                acc.insert(*id, m.map(|v| c * v));
            }
        }
    }
}

/// Parameter gradients of the summed energy at `positions`.
fn energy_param_grads(model: &Model, p: &Prepared, positions: Matrix) -> Result<ParamGrads, HarnessError> {
    let mut t = Tape::new();
    let pos = t.constant(positions);
    let out = model.forward(&mut t, p, &pos)?;
    let total = t.sum_all(&out.energy);
    Ok(t.backward(total).map_err(crate::models::ModelError::from)?.params)
}

/// Adds `∂/∂θ (u·∇ₓE)` to `grads`.
fn add_hvp(model: &Model, p: &Prepared, u: &Matrix, grads: &mut ParamGrads) -> Result<(), HarnessError> {
    let umax = u.max_abs();
    if umax == 0.0 {
        return Ok(());
    }
    let h = HVP_DISPLACEMENT / umax;
    let mut plus = p.positions.clone();
    crate::matrix::axpy(h, u.as_slice(), plus.as_mut_slice());
    let mut minus = p.positions.clone();
    crate::matrix::axpy(-h, u.as_slice(), minus.as_mut_slice());
    let gp = energy_param_grads(model, p, plus)?;
    let gm = energy_param_grads(model, p, minus)?;
    add_scaled(grads, &gp, 0.5 / h);
    add_scaled(grads, &gm, -0.5 / h);
    Ok(())
}

fn mask_count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// Loss and parameter gradients of one micro-batch, normalized by `counts`.
fn micro_gradients(
    model: &Model,
    cfg: &ExperimentConfig,
    p: &Prepared,
    counts: BatchCounts,
) -> Result<(LossParts, ParamGrads), HarnessError> {
    let lw = cfg.loss;
    let labels = p
        .energy_labels()
        .ok_or_else(|| HarnessError::Data("training sample without an energy label".into()))?;
    let w_e = p.num_graphs() as f64 / counts.graphs as f64;
    let s2ef = cfg.task == Task::S2ef;
    let mask = &p.force_mask;
    let atoms = mask_count(mask);
    let w_a = atoms as f64 / counts.atoms.max(1) as f64;
    let force_labels = if s2ef {
        Some(
            p.force_labels()
                .ok_or_else(|| HarnessError::Data("s2ef sample without force labels".into()))?,
        )
    } else {
        None
    };
    let head = model.config.heads.force_head;
    let ec = if cfg.uses_ec() { lw.ec_kind } else { EcKind::None };
    let needs_gradient = (s2ef && head == ForceHeadKind::FromEnergy && lw.lambda_f > 0.0) || ec == EcKind::GradTarget;
    let energy_grad = if needs_gradient {
        Some(model.energy_gradient(p)?.gradient)
    } else {
        None
    };

    let mut parts = LossParts::default();
    let mut t = Tape::new();
    let pos = t.constant(p.positions.clone());
    let out = model.forward(&mut t, p, &pos)?;
    let le = losses::energy_term(&mut t, &out.energy, &labels);
    parts.energy = t.value(&le).item() * w_e;
    let mut total = t.scale(&le, lw.lambda_e * w_e);
    let mut direct_values = None;
    if let (Some(direct), Some(y)) = (&out.direct_forces, &force_labels) {
        if atoms > 0 {
            let lf = losses::force_term(&mut t, direct, y, mask);
            parts.force = t.value(&lf).item() * w_a;
            let term = t.scale(&lf, lw.lambda_f * w_a);
            total = t.add(&total, &term);
            let lec = match ec {
                EcKind::GradTarget => {
                    let g = energy_grad
                        .as_ref()
                        .expect("gradient computed for the gradient-target loss");
                    let w = if lw.ec_raw_sum { 1.0 } else { w_a };
                    let v = losses::ec_grad_term(&mut t, direct, g, mask, lw.ec_raw_sum);
                    Some((v, w))
                }
                EcKind::Cosine => Some((losses::ec_cosine_term(&mut t, direct, y, mask, lw.eps), w_a)),
                EcKind::None => None,
            };
            if let Some((v, w)) = lec {
                parts.ec = t.value(&v).item() * w;
                let term = t.scale(&v, lw.lambda_ec * w);
                total = t.add(&total, &term);
            }
        }
        direct_values = Some(t.value(direct).clone());
    }
    parts.total = t.value(&total).item();
    let mut grads = t.backward(total).map_err(crate::models::ModelError::from)?.params;

    // Terms that depend on ∇ₓE through the parameters.
    if let (ForceHeadKind::FromEnergy, Some(y), Some(g)) = (head, &force_labels, &energy_grad) {
        if atoms > 0 {
            let forces = g.map(|v| -v);
            parts.force = losses::loss_force(&forces, y, mask)? * w_a;
            parts.total += lw.lambda_f * parts.force;
            // u = −∂L/∂F for L = λ_F·w_a·mean‖F − y‖
            let c = lw.lambda_f / counts.atoms as f64;
            let mut u = Matrix::zeros(p.num_nodes(), 3);
            for i in (0..p.num_nodes()).filter(|&i| mask[i]) {
                let r: Vec<f64> = forces.row(i).iter().zip(y.row(i)).map(|(a, b)| a - b).collect();
                let norm = crate::matrix::dot(&r, &r).sqrt();
                if norm > 0.0 {
                    for (k, v) in r.iter().enumerate() {
                        u.set(i, k, -c * v / norm);
                    }
                }
            }
            add_hvp(model, p, &u, &mut grads)?;
        }
    }
    if cfg.ec_mode == EcMode::Exact && ec == EcKind::GradTarget && atoms > 0 {
        let (f, g) = (direct_values.as_ref().unwrap(), energy_grad.as_ref().unwrap());
        let c = if lw.ec_raw_sum { 1.0 } else { 1.0 / counts.atoms as f64 };
        let mut u = Matrix::zeros(p.num_nodes(), 3);
        for i in (0..p.num_nodes()).filter(|&i| mask[i]) {
            for k in 0..3 {
                u.set(i, k, 2.0 * lw.lambda_ec * c * (f.get(i, k) + g.get(i, k)));
            }
        }
        add_hvp(model, p, &u, &mut grads)?;
    }
    Ok((parts, grads))
}

/// Loss and summed gradients of one batch.
pub fn batch_gradients(
    model: &Model,
    cfg: &ExperimentConfig,
    batch: &[&Sample],
) -> Result<(LossParts, ParamGrads), HarnessError> {
    let counts = BatchCounts {
        graphs: batch.len(),
        atoms: batch
            .iter()
            .map(|(s, _)| (0..s.num_atoms()).filter(|&i| !s.is_supernode(i)).count())
            .sum(),
    };
    let size = if cfg.micro_batch == 0 {
        batch.len()
    } else {
        cfg.micro_batch
    };
    let results: Vec<Result<(LossParts, ParamGrads), HarnessError>> = batch
        .par_chunks(size.max(1))
        .map(|chunk| {
            let p = prepare_batch(model, chunk)?;
            micro_gradients(model, cfg, &p, counts)
        })
        .collect();
    let mut parts = LossParts::default();
    let mut grads = ParamGrads::new();
    for r in results {
        let (lp, g) = r?;
        parts.add(&lp);
        merge_grads(&mut grads, g);
    }
    Ok((parts, grads))
}

/// Shuffled index order for `epoch`; depends only on the seed and the epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Model-ready samples for the train and validation splits.
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub val: Vec<(Split, Vec<Sample>)>,
}

pub fn prepare_data(cfg: &ExperimentConfig, records: &Records) -> Result<PreparedData, HarnessError> {
    let build = cfg.graph_config();
    let meta = records.meta.as_ref();
    let train = build_samples(records.split(Split::Train), cfg.rewire, &build, meta)?;
    if train.is_empty() {
        return Err(HarnessError::Data("the train split is empty".into()));
    }
    let mut val = Vec::new();
    for s in Split::VALIDATION {
        let recs = records.split(s);
        if !recs.is_empty() {
            val.push((s, build_samples(recs, cfg.rewire, &build, meta)?));
        }
    }
    Ok(PreparedData { train, val })
}

/// Trains the configured model. With `out`, writes `last.ckpt` every epoch,
/// `best.ckpt` on validation improvement, `train_log.csv` and `metrics.json`.
pub fn train(cfg: &ExperimentConfig, table: &ElementTable, out: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let records = load_records(cfg, table)?;
    let data = prepare_data(cfg, &records)?;
    train_on(cfg, table, &data, out)
}

pub fn train_on(
    cfg: &ExperimentConfig,
    table: &ElementTable,
    data: &PreparedData,
    out: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let echo = cfg.to_json();
    let mut model = Model::new(cfg.model_config(), table, cfg.seed)?;
    model.normalization = fit_normalization(&data.train, cfg.task);
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(cfg.optimizer);
    let val_id = data.val.iter().find(|(s, _)| *s == Split::ValId).or(data.val.first());

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        let mut epoch_loss = LossParts::default();
        let mut lr = cfg.optimizer.lr;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (parts, grads) = batch_gradients(&model, cfg, &batch)?;
            let gnorm = grad_norm(&grads);
            if !parts.total.is_finite() || !gnorm.is_finite() {
                return Err(HarnessError::Divergence(format!(
                    "epoch {epoch} step {step}: loss {} gradient norm {gnorm}",
                    parts.total
                )));
            }
            lr = cosine_lr(&cfg.optimizer, step, total_steps);
            adam.step(&mut model.store, &grads, lr);
            if !model.store.values_finite() {
                return Err(HarnessError::Divergence(format!(
                    "epoch {epoch} step {step}: non-finite parameters"
                )));
            }
            epoch_loss.add(&parts.scaled(batch.len() as f64));
            step += 1;
        }
        let epoch_loss = epoch_loss.scaled(1.0 / n as f64);
        let last_epoch = epoch + 1 == cfg.epochs;
        let do_eval = val_id.is_some() && (last_epoch || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0));
        let val = match (do_eval, val_id) {
            (true, Some((split, samples))) => Some(evaluate_samples(&model, samples, *split, cfg.eval_batch_size)?),
            _ => None,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (energy {:.5} force {:.5} ec {:.5}) lr {lr:.2e}{}",
            epoch_loss.total,
            epoch_loss.energy,
            epoch_loss.force,
            epoch_loss.ec,
            val.as_ref()
                .map(|m| format!(" val e_mae {:.2} meV", m.e_mae_mev))
                .unwrap_or_default()
        );
        if let Some(m) = &val {
            let score = selection_score(m);
            if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch, model.clone()));
                if let Some(dir) = out {
                    save_checkpoint(dir.join("best.ckpt"), &model, &echo)?;
                }
            }
        }
        if let Some(dir) = out {
            save_checkpoint(dir.join("last.ckpt"), &model, &echo)?;
        }
        history.push(EpochLog {
            epoch,
            lr,
            train: epoch_loss,
            val,
        });
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => {
            if let Some(dir) = out {
                save_checkpoint(dir.join("best.ckpt"), &model, &echo)?;
            }
            (cfg.epochs - 1, model.clone())
        }
    };
    let mut splits = Vec::new();
    for (split, samples) in &data.val {
        splits.push(evaluate_samples(&best_model, samples, *split, cfg.eval_batch_size)?);
    }
    let report = RunReport::new(echo, splits);
    if let Some(dir) = out {
        write_history(&dir.join("train_log.csv"), &history)?;
        report.write(&dir.join("metrics.json"))?;
    }
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        history,
        report,
    })
}

fn write_history(path: &Path, history: &[EpochLog]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?);
    let mut text = String::from("epoch,lr,loss,loss_energy,loss_force,loss_ec,val_e_mae_mev,val_f_mae_mev_per_A\n");
    for h in history {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            h.epoch,
            h.lr,
            h.train.total,
            h.train.energy,
            h.train.force,
            h.train.ec,
            opt(h.val.as_ref().map(|m| m.e_mae_mev)),
            opt(h.val.as_ref().and_then(|m| m.f_mae_mev_per_a)),
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| HarnessError::io(path, e))
}
