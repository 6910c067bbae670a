//! Invariant message-passing backbones with energy and force heads.
//!
//! A [`Model`] owns its parameters. Batches are first turned into a
//! [`Prepared`] value holding every position-independent index array, so
//! timing the forward pass excludes data handling. Positions enter the
//! computation as an engine value and every geometric quantity is derived
//! from them inside the engine, which is what makes forces available as
//! `−∂E/∂x`.

mod checkpoint;
mod dimelite;
mod heads;
mod schnet;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Engine, Eval, ParamId, ParamStore, Tape};
use crate::elements::ElementTable;
use crate::embed::{EmbedError, Embedder, EmbeddingConfig, EmbeddingInputs};
use crate::matrix::Matrix;
use crate::types::Batch;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dimelite::{enumerate_wedges, Wedges};
pub use heads::{DirectForceHead, EnergyReadout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    SchnetLite,
    Dimelite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub hidden: usize,
    pub layers: usize,
    pub rbf_count: usize,
    pub angular_count: usize,
    pub cutoff: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::SchnetLite,
            hidden: 32,
            layers: 2,
            rbf_count: 16,
            angular_count: 4,
            cutoff: crate::graph::DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyHeadKind {
    #[default]
    GlobalSum,
    WInit,
    WFinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceHeadKind {
    #[default]
    None,
    FromEnergy,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct HeadConfig {
    pub energy_head: EnergyHeadKind,
    pub force_head: ForceHeadKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub heads: HeadConfig,
    pub embeddings: EmbeddingConfig,
}

/// Affine map from the raw network output to physical units:
/// `E = energy_scale·raw + energy_shift`, `F = force_scale·raw_force`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub energy_scale: f64,
    pub energy_shift: f64,
    pub force_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            energy_scale: 1.0,
            energy_shift: 0.0,
            force_scale: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("edge {0} has zero length")]
    ZeroDistance(usize),
    #[error("graph {0} has no nodes")]
    EmptyGraph(usize),
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.layers == 0 || self.rbf_count == 0 {
            return Err(ModelError::Config("hidden, layers and rbf_count must be >= 1".into()));
        }
        if self.kind == BackboneKind::Dimelite && self.angular_count == 0 {
            return Err(ModelError::Config("dimelite needs angular_count >= 1".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(ModelError::Config("cutoff must be positive".into()));
        }
        Ok(())
    }

    /// Gaussian centers evenly spaced on `[0, cutoff]` and the matching width.
    pub fn rbf(&self) -> (Arc<[f64]>, f64) {
        let k = self.rbf_count;
        let spacing = if k > 1 {
            self.cutoff / (k - 1) as f64
        } else {
            self.cutoff
        };
        let centers: Vec<f64> = (0..k).map(|i| i as f64 * spacing).collect();
        (centers.into(), 0.5 / (spacing * spacing))
    }
}

/// Dense layer `x·W + b` with `W` drawn from `±1/sqrt(fan_in)`, or zeros.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        zero: bool,
    ) -> Self {
        let bound = if zero { 0.0 } else { 1.0 / (fan_in as f64).sqrt() };
        let w = store.add_uniform(format!("{name}.w"), fan_in, fan_out, bound, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), 1, fan_out, bound, rng));
        Self { w, b }
    }

    pub fn apply<E: Engine>(&self, e: &mut E, store: &ParamStore, x: &E::V) -> E::V {
        let w = e.param(self.w, store.value(self.w));
        let b = self.b.map(|b| e.param(b, store.value(b)));
        e.linear(x, &w, b.as_ref())
    }
}

/// Position-independent arrays for one batch.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub batch: Batch,
    pub embed: EmbeddingInputs,
    /// `offset·cell` per edge (E×3).
    pub shifts: Matrix,
    pub positions: Matrix,
    pub wedges: Option<Wedges>,
    /// False for supernode rows, which take no part in force losses.
    pub force_mask: Vec<bool>,
}

impl Prepared {
    pub fn num_graphs(&self) -> usize {
        self.batch.num_graphs()
    }

    pub fn num_nodes(&self) -> usize {
        self.batch.num_nodes()
    }

    pub fn energy_labels(&self) -> Option<Vec<f64>> {
        self.batch.systems().iter().map(|s| s.energy).collect()
    }

    /// Stacked force labels (N×3); supernode rows are zero.
    pub fn force_labels(&self) -> Option<Matrix> {
        let mut rows = Vec::with_capacity(self.num_nodes());
        for s in self.batch.systems() {
            let f = s.forces.as_ref()?;
            rows.extend(f.iter().copied());
        }
        Some(Matrix::from_rows(&rows))
    }
}

/// Values produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Outputs<V> {
    /// Per-graph energy in eV (G×1).
    pub energy: V,
    /// Direct force predictions (N×3) when that head is configured.
    pub direct_forces: Option<V>,
    /// True when the batch had no edges and no messages were exchanged.
    pub no_edges: bool,
}

/// Numbers returned by [`Model::infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub energies: Vec<f64>,
    pub forces: Option<Matrix>,
    /// Tape nodes recorded for this batch; 0 when no tape was needed.
    pub tape_nodes: usize,
}

/// Output of [`Model::energy_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGradient {
    pub energies: Vec<f64>,
    pub gradient: Matrix,
    pub tape_nodes: usize,
}

#[derive(Debug, Clone)]
enum Backbone {
    Schnet(schnet::SchnetLite),
    Dime(dimelite::DimeLite),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub normalization: Normalization,
    /// Replaces the learned weights α with a constant; used to test that a
    /// weighted readout reduces to a plain sum.
    pub alpha_override: Option<f64>,
    embedder: Embedder,
    input: Dense,
    backbone: Backbone,
    energy: EnergyReadout,
    direct: Option<DirectForceHead>,
    rbf_centers: Arc<[f64]>,
    rbf_gamma: f64,
}

impl Model {
    pub fn new(config: ModelConfig, table: &ElementTable, seed: u64) -> Result<Self, ModelError> {
        config.backbone.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedder = Embedder::new(config.embeddings, table, &mut store, &mut rng)?;
        let bb = config.backbone;
        let d0 = embedder.output_width();
        let input = Dense::new(&mut store, &mut rng, "input", d0, bb.hidden, true, false);
        let backbone = match bb.kind {
            BackboneKind::SchnetLite => Backbone::Schnet(schnet::SchnetLite::new(&bb, &mut store, &mut rng)),
            BackboneKind::Dimelite => Backbone::Dime(dimelite::DimeLite::new(&bb, &mut store, &mut rng)),
        };
        let energy = EnergyReadout::new(config.heads.energy_head, d0, bb.hidden, &mut store, &mut rng);
        let direct = (config.heads.force_head == ForceHeadKind::Direct)
            .then(|| DirectForceHead::new(bb.hidden, bb.rbf_count, &mut store, &mut rng));
        let (rbf_centers, rbf_gamma) = bb.rbf();
        Ok(Self {
            config,
            store,
            normalization: Normalization::default(),
            alpha_override: None,
            embedder,
            input,
            backbone,
            energy,
            direct,
            rbf_centers,
            rbf_gamma,
        })
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn needs_wedges(&self) -> bool {
        matches!(self.backbone, Backbone::Dime(_))
    }

    /// Collects the index arrays a forward pass needs.
    pub fn prepare(&self, batch: Batch) -> Result<Prepared, ModelError> {
        for g in 0..batch.num_graphs() {
            if batch.node_range(g).is_empty() {
                return Err(ModelError::EmptyGraph(g));
            }
        }
        let embed = self.embedder.inputs(&batch)?;
        let shifts = Matrix::from_rows(&batch.edge_shifts());
        let positions = Matrix::from_rows(&batch.positions());
        let wedges = self.needs_wedges().then(|| enumerate_wedges(&batch));
        let force_mask = batch.cardinalities().iter().map(|c| c.is_none()).collect();
        Ok(Prepared {
            batch,
            embed,
            shifts,
            positions,
            wedges,
            force_mask,
        })
    }

    /// Edge vectors (E×3), lengths (E×1) and radial features (E×K) from positions.
    fn geometry<E: Engine>(&self, e: &mut E, p: &Prepared, pos: &E::V) -> (E::V, E::V, E::V) {
        let src = p.batch.src();
        let dst = p.batch.dst();
        let xs = e.gather_rows(pos, src);
        let xd = e.gather_rows(pos, dst);
        let diff = e.sub(&xd, &xs);
        let shift = e.constant(p.shifts.clone());
        let vec = e.add(&diff, &shift);
        let d = e.norm_rows(&vec);
        let rbf = e.gaussian_rbf(&d, &self.rbf_centers, self.rbf_gamma);
        (vec, d, rbf)
    }

    /// Full forward pass from positions `pos` (N×3).
    pub fn forward<E: Engine>(&self, e: &mut E, p: &Prepared, pos: &E::V) -> Result<Outputs<E::V>, ModelError> {
        let store = &self.store;
        let h0 = self.embedder.forward(e, store, &p.embed);
        let x0 = self.input.apply(e, store, &h0);
        let no_edges = p.batch.num_edges() == 0;
        let (vec, d, rbf) = self.geometry(e, p, pos);
        if let Some(k) = e.value(&d).as_slice().iter().position(|&v| v == 0.0) {
            return Err(ModelError::ZeroDistance(k));
        }
        let hl = match &self.backbone {
            Backbone::Schnet(m) => m.forward(e, store, p, &x0, &rbf),
            Backbone::Dime(m) => m.forward(e, store, p, &x0, &vec, &rbf),
        };
        let alpha_src = match self.config.heads.energy_head {
            EnergyHeadKind::WFinal => Some(&hl),
            EnergyHeadKind::WInit => Some(&h0),
            EnergyHeadKind::GlobalSum => None,
        };
        let raw = self.energy.forward(e, store, p, &hl, alpha_src, self.alpha_override);
        let n = self.normalization;
        let scaled = e.scale(&raw, n.energy_scale);
        let shift = e.constant(Matrix::filled(p.num_graphs(), 1, n.energy_shift));
        let energy = e.add(&scaled, &shift);
        let direct_forces = match &self.direct {
            Some(head) => {
                let f = head.forward(e, store, p, &hl, &vec, &d, &rbf);
                Some(e.scale(&f, n.force_scale))
            }
            None => None,
        };
        Ok(Outputs {
            energy,
            direct_forces,
            no_edges,
        })
    }

    /// Final node embeddings only (N×hidden), evaluated without recording.
    pub fn embeddings(&self, p: &Prepared) -> Matrix {
        let mut e = Eval;
        let store = &self.store;
        let h0 = self.embedder.forward(&mut e, store, &p.embed);
        let x0 = self.input.apply(&mut e, store, &h0);
        let pos = e.constant(p.positions.clone());
        let (vec, _, rbf) = self.geometry(&mut e, p, &pos);
        let hl = match &self.backbone {
            Backbone::Schnet(m) => m.forward(&mut e, store, p, &x0, &rbf),
            Backbone::Dime(m) => m.forward(&mut e, store, p, &x0, &vec, &rbf),
        };
        (*hl).clone()
    }

    /// Energies and, when a force head is configured, forces for one batch.
    ///
    /// Direct and energy-only heads run without a tape. The from-energy head
    /// records a tape that tracks positions only and backpropagates the summed
    /// energy; graphs are disjoint, so each atom receives its own graph's gradient.
    pub fn infer(&self, p: &Prepared) -> Result<Predictions, ModelError> {
        match self.config.heads.force_head {
            ForceHeadKind::FromEnergy => {
                let g = self.energy_gradient(p)?;
                Ok(Predictions {
                    energies: g.energies,
                    forces: Some(g.gradient.map(|v| -v)),
                    tape_nodes: g.tape_nodes,
                })
            }
            _ => {
                let mut e = Eval;
                let pos = e.constant(p.positions.clone());
                let out = self.forward(&mut e, p, &pos)?;
                Ok(Predictions {
                    energies: out.energy.as_slice().to_vec(),
                    forces: out.direct_forces.map(|f| (*f).clone()),
                    tape_nodes: 0,
                })
            }
        }
    }

    /// Per-graph energies and `∂E/∂x` (N×3), recording positions only.
    pub fn energy_gradient(&self, p: &Prepared) -> Result<EnergyGradient, ModelError> {
        let mut t = Tape::inputs_only();
        let pos = t.input(p.positions.clone());
        let out = self.forward(&mut t, p, &pos)?;
        let energies = t.value(&out.energy).as_slice().to_vec();
        let total = t.sum_all(&out.energy);
        let tape_nodes = t.len();
        let g = t.backward(total)?;
        Ok(EnergyGradient {
            energies,
            gradient: g.wrt_or_zeros(pos, p.num_nodes(), 3),
            tape_nodes,
        })
    }

    /// Energy of a single prepared batch evaluated at `positions`, summed over graphs.
    pub fn total_energy_at(&self, p: &Prepared, positions: &Matrix) -> Result<f64, ModelError> {
        let mut e = Eval;
        let pos = e.constant(positions.clone());
        let out = self.forward(&mut e, p, &pos)?;
        Ok(out.energy.sum())
    }
}
