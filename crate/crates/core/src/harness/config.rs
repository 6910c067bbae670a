use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::GeneratorConfig;
use crate::embed::EmbeddingConfig;
use crate::graph::GraphBuildConfig;
use crate::losses::{EcKind, LossWeights};
use crate::models::{BackboneConfig, EnergyHeadKind, ForceHeadKind, HeadConfig, ModelConfig};
use crate::rewire::RewireStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Is2re,
    S2ef,
}

/// How the energy-gradient target of the gradient-target loss is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EcMode {
    /// `∇E` is a constant target; only the direct head receives gradient.
    #[default]
    StopGradient,
    /// The energy parameters also receive the gradient through `∇E`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Learning rate reached at the last step of the cosine schedule.
    pub lr_min: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Rescales the full gradient to at most this global norm.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            lr_min: 1e-5,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

/// Where samples come from: a directory of `<split>.jsonl` files, or a
/// generator config evaluated in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub generator: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub backbone: BackboneConfig,
    pub rewire: RewireStrategy,
    pub graph: GraphBuildConfig,
    pub embeddings: EmbeddingConfig,
    pub heads: HeadConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Graphs per independently differentiated work unit; 0 uses whole batches.
    pub micro_batch: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data: DataConfig,
    pub ec_mode: EcMode,
    /// Evaluate on `val_id` after every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            task: Task::Is2re,
            backbone: BackboneConfig::default(),
            rewire: RewireStrategy::None,
            graph: GraphBuildConfig::default(),
            embeddings: EmbeddingConfig::default(),
            heads: HeadConfig::default(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            micro_batch: 8,
            eval_batch_size: 32,
            epochs: 30,
            seed: 0,
            data: DataConfig::default(),
            ec_mode: EcMode::StopGradient,
            eval_every: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            heads: self.heads,
            embeddings: self.embeddings,
        }
    }

    /// Graph construction settings; the cutoff always follows the backbone.
    pub fn graph_config(&self) -> GraphBuildConfig {
        GraphBuildConfig {
            cutoff: self.backbone.cutoff,
            ..self.graph
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.backbone
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.embeddings
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.graph_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let l = &self.loss;
        if !(l.lambda_e > 0.0) {
            return bad(format!("lambda_e must be positive, got {}", l.lambda_e));
        }
        if !(l.lambda_f >= 0.0 && l.lambda_ec >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(l.eps > 0.0) {
            return bad("loss eps must be positive".into());
        }
        match self.task {
            Task::Is2re => {
                if self.heads.force_head != ForceHeadKind::None || l.lambda_f != 0.0 || self.uses_ec() {
                    return bad("is2re runs need force_head none and lambda_f = lambda_ec = 0".into());
                }
            }
            Task::S2ef => {
                if self.heads.force_head == ForceHeadKind::None {
                    return bad("s2ef runs need a force head".into());
                }
                if self.uses_ec() && self.heads.force_head != ForceHeadKind::Direct {
                    return bad("energy-conservation losses need the direct force head".into());
                }
            }
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr_min >= 0.0 && o.lr_min <= o.lr) {
            return bad("optimizer needs 0 <= lr_min <= lr and lr > 0".into());
        }
        if !(0.0..1.0).contains(&o.betas[0]) || !(0.0..1.0).contains(&o.betas[1]) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(o.weight_decay >= 0.0) || o.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("weight_decay must be >= 0 and grad_clip > 0".into());
        }
        if self.data.dir.is_some() && self.data.generator.is_some() {
            return bad("give either data.dir or data.generator, not both".into());
        }
        if let Some(g) = &self.data.generator {
            g.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// True when an energy-conservation term contributes to the objective.
    pub fn uses_ec(&self) -> bool {
        self.loss.ec_kind != EcKind::None && self.loss.lambda_ec > 0.0
    }

    /// Config echo stored in checkpoints and reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// The S2EF force-head variants compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceVariant {
    /// Forces as the negative energy gradient.
    Fe,
    /// Separate force head.
    Direct,
    /// Direct head plus the gradient-target loss.
    Grad,
    /// Direct head plus the cosine loss against the force labels.
    Cos,
}

impl ForceVariant {
    pub const ALL: [ForceVariant; 4] = [
        ForceVariant::Fe,
        ForceVariant::Direct,
        ForceVariant::Grad,
        ForceVariant::Cos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForceVariant::Fe => "FE",
            ForceVariant::Direct => "Direct",
            ForceVariant::Grad => "Grad",
            ForceVariant::Cos => "Cos",
        }
    }

    /// Sets the force head and energy-conservation loss; `lambda_ec` is used
    /// by the Grad and Cos variants.
    pub fn apply(self, cfg: &mut ExperimentConfig, lambda_ec: f64) {
        cfg.task = Task::S2ef;
        if cfg.loss.lambda_f == 0.0 {
            cfg.loss.lambda_f = 1.0;
        }
        let (head, ec) = match self {
            ForceVariant::Fe => (ForceHeadKind::FromEnergy, EcKind::None),
            ForceVariant::Direct => (ForceHeadKind::Direct, EcKind::None),
            ForceVariant::Grad => (ForceHeadKind::Direct, EcKind::GradTarget),
            ForceVariant::Cos => (ForceHeadKind::Direct, EcKind::Cosine),
        };
        cfg.heads.force_head = head;
        cfg.loss.ec_kind = ec;
        cfg.loss.lambda_ec = if ec == EcKind::None { 0.0 } else { lambda_ec };
    }
}

impl std::str::FromStr for ForceVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ForceVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown force variant '{s}'"))
    }
}

/// The reference configuration: full graph, element embedding only, plain sum readout.
pub fn baseline_config(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        rewire: RewireStrategy::None,
        embeddings: EmbeddingConfig::default(),
        heads: HeadConfig {
            energy_head: EnergyHeadKind::GlobalSum,
            ..base.heads
        },
        ..base.clone()
    }
}

/// Sub-surface removal, every embedding source and the initial-embedding weighted readout.
pub fn improved_config(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        rewire: RewireStrategy::RemoveTag0,
        embeddings: EmbeddingConfig::variant("all").expect("known variant"),
        heads: HeadConfig {
            energy_head: EnergyHeadKind::WInit,
            ..base.heads
        },
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn is2re_rejects_force_terms() {
        let mut c = ExperimentConfig::default();
        c.loss.lambda_f = 1.0;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn force_variants_configure_s2ef() {
        let mut c = ExperimentConfig::default();
        ForceVariant::Grad.apply(&mut c, 0.1);
        c.validate().unwrap();
        assert_eq!(c.heads.force_head, ForceHeadKind::Direct);
        assert_eq!(c.loss.ec_kind, EcKind::GradTarget);
        let mut c = ExperimentConfig::default();
        ForceVariant::Fe.apply(&mut c, 0.1);
        c.validate().unwrap();
        assert_eq!(c.loss.lambda_ec, 0.0);
        assert_eq!("cos".parse::<ForceVariant>().unwrap(), ForceVariant::Cos);
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), c);
        assert!(ExperimentConfig::from_json_str(r#"{"epochz": 3}"#).is_err());
        let partial = ExperimentConfig::from_json_str(r#"{"rewire": "remove_tag0", "epochs": 2}"#).unwrap();
        assert_eq!(partial.rewire, RewireStrategy::RemoveTag0);
        assert_eq!(partial.batch_size, 32);
    }

    #[test]
    fn reference_cells() {
        let base = ExperimentConfig::default();
        let b = baseline_config(&base);
        assert_eq!(b.rewire, RewireStrategy::None);
        assert_eq!(b.embeddings, EmbeddingConfig::default());
        let p = improved_config(&base);
        assert_eq!(p.heads.energy_head, EnergyHeadKind::WInit);
        assert!(p.embeddings.use_tag && p.embeddings.use_phys && p.embeddings.use_period_group);
    }
}
