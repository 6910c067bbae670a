//! Per-atom input features: learnable element, tag, period and group tables,
//! a fixed table of standardized physical properties, and a sinusoidal
//! cardinality code for supernodes.
//!
//! Pieces are concatenated in the fixed order Z, T, F, P, G, cardinality.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Engine, ParamId, ParamStore};
use crate::elements::{ElementTable, MAX_ELEMENT, NUM_PROPERTIES};
use crate::matrix::Matrix;
use crate::rewire::{cardinality_encoding, RewireError};
use crate::types::{Batch, MAX_CODE, SUPERNODE_Z};

/// Width of the fixed property block: 11 properties plus one missing-value mask.
pub const PHYS_WIDTH: usize = NUM_PROPERTIES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub use_z: bool,
    pub use_tag: bool,
    pub use_phys: bool,
    pub learn_phys: bool,
    pub use_period_group: bool,
    pub d_z: usize,
    pub d_tag: usize,
    pub d_phys_out: usize,
    pub d_period: usize,
    pub d_group: usize,
    pub d_cardinality: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            use_z: true,
            use_tag: false,
            use_phys: false,
            learn_phys: false,
            use_period_group: false,
            d_z: 64,
            d_tag: 32,
            d_phys_out: 32,
            d_period: 16,
            d_group: 16,
            d_cardinality: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("no embedding source enabled")]
    NoSource,
    #[error("learn_phys requires use_phys")]
    LearnWithoutPhys,
    #[error("enabled source {0} has zero width")]
    ZeroWidth(&'static str),
    #[error("unknown atomic code {0}")]
    UnknownCode(u32),
    #[error("supernode cardinality requested but tag embedding disabled")]
    CardinalityWithoutTag,
    #[error("property column {0} is missing for every element")]
    EmptyColumn(&'static str),
    #[error("unknown embedding variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Encoding(#[from] RewireError),
}

impl EmbeddingConfig {
    /// Named ablation variants: `z` (element table only), `tag-embed`,
    /// `phys-embed`, `l-phys-embed`, `pg` and `all`.
    pub fn variant(name: &str) -> Result<Self, EmbedError> {
        let base = Self::default();
        let cfg = match name {
            "z" | "baseline" => base,
            "tag-embed" => Self { use_tag: true, ..base },
            "phys-embed" => Self { use_phys: true, ..base },
            "l-phys-embed" => Self {
                use_phys: true,
                learn_phys: true,
                ..base
            },
            "pg" => Self {
                use_period_group: true,
                ..base
            },
            "all" => Self {
                use_tag: true,
                use_phys: true,
                use_period_group: true,
                ..base
            },
            _ => return Err(EmbedError::UnknownVariant(name.to_string())),
        };
        Ok(cfg)
    }

    pub const VARIANTS: [&'static str; 6] = ["z", "tag-embed", "phys-embed", "l-phys-embed", "pg", "all"];

    pub fn validate(&self) -> Result<(), EmbedError> {
        if !(self.use_z || self.use_tag || self.use_phys || self.use_period_group) {
            return Err(EmbedError::NoSource);
        }
        if self.learn_phys && !self.use_phys {
            return Err(EmbedError::LearnWithoutPhys);
        }
        let checks = [
            (self.use_z, self.d_z, "z"),
            (self.use_tag, self.d_tag, "tag"),
            (self.learn_phys, self.d_phys_out, "phys"),
            (self.use_period_group, self.d_period, "period"),
            (self.use_period_group, self.d_group, "group"),
        ];
        for (on, width, name) in checks {
            if on && width == 0 {
                return Err(EmbedError::ZeroWidth(name));
            }
        }
        if !self.d_cardinality.is_multiple_of(2) {
            return Err(RewireError::BadEncodingDim(self.d_cardinality).into());
        }
        Ok(())
    }

    /// Widths of the Z, T, F, P, G and cardinality pieces (0 when disabled).
    pub fn piece_widths(&self) -> [usize; 6] {
        let on = |b: bool, w: usize| if b { w } else { 0 };
        let phys = match (self.use_phys, self.learn_phys) {
            (false, _) => 0,
            (true, false) => PHYS_WIDTH,
            (true, true) => self.d_phys_out,
        };
        [
            on(self.use_z, self.d_z),
            on(self.use_tag, self.d_tag),
            phys,
            on(self.use_period_group, self.d_period),
            on(self.use_period_group, self.d_group),
            self.d_cardinality,
        ]
    }

    pub fn total_width(&self) -> usize {
        self.piece_widths().iter().sum()
    }
}

/// Standardized property matrix with one row per atomic code `0..=MAX_CODE`.
///
/// Each property column is z-scored over the elements 1..=100 that have a
/// value (population standard deviation). Missing entries become 0 and set
/// the last (mask) column to 1. Zero-variance columns score to 0.
pub fn build_phys_matrix(table: &ElementTable) -> Result<Matrix, EmbedError> {
    let rows = MAX_CODE as usize + 1;
    let mut out = Matrix::zeros(rows, PHYS_WIDTH);
    for z in 0..rows {
        out.set(z, NUM_PROPERTIES, 1.0);
    }
    for (p, name) in crate::elements::PROPERTY_NAMES.iter().enumerate() {
        let values: Vec<(u32, f64)> = (1..=MAX_ELEMENT)
            .filter_map(|z| table.get(z).and_then(|r| r.properties[p]).map(|v| (z, v)))
            .collect();
        if values.is_empty() {
            return Err(EmbedError::EmptyColumn(name));
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|v| v.1).sum::<f64>() / n;
        let var = values.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for &(z, v) in &values {
            let scored = if std > 0.0 { (v - mean) / std } else { 0.0 };
            out.set(z as usize, p, scored);
        }
    }
    for z in 1..=MAX_ELEMENT {
        if let Some(r) = table.get(z) {
            let complete = r.properties.iter().all(|v| v.is_some());
            out.set(z as usize, NUM_PROPERTIES, if complete { 0.0 } else { 1.0 });
        }
    }
    Ok(out)
}

/// Per-node lookups for one batch, independent of any parameters.
#[derive(Debug, Clone)]
pub struct EmbeddingInputs {
    pub codes: Arc<[usize]>,
    pub tags: Arc<[usize]>,
    pub periods: Arc<[usize]>,
    pub groups: Arc<[usize]>,
    /// N×12 rows of the property matrix; supernodes get the count-weighted
    /// mean of their members' rows.
    pub phys: Matrix,
    /// N×d_cardinality, zero rows for regular atoms.
    pub cardinality: Option<Matrix>,
}

/// Embedding tables registered in a [`ParamStore`] plus the fixed property matrix.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub config: EmbeddingConfig,
    phys_matrix: Arc<Matrix>,
    period_of: Vec<usize>,
    group_of: Vec<usize>,
    known: Vec<bool>,
    h_z: Option<ParamId>,
    h_t: Option<ParamId>,
    phys_mlp: Option<(ParamId, ParamId)>,
    h_p: Option<ParamId>,
    h_g: Option<ParamId>,
}

impl Embedder {
    pub fn new<R: Rng>(
        config: EmbeddingConfig,
        table: &ElementTable,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, EmbedError> {
        config.validate()?;
        let phys_matrix = Arc::new(build_phys_matrix(table)?);
        let rows = MAX_CODE as usize + 1;
        let mut period_of = vec![0; rows];
        let mut group_of = vec![0; rows];
        let mut known = vec![false; rows];
        for r in table.iter() {
            period_of[r.z as usize] = r.period.unwrap_or(0) as usize;
            group_of[r.z as usize] = r.group.unwrap_or(0) as usize;
            known[r.z as usize] = true;
        }
        known[SUPERNODE_Z as usize] = true;
        let n_periods = table.max_period() as usize + 1;
        let n_groups = table.max_group() as usize + 1;

        let h_z = config
            .use_z
            .then(|| store.add_uniform("embed.z", rows, config.d_z, 1.0, rng));
        let h_t = config
            .use_tag
            .then(|| store.add_uniform("embed.tag", 3, config.d_tag, 1.0, rng));
        let phys_mlp = (config.use_phys && config.learn_phys).then(|| {
            let bound = 1.0 / (PHYS_WIDTH as f64).sqrt();
            (
                store.add_uniform("embed.phys.w", PHYS_WIDTH, config.d_phys_out, bound, rng),
                store.add_uniform("embed.phys.b", 1, config.d_phys_out, bound, rng),
            )
        });
        let h_p = config
            .use_period_group
            .then(|| store.add_uniform("embed.period", n_periods, config.d_period, 1.0, rng));
        let h_g = config
            .use_period_group
            .then(|| store.add_uniform("embed.group", n_groups, config.d_group, 1.0, rng));
        Ok(Self {
            config,
            phys_matrix,
            period_of,
            group_of,
            known,
            h_z,
            h_t,
            phys_mlp,
            h_p,
            h_g,
        })
    }

    pub fn phys_matrix(&self) -> &Matrix {
        &self.phys_matrix
    }

    pub fn output_width(&self) -> usize {
        self.config.total_width()
    }

    /// Gathers the per-node lookups of `batch`.
    pub fn inputs(&self, batch: &Batch) -> Result<EmbeddingInputs, EmbedError> {
        let n = batch.num_nodes();
        let mut codes = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        let mut periods = Vec::with_capacity(n);
        let mut groups = Vec::with_capacity(n);
        let mut phys = Matrix::zeros(n, PHYS_WIDTH);
        let d_card = self.config.d_cardinality;
        let mut card = (d_card > 0).then(|| Matrix::zeros(n, d_card));
        let mut row = 0;
        for s in batch.systems() {
            for i in 0..s.num_atoms() {
                let z = s.atomic_numbers[i];
                if z as usize >= self.known.len() || !self.known[z as usize] {
                    return Err(EmbedError::UnknownCode(z));
                }
                codes.push(z as usize);
                tags.push(s.tags[i] as usize);
                periods.push(self.period_of[z as usize]);
                groups.push(self.group_of[z as usize]);
                match s.supernodes.get(&i) {
                    Some(info) => {
                        if d_card > 0 && !self.config.use_tag {
                            return Err(EmbedError::CardinalityWithoutTag);
                        }
                        let total: u32 = info.members.iter().map(|m| m.1).sum();
                        let out = phys.row_mut(row);
                        for &(mz, count) in &info.members {
                            let w = count as f64 / total.max(1) as f64;
                            crate::matrix::axpy(w, self.phys_matrix.row(mz as usize), out);
                        }
                        if let Some(c) = card.as_mut() {
                            let enc = cardinality_encoding(info.cardinality, d_card)?;
                            c.row_mut(row).copy_from_slice(&enc);
                        }
                    }
                    None => phys.row_mut(row).copy_from_slice(self.phys_matrix.row(z as usize)),
                }
                row += 1;
            }
        }
        Ok(EmbeddingInputs {
            codes: codes.into(),
            tags: tags.into(),
            periods: periods.into(),
            groups: groups.into(),
            phys,
            cardinality: card,
        })
    }

    /// H⁰: one row per node, pieces concatenated in the fixed order.
    pub fn forward<E: Engine>(&self, e: &mut E, store: &ParamStore, inputs: &EmbeddingInputs) -> E::V {
        let mut parts = Vec::new();
        if let Some(id) = self.h_z {
            let t = e.param(id, store.value(id));
            parts.push(e.gather_rows(&t, &inputs.codes));
        }
        if let Some(id) = self.h_t {
            let t = e.param(id, store.value(id));
            parts.push(e.gather_rows(&t, &inputs.tags));
        }
        if self.config.use_phys {
            let f = e.constant(inputs.phys.clone());
            match self.phys_mlp {
                Some((w, b)) => {
                    let wv = e.param(w, store.value(w));
                    let bv = e.param(b, store.value(b));
                    parts.push(e.linear(&f, &wv, Some(&bv)));
                }
                None => parts.push(f),
            }
        }
        if let (Some(p), Some(g)) = (self.h_p, self.h_g) {
            let tp = e.param(p, store.value(p));
            parts.push(e.gather_rows(&tp, &inputs.periods));
            let tg = e.param(g, store.value(g));
            parts.push(e.gather_rows(&tg, &inputs.groups));
        }
        if let Some(c) = &inputs.cardinality {
            parts.push(e.constant(c.clone()));
        }
        if parts.len() == 1 {
            return parts.pop().unwrap();
        }
        e.concat_cols(&parts)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Eval;
    use crate::elements::ElementRecord;
    use crate::types::{AtomicSystem, Graph};

    fn toy_table(values: &[(u32, f64)]) -> ElementTable {
        let recs = values
            .iter()
            .map(|&(z, v)| ElementRecord {
                z,
                symbol: format!("E{z}"),
                properties: [Some(v); NUM_PROPERTIES],
                period: Some(1),
                group: Some(1),
            })
            .collect();
        ElementTable::from_records(recs).unwrap()
    }

    #[test]
    fn two_element_z_scores() {
        let m = build_phys_matrix(&toy_table(&[(1, 1.0), (2, 3.0)])).unwrap();
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(2, 0), 1.0);
        assert_eq!(m.get(1, NUM_PROPERTIES), 0.0);
    }

    #[test]
    fn constant_column_scores_to_zero() {
        let m = build_phys_matrix(&toy_table(&[(1, 5.0), (2, 5.0), (3, 5.0)])).unwrap();
        assert!((1..=3).all(|z| m.get(z, 4) == 0.0));
    }

    #[test]
    fn hydrogen_mask_set() {
        let m = build_phys_matrix(&ElementTable::bundled()).unwrap();
        assert_eq!(m.get(1, NUM_PROPERTIES), 1.0);
        assert_eq!(m.get(1, 7), 0.0);
    }

    #[test]
    fn entirely_missing_column_is_an_error() {
        let mut t = toy_table(&[(1, 1.0)]);
        let mut recs: Vec<ElementRecord> = t.iter().cloned().collect();
        recs[0].properties[3] = None;
        t = ElementTable::from_records(recs).unwrap();
        assert_eq!(
            build_phys_matrix(&t),
            Err(EmbedError::EmptyColumn("dipole_polarizability"))
        );
    }

    #[test]
    fn piece_boundaries() {
        let cfg = EmbeddingConfig {
            use_z: true,
            use_tag: true,
            use_phys: true,
            learn_phys: false,
            use_period_group: true,
            d_z: 8,
            d_tag: 4,
            d_phys_out: 0,
            d_period: 4,
            d_group: 4,
            d_cardinality: 0,
        };
        assert_eq!(cfg.piece_widths(), [8, 4, 12, 4, 4, 0]);
        assert_eq!(cfg.total_width(), 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn z_only_rows_come_from_table() {
        let mut store = ParamStore::new();
        let cfg = EmbeddingConfig {
            d_z: 8,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = Embedder::new(cfg, &ElementTable::bundled(), &mut store, &mut rng).unwrap();
        let s = AtomicSystem::new(
            "a",
            vec![[0.0; 3]],
            vec![78],
            vec![1],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [false; 3],
        );
        let batch = Batch::single(
            s,
            Graph {
                num_nodes: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let h = emb.forward(&mut Eval, &store, &emb.inputs(&batch).unwrap());
        let table = store.value(store.find("embed.z").unwrap());
        assert_eq!(h.shape(), (1, 8));
        assert_eq!(h.row(0), table.row(78));
    }

    #[test]
    fn variants_validate() {
        for v in EmbeddingConfig::VARIANTS {
            EmbeddingConfig::variant(v).unwrap().validate().unwrap();
        }
        assert!(EmbeddingConfig::variant("nope").is_err());
        let bad = EmbeddingConfig {
            use_phys: false,
            learn_phys: true,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(EmbedError::LearnWithoutPhys));
    }
}
