//! Synthetic adsorbate–slab samples with Morse oracle labels.
//!
//! Each sample is an FCC(100)-like slab of `k×k×slab_layers` catalyst atoms
//! (a two-element checkerboard alloy) with a 1–3 atom adsorbate placed above
//! a random top-layer site. All layers but the top one are tagged 0.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jsonl::{read_jsonl, write_jsonl};
use super::oracle::{oracle_energy_forces, OracleParams};
use super::DataError;
use crate::geom::{self, Vec3};
use crate::types::AtomicSystem;

const MIN_DISTANCE: f64 = 0.5;
const MAX_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_train: usize,
    /// Samples in each of the four validation splits.
    pub n_val: usize,
    pub catalyst_element_pool: Vec<u32>,
    /// Catalyst elements only seen in the OOD-cat and OOD-both splits.
    pub catalyst_ood_pool: Vec<u32>,
    pub adsorbate_element_pool: Vec<u32>,
    /// Adsorbate elements only seen in the OOD-ads and OOD-both splits.
    pub adsorbate_ood_pool: Vec<u32>,
    /// Å.
    pub lattice_constant: f64,
    pub slab_layers: usize,
    pub surface_size: usize,
    pub adsorbate_size: [usize; 2],
    /// Å, per Cartesian component.
    pub jitter_sigma: f64,
    /// Multiplies `jitter_sigma` for tag-0 atoms.
    pub subsurface_jitter_scale: f64,
    /// Å of empty space above the highest atom.
    pub vacuum: f64,
    pub target_tag0_fraction: f64,
    pub energy_target: EnergyTarget,
}

/// What the `energy` label measures. Forces are `−∂E/∂x` either way, since the
/// reference is constant for a given sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyTarget {
    /// Total energy minus the energy of the ideal clean slab (same alloy and
    /// cell, no jitter, no adsorbate).
    #[default]
    Adsorption,
    /// Total oracle energy.
    Total,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 2000,
            n_val: 500,
            catalyst_element_pool: vec![27, 28, 29, 45, 46, 47, 78, 79],
            catalyst_ood_pool: vec![26, 44, 77],
            adsorbate_element_pool: vec![1, 6, 7, 8],
            adsorbate_ood_pool: vec![9, 16, 17],
            lattice_constant: 3.9,
            slab_layers: 3,
            surface_size: 4,
            adsorbate_size: [1, 3],
            jitter_sigma: 0.1,
            subsurface_jitter_scale: 0.2,
            vacuum: 20.0,
            target_tag0_fraction: 0.65,
            energy_target: EnergyTarget::Adsorption,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: &str| Err(DataError::Generator(m.to_string()));
        if self.slab_layers < 2 {
            return err("slab_layers must be at least 2");
        }
        if self.surface_size == 0 {
            return err("surface_size must be positive");
        }
        let [lo, hi] = self.adsorbate_size;
        if lo == 0 || lo > hi {
            return err("adsorbate_size must be a range [min, max] with 1 <= min <= max");
        }
        if !(self.lattice_constant > 0.0) {
            return err("lattice_constant must be positive");
        }
        if !(self.jitter_sigma >= 0.0) || !(self.subsurface_jitter_scale >= 0.0) {
            return err("jitter must be non-negative");
        }
        if !(self.vacuum >= 20.0) {
            return err("vacuum must be at least 20 Å");
        }
        if !(0.0..=1.0).contains(&self.target_tag0_fraction) {
            return err("target_tag0_fraction must lie in [0, 1]");
        }
        for (name, pool) in [
            ("catalyst_element_pool", &self.catalyst_element_pool),
            ("catalyst_ood_pool", &self.catalyst_ood_pool),
            ("adsorbate_element_pool", &self.adsorbate_element_pool),
            ("adsorbate_ood_pool", &self.adsorbate_ood_pool),
        ] {
            if pool.is_empty() {
                return Err(DataError::Generator(format!("{name} is empty")));
            }
        }
        let disjoint = |a: &[u32], b: &[u32]| a.iter().all(|z| !b.contains(z));
        if !disjoint(&self.catalyst_element_pool, &self.catalyst_ood_pool)
            || !disjoint(&self.adsorbate_element_pool, &self.adsorbate_ood_pool)
        {
            return err("in-domain and held-out pools must be disjoint");
        }
        Ok(())
    }

    /// Every element that can appear in a sample, ascending.
    pub fn elements(&self) -> Vec<u32> {
        let mut all: Vec<u32> = [
            &self.catalyst_element_pool,
            &self.catalyst_ood_pool,
            &self.adsorbate_element_pool,
            &self.adsorbate_ood_pool,
        ]
        .into_iter()
        .flatten()
        .copied()
        .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn n_samples(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            _ => self.n_val,
        }
    }

    /// Tag-0 fraction of a sample with an adsorbate of `ads` atoms.
    pub fn expected_tag0_fraction(&self, ads: usize) -> f64 {
        let per_layer = self.surface_size * self.surface_size;
        let tag0 = per_layer * (self.slab_layers - 1);
        tag0 as f64 / (per_layer * self.slab_layers + ads) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValId,
    ValOodAds,
    ValOodCat,
    ValOodBoth,
}

pub const SPLITS: [Split; 5] = [
    Split::Train,
    Split::ValId,
    Split::ValOodAds,
    Split::ValOodCat,
    Split::ValOodBoth,
];

impl Split {
    pub const VALIDATION: [Split; 4] = [Split::ValId, Split::ValOodAds, Split::ValOodCat, Split::ValOodBoth];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValId => "val_id",
            Split::ValOodAds => "val_ood_ads",
            Split::ValOodCat => "val_ood_cat",
            Split::ValOodBoth => "val_ood_both",
        }
    }

    fn index(self) -> u64 {
        SPLITS.iter().position(|&s| s == self).unwrap() as u64
    }

    fn ood_adsorbate(self) -> bool {
        matches!(self, Split::ValOodAds | Split::ValOodBoth)
    }

    fn ood_catalyst(self) -> bool {
        matches!(self, Split::ValOodCat | Split::ValOodBoth)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        SPLITS
            .into_iter()
            .find(|sp| sp.name() == norm)
            .ok_or_else(|| format!("unknown split '{s}'"))
    }
}

/// The train split and the four validation splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<AtomicSystem>,
    pub val_id: Vec<AtomicSystem>,
    pub val_ood_ads: Vec<AtomicSystem>,
    pub val_ood_cat: Vec<AtomicSystem>,
    pub val_ood_both: Vec<AtomicSystem>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[AtomicSystem] {
        match split {
            Split::Train => &self.train,
            Split::ValId => &self.val_id,
            Split::ValOodAds => &self.val_ood_ads,
            Split::ValOodCat => &self.val_ood_cat,
            Split::ValOodBoth => &self.val_ood_both,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<AtomicSystem> {
        match split {
            Split::Train => &mut self.train,
            Split::ValId => &mut self.val_id,
            Split::ValOodAds => &mut self.val_ood_ads,
            Split::ValOodCat => &mut self.val_ood_cat,
            Split::ValOodBoth => &mut self.val_ood_both,
        }
    }

    /// Writes `<split>.jsonl` for every split into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        for s in SPLITS {
            write_jsonl(self.split(s), dir.join(format!("{s}.jsonl")))?;
        }
        Ok(())
    }

    /// Reads the splits written by [`Dataset::write_dir`]; missing files give
    /// empty splits.
    pub fn read_dir(dir: &Path) -> Result<Self, DataError> {
        if !dir.is_dir() {
            return Err(DataError::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            ));
        }
        let mut ds = Dataset::default();
        for s in SPLITS {
            let path = dir.join(format!("{s}.jsonl"));
            if path.exists() {
                *ds.split_mut(s) = read_jsonl(&path)?;
            }
        }
        Ok(ds)
    }
}

/// Fraction of all atoms in `systems` that carry tag 0.
pub fn tag0_fraction(systems: &[AtomicSystem]) -> f64 {
    let total: usize = systems.iter().map(|s| s.num_atoms()).sum();
    if total == 0 {
        return 0.0;
    }
    systems.iter().map(|s| s.count_tag(0)).sum::<usize>() as f64 / total as f64
}

pub fn generate_dataset(config: &GeneratorConfig, oracle: &OracleParams) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut ds = Dataset::default();
    for s in SPLITS {
        *ds.split_mut(s) = generate_split(config, oracle, s)?;
    }
    let frac = tag0_fraction(&ds.train);
    if (frac - config.target_tag0_fraction).abs() > 0.03 {
        log::warn!(
            "train tag-0 fraction {frac:.3} is more than 3 points from the target {:.3}",
            config.target_tag0_fraction
        );
    }
    Ok(ds)
}

pub fn generate_split(
    config: &GeneratorConfig,
    oracle: &OracleParams,
    split: Split,
) -> Result<Vec<AtomicSystem>, DataError> {
    config.validate()?;
    (0..config.n_samples(split))
        .into_par_iter()
        .map(|i| generate_sample(config, oracle, split, i))
        .collect()
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.index() << 48) ^ index as u64);
    rng
}

fn generate_sample(
    config: &GeneratorConfig,
    oracle: &OracleParams,
    split: Split,
    index: usize,
) -> Result<AtomicSystem, DataError> {
    let mut rng = sample_rng(config.seed, split, index);
    let cat_pool = if split.ood_catalyst() {
        &config.catalyst_ood_pool
    } else {
        &config.catalyst_element_pool
    };
    let ads_pool = if split.ood_adsorbate() {
        &config.adsorbate_ood_pool
    } else {
        &config.adsorbate_element_pool
    };
    let alloy = [*cat_pool.choose(&mut rng).unwrap(), *cat_pool.choose(&mut rng).unwrap()];
    let [lo, hi] = config.adsorbate_size;
    let n_ads = rng.random_range(lo..=hi);
    let adsorbate: Vec<u32> = (0..n_ads).map(|_| *ads_pool.choose(&mut rng).unwrap()).collect();

    for _ in 0..MAX_TRIES {
        let mut system = build_geometry(config, oracle, &alloy, &adsorbate, &mut rng)?;
        if min_distance(&system) < MIN_DISTANCE {
            continue;
        }
        system.sample_id = format!("{split}-{index:05}");
        let (energy, forces) = oracle_energy_forces(&system, oracle)?;
        let reference = match config.energy_target {
            EnergyTarget::Total => 0.0,
            EnergyTarget::Adsorption => oracle_energy_forces(&ideal_slab(config, alloy, system.cell), oracle)?.0,
        };
        system.energy = Some(energy - reference);
        system.forces = Some(forces);
        return Ok(system);
    }
    Err(DataError::Generator(format!(
        "{split} sample {index}: no geometry with all distances >= {MIN_DISTANCE} Å after {MAX_TRIES} tries"
    )))
}

/// Slab atoms on their lattice sites in generation order.
fn slab_sites(config: &GeneratorConfig, alloy: &[u32; 2]) -> Vec<(Vec3, u32, u8)> {
    let k = config.surface_size;
    let spacing = config.lattice_constant / 2f64.sqrt();
    let layer_gap = config.lattice_constant / 2.0;
    let top = config.slab_layers - 1;
    let mut out = Vec::with_capacity(k * k * config.slab_layers);
    for l in 0..config.slab_layers {
        let shift = if l % 2 == 1 { spacing / 2.0 } else { 0.0 };
        let tag = if l == top { 1 } else { 0 };
        for ix in 0..k {
            for iy in 0..k {
                let base = [
                    ix as f64 * spacing + shift,
                    iy as f64 * spacing + shift,
                    l as f64 * layer_gap,
                ];
                out.push((base, alloy[(ix + iy + l) % 2], tag));
            }
        }
    }
    out
}

fn ideal_slab(config: &GeneratorConfig, alloy: [u32; 2], cell: crate::geom::Mat3) -> AtomicSystem {
    let sites = slab_sites(config, &alloy);
    AtomicSystem::new(
        "",
        sites.iter().map(|s| s.0).collect(),
        sites.iter().map(|s| s.1).collect(),
        sites.iter().map(|s| s.2).collect(),
        cell,
        [true, true, false],
    )
}

fn build_geometry(
    config: &GeneratorConfig,
    oracle: &OracleParams,
    alloy: &[u32; 2],
    adsorbate: &[u32],
    rng: &mut ChaCha8Rng,
) -> Result<AtomicSystem, DataError> {
    let k = config.surface_size;
    let spacing = config.lattice_constant / 2f64.sqrt();
    let layer_gap = config.lattice_constant / 2.0;
    let jitter = Normal::new(0.0, config.jitter_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::Generator(e.to_string()))?;
    let noise = |scale: f64, rng: &mut ChaCha8Rng| -> Vec3 {
        if config.jitter_sigma == 0.0 {
            return [0.0; 3];
        }
        [0, 1, 2].map(|_| scale * jitter.sample(rng))
    };

    let mut positions = Vec::new();
    let mut numbers = Vec::new();
    let mut tags = Vec::new();
    let top = config.slab_layers - 1;
    for (base, z, tag) in slab_sites(config, alloy) {
        let scale = if tag == 0 { config.subsurface_jitter_scale } else { 1.0 };
        positions.push(geom::add(base, noise(scale, rng)));
        numbers.push(z);
        tags.push(tag);
    }

    let top_z = top as f64 * layer_gap;
    let site = top * k * k + rng.random_range(0..k * k);
    let height = rng.random_range(1.5..=2.5);
    let mut prev = [positions[site][0], positions[site][1], top_z + height];
    for (j, &z) in adsorbate.iter().enumerate() {
        if j > 0 {
            let r = oracle.pair(adsorbate[j - 1], z)?.r_eq;
            prev = geom::add(prev, geom::scale(upward_direction(rng), r));
        }
        positions.push(prev);
        numbers.push(z);
        tags.push(2);
    }

    let highest = positions.iter().map(|p| p[2]).fold(f64::MIN, f64::max);
    let lateral = k as f64 * spacing;
    let cell = [
        [lateral, 0.0, 0.0],
        [0.0, lateral, 0.0],
        [0.0, 0.0, highest + config.vacuum],
    ];
    Ok(AtomicSystem::new(
        "",
        positions,
        numbers,
        tags,
        cell,
        [true, true, false],
    ))
}

/// Uniform direction on the upper hemisphere with polar angle at most 60°.
fn upward_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    let cos_t: f64 = rng.random_range(0.5..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

/// Smallest minimum-image distance in an orthorhombic cell periodic in x and y.
fn min_distance(system: &AtomicSystem) -> f64 {
    let (lx, ly) = (system.cell[0][0], system.cell[1][1]);
    let wrap = |d: f64, l: f64| d - l * (d / l).round();
    let mut best = f64::INFINITY;
    let p = &system.positions;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let d = [
                wrap(p[j][0] - p[i][0], lx),
                wrap(p[j][1] - p[i][1], ly),
                p[j][2] - p[i][2],
            ];
            best = best.min(geom::norm(d));
        }
    }
    best
}
