//! Per-element physical properties, period and group.
//!
//! The bundled table (`data/elements.csv`) covers Z = 1..=100. Units are listed
//! in the comment header of that file. A missing value is `None`, never zero.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Number of physical property columns.
pub const NUM_PROPERTIES: usize = 11;
pub const MAX_ELEMENT: u32 = 100;

pub const PROPERTY_NAMES: [&str; NUM_PROPERTIES] = [
    "atomic_radius",
    "atomic_volume",
    "atomic_density",
    "dipole_polarizability",
    "electron_affinity",
    "electronegativity_allen",
    "vdw_radius",
    "metallic_radius",
    "covalent_radius",
    "ionization_energy_1",
    "ionization_energy_2",
];

/// Column index of the Allen electronegativity in [`ElementRecord::properties`].
pub const ELECTRONEGATIVITY: usize = 5;
/// Column index of the covalent radius (pm).
pub const COVALENT_RADIUS: usize = 8;

static BUNDLED: &str = include_str!("../data/elements.csv");

#[derive(Debug, Error)]
pub enum ElementError {
    #[error("element table I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("element table CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("atomic number {0} outside 1..=100")]
    BadAtomicNumber(u32),
    #[error("atomic number {0} listed twice")]
    Duplicate(u32),
    #[error("unknown element symbol {0:?}")]
    UnknownSymbol(String),
    #[error("property {property} missing for element {z}")]
    Missing { z: u32, property: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementRecord {
    pub z: u32,
    pub symbol: String,
    pub properties: [Option<f64>; NUM_PROPERTIES],
    pub period: Option<u32>,
    pub group: Option<u32>,
}

impl ElementRecord {
    pub fn property(&self, index: usize) -> Option<f64> {
        self.properties[index]
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    z: u32,
    symbol: String,
    atomic_radius: Option<f64>,
    atomic_volume: Option<f64>,
    atomic_density: Option<f64>,
    dipole_polarizability: Option<f64>,
    electron_affinity: Option<f64>,
    electronegativity_allen: Option<f64>,
    vdw_radius: Option<f64>,
    metallic_radius: Option<f64>,
    covalent_radius: Option<f64>,
    ionization_energy_1: Option<f64>,
    ionization_energy_2: Option<f64>,
    period: Option<u32>,
    group: Option<u32>,
}

/// Element properties indexed by atomic number.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTable {
    records: Vec<Option<ElementRecord>>,
}

impl ElementTable {
    /// The table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED).expect("bundled element table is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ElementError> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, ElementError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records: Vec<Option<ElementRecord>> = vec![None; MAX_ELEMENT as usize + 1];
        for row in reader.deserialize::<Row>() {
            let row = row?;
            if row.z == 0 || row.z > MAX_ELEMENT {
                return Err(ElementError::BadAtomicNumber(row.z));
            }
            let slot = &mut records[row.z as usize];
            if slot.is_some() {
                return Err(ElementError::Duplicate(row.z));
            }
            *slot = Some(ElementRecord {
                z: row.z,
                symbol: row.symbol,
                properties: [
                    row.atomic_radius,
                    row.atomic_volume,
                    row.atomic_density,
                    row.dipole_polarizability,
                    row.electron_affinity,
                    row.electronegativity_allen,
                    row.vdw_radius,
                    row.metallic_radius,
                    row.covalent_radius,
                    row.ionization_energy_1,
                    row.ionization_energy_2,
                ],
                period: row.period,
                group: row.group,
            });
        }
        Ok(Self { records })
    }

    /// Builds a table from explicit records (used for toy tables in tests).
    pub fn from_records(list: Vec<ElementRecord>) -> Result<Self, ElementError> {
        let mut records: Vec<Option<ElementRecord>> = vec![None; MAX_ELEMENT as usize + 1];
        for r in list {
            if r.z == 0 || r.z > MAX_ELEMENT {
                return Err(ElementError::BadAtomicNumber(r.z));
            }
            let z = r.z;
            if records[z as usize].replace(r).is_some() {
                return Err(ElementError::Duplicate(z));
            }
        }
        Ok(Self { records })
    }

    pub fn get(&self, z: u32) -> Option<&ElementRecord> {
        self.records.get(z as usize).and_then(|r| r.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ElementRecord> {
        self.records.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn z_of_symbol(&self, symbol: &str) -> Result<u32, ElementError> {
        self.iter()
            .find(|r| r.symbol.eq_ignore_ascii_case(symbol))
            .map(|r| r.z)
            .ok_or_else(|| ElementError::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, z: u32) -> Option<&str> {
        self.get(z).map(|r| r.symbol.as_str())
    }

    /// Property value, or [`ElementError::Missing`].
    pub fn require(&self, z: u32, property: usize) -> Result<f64, ElementError> {
        self.get(z)
            .and_then(|r| r.properties[property])
            .ok_or(ElementError::Missing {
                z,
                property: PROPERTY_NAMES[property],
            })
    }

    pub fn max_period(&self) -> u32 {
        self.iter().filter_map(|r| r.period).max().unwrap_or(0)
    }

    pub fn max_group(&self) -> u32 {
        self.iter().filter_map(|r| r.group).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_covers_first_hundred() {
        let t = ElementTable::bundled();
        assert_eq!(t.len(), 100);
        assert_eq!(t.symbol(78), Some("Pt"));
        assert_eq!(t.z_of_symbol("pt").unwrap(), 78);
        assert_eq!(t.max_period(), 7);
        assert_eq!(t.max_group(), 18);
    }

    #[test]
    fn missing_values_are_none() {
        let t = ElementTable::bundled();
        let h = t.get(1).unwrap();
        assert_eq!(h.property(7), None, "hydrogen has no metallic radius");
        assert!(matches!(
            t.require(1, 7),
            Err(ElementError::Missing {
                z: 1,
                property: "metallic_radius"
            })
        ));
        assert_eq!(t.get(58).unwrap().group, None, "lanthanides have no group");
    }

    #[test]
    fn spot_values() {
        let t = ElementTable::bundled();
        // Pyykko single-bond radius and Allen electronegativity for Pt
        assert_eq!(t.require(78, COVALENT_RADIUS).unwrap(), 123.0);
        assert!((t.require(78, ELECTRONEGATIVITY).unwrap() - 1.72).abs() < 0.01);
        assert!((t.require(1, ELECTRONEGATIVITY).unwrap() - 2.30).abs() < 0.01);
    }

    #[test]
    fn rejects_duplicate_rows() {
        let text = "z,symbol,atomic_radius,atomic_volume,atomic_density,dipole_polarizability,electron_affinity,electronegativity_allen,vdw_radius,metallic_radius,covalent_radius,ionization_energy_1,ionization_energy_2,period,group\n1,H,,,,,,,,,,,,1,1\n1,H,,,,,,,,,,,,1,1\n";
        assert!(matches!(
            ElementTable::from_csv_str(text),
            Err(ElementError::Duplicate(1))
        ));
    }
}
