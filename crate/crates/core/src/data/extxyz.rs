//! Extended-XYZ frames with a `Lattice` and a `Properties` spec that must
//! include species (or `Z`), `pos` and an integer `tags` column. `forces`,
//! `energy`, `pbc` and `sid` are optional.

use std::path::Path;

use super::DataError;
use crate::elements::ElementTable;
use crate::geom::{Mat3, Vec3};
use crate::types::{validate_system, AtomicSystem};

/// Splits `key=value key="quoted value"` pairs; bare keys map to "T".
fn comment_pairs(line: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            out.push((key, "T".to_string()));
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => value.push(c),
                    None => return Err(format!("unterminated quote for key {key}")),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        out.push((key, value));
    }
    Ok(out)
}

struct Column {
    name: String,
    kind: char,
    start: usize,
    width: usize,
}

fn parse_properties(spec: &str) -> Result<Vec<Column>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !parts.len().is_multiple_of(3) {
        return Err(format!("malformed Properties {spec:?}"));
    }
    let mut start = 0;
    let mut cols = Vec::new();
    for chunk in parts.chunks(3) {
        let width: usize = chunk[2]
            .parse()
            .map_err(|_| format!("bad column count in Properties {spec:?}"))?;
        let kind = chunk[1].chars().next().unwrap_or('?').to_ascii_uppercase();
        cols.push(Column {
            name: chunk[0].to_string(),
            kind,
            start,
            width,
        });
        start += width;
    }
    Ok(cols)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_uppercase().as_str() {
        "T" | "TRUE" | "1" => Some(true),
        "F" | "FALSE" | "0" => Some(false),
        _ => None,
    }
}

/// Parses every frame of `text` in order.
pub fn parse_extxyz(text: &str, table: &ElementTable) -> Result<Vec<AtomicSystem>, DataError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let frame = out.len();
        let err = |message: String| DataError::Frame { frame, message };
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| err(format!("expected atom count, got {:?}", lines[i])))?;
        let comment = lines.get(i + 1).ok_or_else(|| err("missing comment line".into()))?;
        let pairs = comment_pairs(comment).map_err(err)?;
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key.eq_ignore_ascii_case(k))
                .map(|(_, v)| v.as_str())
        };

        let lattice: Option<Mat3> = match get("Lattice") {
            Some(v) => {
                let f: Vec<f64> = v
                    .split_whitespace()
                    .map(|x| x.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("Lattice must hold 9 numbers".into()))?;
                if f.len() != 9 {
                    return Err(err("Lattice must hold 9 numbers".into()));
                }
                Some([[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]])
            }
            None => None,
        };
        let pbc = match get("pbc") {
            Some(v) => {
                let b: Vec<bool> = v
                    .split_whitespace()
                    .map(parse_bool)
                    .collect::<Option<_>>()
                    .ok_or_else(|| err(format!("bad pbc {v:?}")))?;
                if b.len() != 3 {
                    return Err(err(format!("bad pbc {v:?}")));
                }
                [b[0], b[1], b[2]]
            }
            None => [lattice.is_some(); 3],
        };
        if pbc.iter().any(|&p| p) && lattice.is_none() {
            return Err(err("missing Lattice while pbc is set".into()));
        }
        let energy = match get("energy") {
            Some(v) => Some(v.parse::<f64>().map_err(|_| err(format!("bad energy {v:?}")))?),
            None => None,
        };
        let sid = get("sid")
            .map(str::to_string)
            .unwrap_or_else(|| format!("frame{frame}"));
        let cols = parse_properties(get("Properties").unwrap_or("species:S:1:pos:R:3")).map_err(err)?;
        let find = |names: &[&str]| {
            cols.iter()
                .find(|c| names.iter().any(|n| c.name.eq_ignore_ascii_case(n)))
        };
        let species = find(&["species", "Z"]).ok_or_else(|| err("species column required".into()))?;
        let pos = find(&["pos", "positions"]).ok_or_else(|| err("pos column required".into()))?;
        let tags = find(&["tags"]).ok_or_else(|| err("tags column required".into()))?;
        let forces = find(&["forces", "force"]);
        if pos.width != 3 || forces.is_some_and(|f| f.width != 3) {
            return Err(err("pos and forces need 3 columns".into()));
        }

        let mut positions = Vec::with_capacity(n);
        let mut numbers = Vec::with_capacity(n);
        let mut tag_values = Vec::with_capacity(n);
        let mut force_values: Vec<Vec3> = Vec::new();
        for a in 0..n {
            let line = lines
                .get(i + 2 + a)
                .ok_or_else(|| err(format!("expected {n} atom lines")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let field = |c: &Column, k: usize| {
                fields
                    .get(c.start + k)
                    .copied()
                    .ok_or_else(|| err(format!("atom {a}: too few columns")))
            };
            let num = |c: &Column, k: usize| -> Result<f64, DataError> {
                let s = field(c, k)?;
                s.parse::<f64>().map_err(|_| err(format!("atom {a}: bad number {s:?}")))
            };
            let sp = field(species, 0)?;
            let z = if species.kind == 'I' || species.name.eq_ignore_ascii_case("Z") {
                sp.parse::<u32>()
                    .map_err(|_| err(format!("atom {a}: bad atomic number {sp:?}")))?
            } else {
                table
                    .z_of_symbol(sp)
                    .map_err(|_| err(format!("unknown species {sp:?}")))?
            };
            numbers.push(z);
            positions.push([num(pos, 0)?, num(pos, 1)?, num(pos, 2)?]);
            let t = field(tags, 0)?;
            tag_values.push(t.parse::<u8>().map_err(|_| err(format!("atom {a}: bad tag {t:?}")))?);
            if let Some(fc) = forces {
                force_values.push([num(fc, 0)?, num(fc, 1)?, num(fc, 2)?]);
            }
        }
        let mut system = AtomicSystem::new(
            sid,
            positions,
            numbers,
            tag_values,
            lattice.unwrap_or([[0.0; 3]; 3]),
            pbc,
        );
        system.energy = energy;
        system.forces = forces.is_some().then_some(force_values);
        let report = validate_system(&system);
        if !report.is_ok() {
            return Err(err(report.messages().join("; ")));
        }
        out.push(system);
        i += 2 + n;
    }
    Ok(out)
}

pub fn read_extxyz(path: impl AsRef<Path>, table: &ElementTable) -> Result<Vec<AtomicSystem>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_extxyz(&text, table)
}
