//! Source-receptor matrices extracted from unit-pulse runs, and their
//! sparse triplet file format.

use super::{simulate, DepositionField, EmissionField, TransportError, TransportParams, Tracers};
use crate::grid::GridSpec;
use crate::mass::SpeciatedMass;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

pub const SRM_SCHEMA: &str = "hgtrack-srm/1";

/// Response to one gram of each species emitted at a single source cell.
///
/// `deposited[r].hg0` is Hg⁰ deposited at `r` per gram Hg⁰ emitted and
/// `deposited[r].ox` is Hg²⁺ deposited at `r` per gram Hg⁰ emitted (the
/// oxidation pathway); `hg2` and `hgp` respond to their own species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrColumn {
    pub deposited: Vec<Tracers>,
    pub exported: Tracers,
    pub airborne: Tracers,
    /// Hg⁰ oxidised per gram Hg⁰ emitted.
    pub oxidized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReceptorMatrix {
    pub nx: usize,
    pub ny: usize,
    /// Source cells in ascending order; `columns[k]` belongs to `sources[k]`.
    pub sources: Vec<usize>,
    pub columns: Vec<SrColumn>,
}

/// One pulse run per source cell, run in parallel. Boundary inflow is
/// excluded so the matrix is strictly linear.
pub fn build_srm(
    params: &TransportParams,
    grid: &GridSpec,
    sources: &BTreeSet<usize>,
) -> Result<SourceReceptorMatrix, TransportError> {
    let mut params = params.clone();
    params.boundary_inflow = SpeciatedMass::ZERO;
    if let Some(&bad) = sources.iter().find(|&&s| s >= grid.cells()) {
        return Err(TransportError::UncoveredSource(bad));
    }
    let sources: Vec<usize> = sources.iter().copied().collect();
    let columns = sources
        .par_iter()
        .map(|&s| {
            let mut e = EmissionField::for_grid(grid);
            e.cells[s] = SpeciatedMass::new(1.0, 1.0, 1.0);
            simulate(&e, &params, grid).map(|d| SrColumn {
                deposited: d.deposited,
                exported: d.exported,
                airborne: d.airborne,
                oxidized: d.oxidized,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SourceReceptorMatrix { nx: grid.nx(), ny: grid.ny(), sources, columns })
}

fn respond(t: &Tracers, e: &SpeciatedMass) -> Tracers {
    Tracers { hg0: e.hg0 * t.hg0, hg2: e.hg2 * t.hg2, hgp: e.hgp * t.hgp, ox: e.hg0 * t.ox }
}

impl SourceReceptorMatrix {
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn column_for(&self, cell: usize) -> Option<&SrColumn> {
        self.sources.binary_search(&cell).ok().map(|k| &self.columns[k])
    }

    /// Deposition from an arbitrary emission field supported on the sources.
    pub fn apply(&self, emis: &EmissionField) -> Result<DepositionField, TransportError> {
        if (emis.nx, emis.ny) != (self.nx, self.ny) {
            return Err(TransportError::ShapeMismatch { expected: (self.nx, self.ny), got: (emis.nx, emis.ny) });
        }
        if let Some(c) = emis.nonzero_cells().find(|c| self.sources.binary_search(c).is_err()) {
            return Err(TransportError::UncoveredSource(c));
        }
        let mut out = DepositionField::zeros(self.nx, self.ny);
        let total = emis.total();
        out.emitted = Tracers { hg0: total.hg0, hg2: total.hg2, hgp: total.hgp, ox: 0.0 };
        for (&s, col) in self.sources.iter().zip(&self.columns) {
            let e = emis.cells[s];
            if e.is_zero() {
                continue;
            }
            for (acc, t) in out.deposited.iter_mut().zip(&col.deposited) {
                *acc += respond(t, &e);
            }
            out.exported += respond(&col.exported, &e);
            out.airborne += respond(&col.airborne, &e);
            out.oxidized += e.hg0 * col.oxidized;
        }
        Ok(out)
    }

    /// Receptor-cell row sums per block: total deposition at each receptor
    /// for one gram of each species at every source.
    pub fn row_sums(&self) -> Vec<Tracers> {
        let mut rows = vec![Tracers::ZERO; self.cells()];
        for col in &self.columns {
            for (r, t) in rows.iter_mut().zip(&col.deposited) {
                *r += *t;
            }
        }
        rows
    }

    /// Fraction of a unit emission deposited in-domain, per block.
    pub fn column_sums(&self) -> Vec<Tracers> {
        self.columns.iter().map(|c| c.deposited.iter().fold(Tracers::ZERO, |a, t| a + *t)).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SrmFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("checksum mismatch: file says {stated}, content hashes to {actual}")]
    Checksum { stated: String, actual: String },
    #[error("missing checksum line")]
    MissingChecksum,
}

const BLOCKS: [&str; 4] = ["hg0", "hg2", "hgp", "hg0_to_hg2"];

fn block(t: &Tracers, b: usize) -> f64 {
    t.as_array()[b]
}

fn set_block(t: &mut Tracers, b: usize, v: f64) {
    match b {
        0 => t.hg0 = v,
        1 => t.hg2 = v,
        2 => t.hgp = v,
        _ => t.ox = v,
    }
}

/// Serialises as `species,receptor,source,value` triplets (zeros omitted)
/// followed by a SHA-256 line over everything before it.
///
/// `receptor` is a cell index or one of `exported`, `airborne`; the
/// `oxidized` pseudo-receptor of block `hg0` records the oxidised fraction.
pub fn write_srm(srm: &SourceReceptorMatrix) -> String {
    let mut out = format!("# schema: {SRM_SCHEMA}\n# nx={} ny={}\n# sources=", srm.nx, srm.ny);
    let srcs: Vec<String> = srm.sources.iter().map(usize::to_string).collect();
    out.push_str(&srcs.join(" "));
    out.push_str("\nspecies,receptor,source,value\n");
    for (b, name) in BLOCKS.iter().enumerate() {
        for (&s, col) in srm.sources.iter().zip(&srm.columns) {
            for (r, t) in col.deposited.iter().enumerate() {
                let v = block(t, b);
                if v != 0.0 {
                    writeln!(out, "{name},{r},{s},{v:e}").unwrap();
                }
            }
            for (label, t) in [("exported", &col.exported), ("airborne", &col.airborne)] {
                let v = block(t, b);
                if v != 0.0 {
                    writeln!(out, "{name},{label},{s},{v:e}").unwrap();
                }
            }
            if b == 0 && col.oxidized != 0.0 {
                writeln!(out, "{name},oxidized,{s},{:e}", col.oxidized).unwrap();
            }
        }
    }
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    writeln!(out, "# sha256={digest}").unwrap();
    out
}

pub fn read_srm(text: &str) -> Result<SourceReceptorMatrix, SrmFileError> {
    let bad = |line: usize, message: String| SrmFileError::Malformed { line, message };
    let body_end = text.rfind("# sha256=").ok_or(SrmFileError::MissingChecksum)?;
    let (body, tail) = text.split_at(body_end);
    let stated = tail.trim_start_matches("# sha256=").trim().to_owned();
    let actual = hex::encode(Sha256::digest(body.as_bytes()));
    if stated != actual {
        return Err(SrmFileError::Checksum { stated, actual });
    }

    let mut lines = body.lines().enumerate().map(|(n, l)| (n + 1, l));
    match lines.next() {
        Some((_, l)) if l == format!("# schema: {SRM_SCHEMA}") => {}
        _ => return Err(bad(1, format!("expected '# schema: {SRM_SCHEMA}'"))),
    }
    let (n, dims) = lines.next().ok_or_else(|| bad(2, "missing grid line".into()))?;
    let mut nx = None;
    let mut ny = None;
    for tok in dims.trim_start_matches('#').split_whitespace() {
        match tok.split_once('=') {
            Some(("nx", v)) => nx = v.parse::<usize>().ok(),
            Some(("ny", v)) => ny = v.parse::<usize>().ok(),
            _ => return Err(bad(n, format!("unexpected token '{tok}'"))),
        }
    }
    let (nx, ny) = nx.zip(ny).ok_or_else(|| bad(n, "grid line needs nx and ny".into()))?;
    let (n, srcs) = lines.next().ok_or_else(|| bad(3, "missing sources line".into()))?;
    let srcs = srcs.strip_prefix("# sources=").ok_or_else(|| bad(n, "expected '# sources='".into()))?;
    let sources = srcs
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| bad(n, format!("source '{s}': {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if sources.windows(2).any(|w| w[0] >= w[1]) || sources.iter().any(|&s| s >= nx * ny) {
        return Err(bad(n, "sources must be ascending cell indices inside the grid".into()));
    }
    match lines.next() {
        Some((_, "species,receptor,source,value")) => {}
        Some((n, l)) => return Err(bad(n, format!("unexpected header '{l}'"))),
        None => return Err(bad(4, "missing column header".into())),
    }

    let index: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut columns: Vec<SrColumn> = sources
        .iter()
        .map(|_| SrColumn {
            deposited: vec![Tracers::ZERO; nx * ny],
            exported: Tracers::ZERO,
            airborne: Tracers::ZERO,
            oxidized: 0.0,
        })
        .collect();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(n, format!("expected 4 fields, found {}", f.len())));
        }
        let b = BLOCKS.iter().position(|&s| s == f[0]).ok_or_else(|| bad(n, format!("unknown species '{}'", f[0])))?;
        let src: usize = f[2].parse().map_err(|e| bad(n, format!("source: {e}")))?;
        let k = *index.get(&src).ok_or_else(|| bad(n, format!("source {src} not declared")))?;
        let v: f64 = f[3].parse().map_err(|e| bad(n, format!("value: {e}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(bad(n, format!("value {v} must be finite and >= 0")));
        }
        let col = &mut columns[k];
        match f[1] {
            "exported" => set_block(&mut col.exported, b, v),
            "airborne" => set_block(&mut col.airborne, b, v),
            "oxidized" if b == 0 => col.oxidized = v,
            r => {
                let r: usize = r.parse().map_err(|e| bad(n, format!("receptor: {e}")))?;
                if r >= nx * ny {
                    return Err(bad(n, format!("receptor {r} outside grid")));
                }
                set_block(&mut col.deposited[r], b, v);
            }
        }
    }
    Ok(SourceReceptorMatrix { nx, ny, sources, columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (GridSpec, TransportParams) {
        let grid = GridSpec::uniform(9, 7, 50.0, "P01");
        let mut p = TransportParams::uniform(grid.cells(), 3.0, 1.0);
        p.horizon = 10.0 * 86400.0;
        (grid, p)
    }

    #[test]
    fn unit_pulse_reproduces_its_column() {
        let (grid, p) = setup();
        let srm = build_srm(&p, &grid, &BTreeSet::from([20, 31])).unwrap();
        let mut e = EmissionField::for_grid(&grid);
        e.cells[31] = SpeciatedMass::new(1.0, 1.0, 1.0);
        let direct = simulate(&e, &p, &grid).unwrap();
        let via = srm.apply(&e).unwrap();
        assert_eq!(direct.deposited, via.deposited);
        for sums in srm.column_sums() {
            assert!(sums.hg0 + sums.ox <= 1.0 && sums.hg2 <= 1.0 && sums.hgp <= 1.0);
        }
    }

    #[test]
    fn apply_rejects_uncovered_cells() {
        let (grid, p) = setup();
        let srm = build_srm(&p, &grid, &BTreeSet::from([20])).unwrap();
        let mut e = EmissionField::for_grid(&grid);
        e.cells[21].hg2 = 1.0;
        assert_eq!(srm.apply(&e).unwrap_err(), TransportError::UncoveredSource(21));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (grid, p) = setup();
        let srm = build_srm(&p, &grid, &BTreeSet::from([3, 20, 44])).unwrap();
        let text = write_srm(&srm);
        assert_eq!(read_srm(&text).unwrap(), srm);
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let (grid, p) = setup();
        let srm = build_srm(&p, &grid, &BTreeSet::from([20])).unwrap();
        let text = write_srm(&srm).replacen("hg0,", "hg2,", 1);
        assert!(matches!(read_srm(&text), Err(SrmFileError::Checksum { .. })));
        assert_eq!(read_srm("no checksum"), Err(SrmFileError::MissingChecksum));
    }
}
