//! Linear surrogate for atmospheric transport and deposition.
//!
//! A single-layer finite-volume model on the [`GridSpec`] carries four
//! tracers: primary Hg⁰, Hg²⁺ and Hg_p plus the Hg²⁺ produced by oxidising
//! Hg⁰ (kept apart so deposition of oxidised mass can be credited to its
//! elemental source). Emissions enter as a pulse at t = 0 and the model runs
//! until `horizon`; for a time-invariant linear system the integrated fate of
//! a pulse equals the steady-state annual deposition of the same emission
//! released at a constant annual rate.

mod solver;
mod srm;

pub use solver::{max_stable_dt, simulate};
pub use srm::{build_srm, read_srm, write_srm, SourceReceptorMatrix, SrColumn, SrmFileError, SRM_SCHEMA};

use crate::grid::GridSpec;
use crate::ids::{PlantId, ProvinceId};
use crate::inventory::Plant;
use crate::mass::SpeciatedMass;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::{Add, AddAssign, Mul};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("time step {dt} s violates the stability limit; largest stable dt is {max_dt} s")]
    CflViolation { dt: f64, max_dt: f64 },
    #[error("plant {plant} at ({lat}, {lon}) lies outside the grid")]
    PlantOutsideDomain { plant: PlantId, lat: f64, lon: f64 },
    #[error("inventory references plant {0} missing from the plant registry")]
    UnknownPlant(PlantId),
    #[error("invalid transport parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("emission field dimensions {got:?} do not match grid {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("cell {0} carries emissions but is not a source of the source-receptor matrix")]
    UncoveredSource(usize),
}

/// Lateral boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Outflow leaves the domain; inflow carries `boundary_inflow`.
    Open,
    /// No flux through the domain edge.
    Closed,
}

/// First-order rate per species, 1/s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRates {
    pub hg0: f64,
    pub hg2: f64,
    pub hgp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    /// Eastward wind per cell, m/s, row-major.
    pub wind_u: Vec<f64>,
    /// Northward wind per cell, m/s, row-major.
    pub wind_v: Vec<f64>,
    /// Horizontal diffusivity, m²/s.
    pub diffusivity: f64,
    /// Deposition rate per species, 1/s.
    pub deposition: SpeciesRates,
    /// Hg⁰ → Hg²⁺ conversion rate, 1/s.
    pub oxidation: f64,
    pub boundary: Boundary,
    /// Ghost-cell column mass beyond open edges, grams per cell.
    pub boundary_inflow: SpeciatedMass,
    /// Maximum solver step, s.
    pub dt: f64,
    /// Simulated duration, s.
    pub horizon: f64,
}

impl TransportParams {
    /// Uniform wind over `cells` cells with otherwise plausible defaults.
    pub fn uniform(cells: usize, u: f64, v: f64) -> Self {
        Self {
            wind_u: vec![u; cells],
            wind_v: vec![v; cells],
            diffusivity: 2.0e4,
            deposition: SpeciesRates { hg0: 1.0 / (180.0 * 86400.0), hg2: 1.0 / (2.0 * 86400.0), hgp: 1.0 / (4.0 * 86400.0) },
            oxidation: 1.0 / (120.0 * 86400.0),
            boundary: Boundary::Open,
            boundary_inflow: SpeciatedMass::ZERO,
            dt: 3600.0,
            horizon: 30.0 * 86400.0,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), TransportError> {
        let bad = |field, reason: &str| Err(TransportError::InvalidParams { field, reason: reason.to_owned() });
        if self.wind_u.len() != grid.cells() || self.wind_v.len() != grid.cells() {
            return bad("wind", "field length must equal nx*ny");
        }
        if self.wind_u.iter().chain(&self.wind_v).any(|w| !w.is_finite()) {
            return bad("wind", "must be finite");
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.diffusivity) {
            return bad("diffusivity", "must be finite and >= 0");
        }
        let d = self.deposition;
        if !(nonneg(d.hg0) && nonneg(d.hg2) && nonneg(d.hgp)) {
            return bad("deposition", "rates must be finite and >= 0");
        }
        if !nonneg(self.oxidation) {
            return bad("oxidation", "must be finite and >= 0");
        }
        let b = self.boundary_inflow;
        if !(nonneg(b.hg0) && nonneg(b.hg2) && nonneg(b.hgp)) {
            return bad("boundary_inflow", "must be finite and >= 0");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "must be > 0");
        }
        if !nonneg(self.horizon) {
            return bad("horizon", "must be finite and >= 0");
        }
        Ok(())
    }
}

/// Per-tracer quantity: the three primary species plus oxidised-origin Hg²⁺.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tracers {
    pub hg0: f64,
    pub hg2: f64,
    pub hgp: f64,
    /// Hg²⁺ that was emitted as Hg⁰.
    pub ox: f64,
}

impl Tracers {
    pub const ZERO: Tracers = Tracers { hg0: 0.0, hg2: 0.0, hgp: 0.0, ox: 0.0 };

    /// Collapse to species of arrival: oxidised mass counts as Hg²⁺.
    pub fn by_species(&self) -> SpeciatedMass {
        SpeciatedMass::new(self.hg0, self.hg2 + self.ox, self.hgp)
    }

    pub fn total(&self) -> f64 {
        self.hg0 + self.hg2 + self.hgp + self.ox
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.hg0, self.hg2, self.hgp, self.ox]
    }
}

impl Add for Tracers {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Tracers { hg0: self.hg0 + r.hg0, hg2: self.hg2 + r.hg2, hgp: self.hgp + r.hgp, ox: self.ox + r.ox }
    }
}

impl AddAssign for Tracers {
    fn add_assign(&mut self, r: Self) {
        *self = *self + r;
    }
}

impl Mul<f64> for Tracers {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Tracers { hg0: self.hg0 * k, hg2: self.hg2 * k, hgp: self.hgp * k, ox: self.ox * k }
    }
}

/// Gridded speciated emission, grams per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionField {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<SpeciatedMass>,
}

impl EmissionField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self { nx, ny, cells: vec![SpeciatedMass::ZERO; nx * ny] }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::zeros(grid.nx(), grid.ny())
    }

    pub fn total(&self) -> SpeciatedMass {
        self.cells.iter().sum()
    }

    pub fn nonzero_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, m)| !m.is_zero()).map(|(c, _)| c)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { nx: self.nx, ny: self.ny, cells: self.cells.iter().map(|m| *m * k).collect() }
    }

    pub fn combine(&self, other: &Self, a: f64, b: f64) -> Self {
        assert_eq!((self.nx, self.ny), (other.nx, other.ny));
        let cells = self.cells.iter().zip(&other.cells).map(|(x, y)| *x * a + *y * b).collect();
        Self { nx: self.nx, ny: self.ny, cells }
    }
}

/// Outcome of a transport run, grams over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositionField {
    pub nx: usize,
    pub ny: usize,
    /// Deposited mass per cell.
    pub deposited: Vec<Tracers>,
    pub emitted: Tracers,
    /// Mass carried in from open boundaries.
    pub imported: Tracers,
    /// Mass carried out through open boundaries.
    pub exported: Tracers,
    /// Mass still aloft at the end of the horizon.
    pub airborne: Tracers,
    /// Hg⁰ mass converted to Hg²⁺.
    pub oxidized: f64,
}

impl DepositionField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            deposited: vec![Tracers::ZERO; nx * ny],
            emitted: Tracers::ZERO,
            imported: Tracers::ZERO,
            exported: Tracers::ZERO,
            airborne: Tracers::ZERO,
            oxidized: 0.0,
        }
    }

    /// Deposition in `cell` by species of arrival.
    pub fn species_at(&self, cell: usize) -> SpeciatedMass {
        self.deposited[cell].by_species()
    }

    pub fn total_deposited(&self) -> Tracers {
        self.deposited.iter().fold(Tracers::ZERO, |a, t| a + *t)
    }

    /// Worst relative closure error over the four tracer budgets.
    ///
    /// Hg⁰ loses `oxidized` to the oxidised-origin tracer, which gains it.
    pub fn mass_balance_error(&self) -> f64 {
        let dep = self.total_deposited();
        let src = self.emitted + self.imported;
        let sink = dep + self.exported + self.airborne;
        let budgets = [
            (src.hg0, sink.hg0 + self.oxidized),
            (src.hg2, sink.hg2),
            (src.hgp, sink.hgp),
            (src.ox + self.oxidized, sink.ox),
        ];
        let scale = (src.total() + self.oxidized).max(f64::MIN_POSITIVE);
        budgets.iter().map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
    }
}

/// Places each plant's emission wholly in the cell containing it.
pub fn rasterize_emissions(
    deltas: &BTreeMap<PlantId, SpeciatedMass>,
    plants: &[Plant],
    grid: &GridSpec,
) -> Result<EmissionField, TransportError> {
    let registry: BTreeMap<&PlantId, &Plant> = plants.iter().map(|p| (&p.id, p)).collect();
    let mut field = EmissionField::for_grid(grid);
    for (id, mass) in deltas {
        let plant = registry.get(id).ok_or_else(|| TransportError::UnknownPlant(id.clone()))?;
        let cell = grid.locate(plant.lat, plant.lon).ok_or_else(|| TransportError::PlantOutsideDomain {
            plant: id.clone(),
            lat: plant.lat,
            lon: plant.lon,
        })?;
        field.cells[cell] += *mass;
    }
    Ok(field)
}

/// Deposition summed by province, species of arrival.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvinceDeposition {
    pub by_province: BTreeMap<ProvinceId, SpeciatedMass>,
    /// Deposition over cells outside every province.
    pub external: SpeciatedMass,
}

impl ProvinceDeposition {
    pub fn thg(&self, province: &ProvinceId) -> f64 {
        self.by_province.get(province).map_or(0.0, SpeciatedMass::total)
    }

    pub fn total(&self) -> SpeciatedMass {
        self.by_province.values().sum::<SpeciatedMass>() + self.external
    }
}

pub fn aggregate_to_provinces(dep: &DepositionField, grid: &GridSpec) -> ProvinceDeposition {
    let mut out = ProvinceDeposition::default();
    for p in grid.provinces() {
        out.by_province.insert(p, SpeciatedMass::ZERO);
    }
    for (cell, region) in grid.region_mask.iter().enumerate() {
        let m = dep.species_at(cell);
        match region {
            Some(p) => *out.by_province.get_mut(p).expect("mask province registered") += m,
            None => out.external += m,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::fixtures;

    fn plant_at(id: &str, grid: &GridSpec, cell: usize) -> Plant {
        let mut p = fixtures::plant(id);
        (p.lat, p.lon) = grid.cell_centre(cell);
        p
    }

    #[test]
    fn rasterize_single_and_shared_cells() {
        let grid = GridSpec::uniform(4, 3, 50.0, "P01");
        let plants = vec![plant_at("A", &grid, 5), plant_at("B", &grid, 5), plant_at("C", &grid, 11)];
        let one = BTreeMap::from([(PlantId::from("A"), SpeciatedMass::new(1.0, 2.0, 3.0))]);
        let f = rasterize_emissions(&one, &plants, &grid).unwrap();
        assert_eq!(f.nonzero_cells().collect::<Vec<_>>(), vec![5]);

        let two = BTreeMap::from([
            (PlantId::from("A"), SpeciatedMass::new(1.0, 2.0, 3.0)),
            (PlantId::from("B"), SpeciatedMass::new(0.5, 0.5, 0.5)),
            (PlantId::from("C"), SpeciatedMass::new(4.0, 0.0, 0.0)),
        ]);
        let f = rasterize_emissions(&two, &plants, &grid).unwrap();
        assert_eq!(f.cells[5], SpeciatedMass::new(1.5, 2.5, 3.5));
        assert_eq!(f.total(), two.values().sum());
    }

    #[test]
    fn rasterize_rejects_plants_outside_grid() {
        let grid = GridSpec::uniform(4, 3, 50.0, "P01");
        let mut p = fixtures::plant("FAR");
        p.lat = 45.0;
        let inv = BTreeMap::from([(p.id.clone(), SpeciatedMass::new(1.0, 0.0, 0.0))]);
        let err = rasterize_emissions(&inv, &[p], &grid).unwrap_err();
        assert!(matches!(err, TransportError::PlantOutsideDomain { plant, .. } if plant.as_str() == "FAR"));
        let err = rasterize_emissions(&inv, &[], &grid).unwrap_err();
        assert_eq!(err, TransportError::UnknownPlant("FAR".into()));
    }

    #[test]
    fn aggregation_buckets() {
        let mut grid = GridSpec::uniform(3, 1, 50.0, "P01");
        grid.region_mask[1] = Some("P02".into());
        let mut dep = DepositionField::zeros(3, 1);
        dep.deposited[1] = Tracers { hg0: 1.0, hg2: 2.0, hgp: 3.0, ox: 4.0 };
        let agg = aggregate_to_provinces(&dep, &grid);
        assert_eq!(agg.by_province[&ProvinceId::from("P02")], SpeciatedMass::new(1.0, 6.0, 3.0));
        assert_eq!(agg.thg(&"P01".into()), 0.0);
        assert_eq!(agg.total().total(), 10.0);

        grid.region_mask[2] = None;
        dep.deposited[2] = Tracers { hg0: 1.0, ..Tracers::ZERO };
        let agg = aggregate_to_provinces(&dep, &grid);
        assert_eq!(agg.external, SpeciatedMass::new(1.0, 0.0, 0.0));
        assert_eq!(agg.total().total(), 11.0);
    }
}
