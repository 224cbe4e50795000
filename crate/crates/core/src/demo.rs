//! Synthetic demo bundle: 5 provinces, 12 plants, 10 food categories on a
//! 20×20 grid. Every number here is made up for exercising the pipeline and
//! has no empirical meaning.
//!
//! Without a seed the bundle is fixed. A seed jitters coal mercury content,
//! food concentrations, intake rates and baseline mortality by up to ±10%.

use crate::grid::{write_gridded, write_mask, GridHeader, GridSpec};
use crate::ids::ProvinceId;
use crate::ingest::{self, header_line, schema_line};
use crate::transport::TransportParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

pub const EPOCHS: (&str, &str) = ("2010", "2014");

pub const HEADER: GridHeader = GridHeader { nx: 20, ny: 20, cell_size_km: 50.0, origin_lat: 28.0, origin_lon: 105.0 };

pub const PROVINCES: [&str; 5] = ["P01", "P02", "P03", "P04", "P05"];

/// (coal Hg g/t, washed fraction, washing removal, release ratio)
const PROVINCE_PARAMS: [(f64, f64, f64, f64); 5] = [
    (0.17, 0.20, 0.30, 0.99),
    (0.22, 0.15, 0.30, 0.99),
    (0.15, 0.25, 0.28, 0.98),
    (0.28, 0.10, 0.30, 0.99),
    (0.19, 0.30, 0.32, 0.99),
];

/// (combo, removal efficiency, hg0, hg2, hgp shares)
const APCD: [(&str, f64, f64, f64, f64); 5] = [
    ("ESP", 0.29, 0.56, 0.38, 0.06),
    ("ESP+WFGD", 0.62, 0.70, 0.27, 0.03),
    ("FF+WFGD", 0.70, 0.66, 0.31, 0.03),
    ("SCR+ESP+WFGD", 0.70, 0.25, 0.73, 0.02),
    ("SCR+FF+WFGD", 0.85, 0.30, 0.68, 0.02),
];

struct DemoPlant {
    id: &'static str,
    province: &'static str,
    company: &'static str,
    capacity_mw: f64,
    cell: (usize, usize),
    hours: f64,
    ccr: (f64, f64),
    apcd: (&'static str, &'static str),
    release_ratio: Option<f64>,
    decommissioned: bool,
}

const fn plant(
    id: &'static str,
    province: &'static str,
    company: &'static str,
    capacity_mw: f64,
    cell: (usize, usize),
    ccr: (f64, f64),
    apcd: (&'static str, &'static str),
    decommissioned: bool,
) -> DemoPlant {
    DemoPlant { id, province, company, capacity_mw, cell, hours: 5000.0, ccr, apcd, release_ratio: None, decommissioned }
}

/// SUS: PL01-PL04. APCD: PL05, PL06, PL07 (SCR retrofit), PL08, PL11.
/// PGE: PL06 (312 → 297 g/kWh), PL09, PL10, PL11, PL12 (rate rises).
const PLANTS: [DemoPlant; 12] = [
    plant("PL01", "P01", "Northgen", 50.0, (2, 3), (390.0, 390.0), ("ESP", "ESP"), true),
    plant("PL02", "P02", "Riverpower", 135.0, (9, 5), (370.0, 370.0), ("ESP", "ESP"), true),
    plant("PL03", "P03", "Eastgrid", 200.0, (15, 2), (355.0, 355.0), ("ESP+WFGD", "ESP+WFGD"), true),
    plant("PL04", "P05", "Northgen", 90.0, (12, 16), (380.0, 380.0), ("ESP", "ESP"), true),
    DemoPlant { release_ratio: Some(0.97), ..plant("PL05", "P01", "Riverpower", 600.0, (4, 7), (320.0, 320.0), ("ESP", "ESP+WFGD"), false) },
    plant("PL06", "P02", "Northgen", 1000.0, (10, 8), (312.0, 297.0), ("ESP", "ESP+WFGD"), false),
    plant("PL07", "P04", "Eastgrid", 660.0, (4, 14), (315.0, 315.0), ("ESP+WFGD", "SCR+ESP+WFGD"), false),
    plant("PL08", "P03", "Westland", 300.0, (16, 6), (335.0, 335.0), ("ESP", "FF+WFGD"), false),
    plant("PL09", "P04", "Riverpower", 1320.0, (6, 12), (305.0, 290.0), ("ESP+WFGD", "ESP+WFGD"), false),
    plant("PL10", "P05", "Westland", 350.0, (14, 13), (320.0, 305.0), ("ESP", "ESP"), false),
    plant("PL11", "P05", "Eastgrid", 600.0, (11, 18), (330.0, 310.0), ("ESP+WFGD", "SCR+FF+WFGD"), false),
    plant("PL12", "P01", "Westland", 100.0, (1, 8), (300.0, 305.0), ("ESP", "ESP"), false),
];

const CATEGORIES: [&str; 10] = ["rice", "wheat", "vegetables", "fish", "pork", "poultry", "eggs", "fruit", "tubers", "legumes"];
/// Baseline MeHg, µg/kg.
const CONCENTRATION: [f64; 10] = [2.0, 0.5, 0.3, 40.0, 1.0, 0.8, 0.6, 0.2, 0.4, 0.5];
/// Intake, kg/person/day.
const INTAKE: [f64; 10] = [0.25, 0.15, 0.30, 0.03, 0.06, 0.02, 0.025, 0.10, 0.04, 0.02];
/// Per-province multipliers on concentration and intake.
const CONCENTRATION_FACTOR: [f64; 5] = [1.2, 0.9, 1.0, 1.5, 0.8];
const INTAKE_FACTOR: [f64; 5] = [1.0, 1.1, 0.9, 1.0, 1.2];
/// (local, foreign) shares per category; the rest splits evenly over the other four provinces.
const TRADE: [(f64, f64); 10] = [
    (0.8, 0.0),
    (0.6, 0.2),
    (0.9, 0.0),
    (0.5, 0.1),
    (0.7, 0.1),
    (0.7, 0.1),
    (0.8, 0.0),
    (0.6, 0.2),
    (0.8, 0.0),
    (0.4, 0.2),
];
/// Baseline deposition, g/yr.
const DEPOSITION_BASELINE: [f64; 5] = [9.0e6, 1.1e7, 1.2e7, 8.0e6, 1.4e7];
/// (body weight kg, population, births/yr)
const POPULATION: [(f64, f64, f64); 5] = [
    (58.0, 4.0e7, 4.6e5),
    (62.0, 6.5e7, 7.1e5),
    (60.0, 5.5e7, 5.8e5),
    (57.0, 3.5e7, 4.2e5),
    (63.0, 8.0e7, 8.5e5),
];
/// Fatal heart attacks per year.
const BASELINE_MORTALITY: [f64; 5] = [24000.0, 39000.0, 33000.0, 21000.0, 48000.0];
/// Baseline hair mercury, µg/g.
const BASELINE_HAIR: [f64; 5] = [0.45, 0.38, 0.41, 0.55, 0.35];

fn region(i: usize, j: usize) -> Option<&'static str> {
    match (i, j) {
        (19, _) => None,
        (0..=6, 0..=9) => Some("P01"),
        (7..=12, 0..=9) => Some("P02"),
        (_, 0..=9) => Some("P03"),
        (0..=8, _) => Some("P04"),
        _ => Some("P05"),
    }
}

pub fn grid() -> GridSpec {
    let mask = (0..HEADER.cells())
        .map(|c| region(c % HEADER.nx, c / HEADER.nx).map(ProvinceId::from))
        .collect();
    GridSpec::new(HEADER, mask)
}

/// Westerly wind strengthening northward with a weak meridional shear, m/s.
pub fn wind() -> (Vec<f64>, Vec<f64>) {
    let cells = HEADER.cells();
    let u = (0..cells).map(|c| 4.0 + 0.05 * (c / HEADER.nx) as f64).collect();
    let v = (0..cells).map(|c| 0.5 - 0.05 * (c % HEADER.nx) as f64).collect();
    (u, v)
}

pub fn transport() -> TransportParams {
    let (wind_u, wind_v) = wind();
    let mut p = TransportParams::uniform(HEADER.cells(), 0.0, 0.0);
    p.wind_u = wind_u;
    p.wind_v = wind_v;
    p.boundary_inflow = crate::mass::SpeciatedMass::new(40.0, 2.0, 1.0);
    p
}

struct Jitter(Option<ChaCha8Rng>);

impl Jitter {
    fn apply(&mut self, x: f64) -> f64 {
        match &mut self.0 {
            Some(rng) => {
                let f = 1.0 + 0.2 * (rng.random::<f64>() - 0.5);
                // keep files short and exactly reproducible from their text
                format!("{:.6e}", x * f).parse().expect("formatted float parses")
            }
            None => x,
        }
    }
}

/// File name → contents for the demo bundle, manifest excluded.
pub fn files(seed: Option<u64>) -> BTreeMap<String, String> {
    let mut j = Jitter(seed.map(ChaCha8Rng::seed_from_u64));
    let mut out = BTreeMap::new();

    let mut s = format!("{}\n{}\n", schema_line("provinces"), header_line(&ingest::PROVINCE_COLUMNS));
    for (id, (hg, wf, wr, r)) in PROVINCES.iter().zip(PROVINCE_PARAMS) {
        writeln!(s, "{id},{},{wf},{wr},{r}", j.apply(hg)).unwrap();
    }
    out.insert(ingest::PROVINCES.to_owned(), s);

    let mut s = format!("{}\n{}\n", schema_line("apcd"), header_line(&ingest::APCD_COLUMNS));
    for (combo, eta, h0, h2, hp) in APCD {
        writeln!(s, "{combo},{eta},{h0},{h2},{hp}").unwrap();
    }
    out.insert(ingest::APCD.to_owned(), s);

    let g = grid();
    let mut s = format!("{}\n# synthetic demo plants\n{}\n", schema_line("plants"), header_line(&ingest::PLANT_COLUMNS));
    for p in &PLANTS {
        let (lat, lon) = g.cell_centre(g.index(p.cell.0, p.cell.1));
        let power = p.capacity_mw * 1000.0 * p.hours;
        let (power_t2, coal_t1, coal_t2) = if p.decommissioned {
            (0.0, power * p.ccr.0 / 1e6, 0.0)
        } else {
            (power, power * p.ccr.0 / 1e6, power * p.ccr.1 / 1e6)
        };
        writeln!(
            s,
            "{},{},{},{},{:.4},{:.4},{coal_t1},{coal_t2},{power_t2},{},{},{},{},{},{}",
            p.id,
            p.province,
            p.company,
            p.capacity_mw,
            lat,
            lon,
            p.ccr.0,
            p.ccr.1,
            p.apcd.0,
            p.apcd.1,
            p.release_ratio.map_or(String::new(), |r| r.to_string()),
            if p.decommissioned { "decommissioned" } else { "active" },
        )
        .unwrap();
    }
    out.insert(ingest::PLANTS.to_owned(), s);

    out.insert(ingest::GRID_MASK.to_owned(), write_mask(&g));
    let (u, v) = wind();
    out.insert(ingest::WIND_U.to_owned(), write_gridded(&HEADER, &u));
    out.insert(ingest::WIND_V.to_owned(), write_gridded(&HEADER, &v));
    out.insert(ingest::TRANSPORT.to_owned(), ingest::transport_to_config(&transport()));

    let mut s = format!("{}\n{}\n", schema_line("food-baseline"), header_line(&ingest::FOOD_BASELINE_COLUMNS));
    for (p, pf) in PROVINCES.iter().zip(CONCENTRATION_FACTOR) {
        for (c, base) in CATEGORIES.iter().zip(CONCENTRATION) {
            writeln!(s, "{p},{c},{}", j.apply(base * pf)).unwrap();
        }
    }
    out.insert(ingest::FOOD_BASELINE.to_owned(), s);

    let mut s = format!("{}\n{}\n", schema_line("deposition-baseline"), header_line(&ingest::DEPOSITION_BASELINE_COLUMNS));
    for (p, d) in PROVINCES.iter().zip(DEPOSITION_BASELINE) {
        writeln!(s, "{p},{d}").unwrap();
    }
    out.insert(ingest::DEPOSITION_BASELINE.to_owned(), s);

    let mut s = format!("{}\n{}\n", schema_line("trade"), header_line(&ingest::TRADE_COLUMNS));
    for (c, (local, foreign)) in CATEGORIES.iter().zip(TRADE) {
        let other = (1.0 - local - foreign) / 4.0;
        for consumer in PROVINCES {
            for producer in PROVINCES {
                let share = if producer == consumer { local } else { other };
                writeln!(s, "{c},{producer},{consumer},{share}").unwrap();
            }
            if foreign > 0.0 {
                writeln!(s, "{c},{},{consumer},{foreign}", crate::exposure::FOREIGN).unwrap();
            }
        }
    }
    out.insert(ingest::TRADE.to_owned(), s);

    let mut s = format!("{}\n{}\n", schema_line("intake"), header_line(&ingest::INTAKE_COLUMNS));
    for (p, pf) in PROVINCES.iter().zip(INTAKE_FACTOR) {
        for (c, base) in CATEGORIES.iter().zip(INTAKE) {
            writeln!(s, "{p},{c},{}", j.apply(base * pf)).unwrap();
        }
    }
    out.insert(ingest::INTAKE.to_owned(), s);

    let mut s = format!("{}\n{}\n", schema_line("population"), header_line(&ingest::POPULATION_COLUMNS));
    for (p, (bw, pop, births)) in PROVINCES.iter().zip(POPULATION) {
        writeln!(s, "{p},{bw},{pop},{births}").unwrap();
    }
    out.insert(ingest::POPULATION.to_owned(), s);

    let mut s = String::from("# dose-response coefficients (synthetic demo values)\n");
    s += "hair_per_intake = 10  # (ug/g hair) per (ug/kg-bw/day)\n";
    s += "iq_slope = 0.18  # IQ points per ug/g hair\n";
    s += "cvd_form = linear  # linear | log-linear\n";
    s += "cvd_beta = 0.066  # fatal heart attack risk per ug/g hair\n";
    for (p, m) in PROVINCES.iter().zip(BASELINE_MORTALITY) {
        writeln!(s, "baseline_mortality.{p} = {}  # deaths/yr", j.apply(m)).unwrap();
    }
    for (p, h) in PROVINCES.iter().zip(BASELINE_HAIR) {
        writeln!(s, "baseline_hair.{p} = {h}  # ug/g").unwrap();
    }
    out.insert(ingest::DOSE_RESPONSE.to_owned(), s);
    out
}

pub fn epochs() -> (String, String) {
    (EPOCHS.0.to_owned(), EPOCHS.1.to_owned())
}

/// Writes the demo bundle, manifest included, into `dir`.
pub fn write(dir: &Path, seed: Option<u64>) -> std::io::Result<()> {
    ingest::write_bundle(dir, &epochs(), &files(seed))
}

/// Scenario file running all three measures over every plant.
pub const SCENARIO_ALL: &str = "\
# all retrofit measures over the whole demo fleet
scenario: demo-all
epochs: 2010 -> 2014
measures: SUS, APCD, PGE
select: all
notes: synthetic demo data
";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest;

    #[test]
    fn demo_bundle_ingests() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), None).unwrap();
        let b = ingest(dir.path()).unwrap_or_else(|v| panic!("{v:#?}"));
        assert_eq!(b.provinces.len(), 5);
        assert_eq!(b.plants.len(), 12);
        assert_eq!(b.exposure.categories().len(), 10);
        assert_eq!(b.grid.cells(), 400);
        for p in &b.plants {
            let cell = b.grid.locate(p.lat, p.lon).unwrap();
            assert_eq!(b.grid.region_mask[cell].as_ref(), Some(&p.province), "{}", p.id);
        }
    }

    #[test]
    fn seed_changes_only_jittered_files() {
        let a = files(None);
        let b = files(Some(7));
        assert_eq!(a, files(None));
        assert_eq!(b, files(Some(7)));
        assert_ne!(a[ingest::PROVINCES], b[ingest::PROVINCES]);
        assert_eq!(a[ingest::TRADE], b[ingest::TRADE]);
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), Some(7)).unwrap();
        ingest(dir.path()).unwrap();
    }
}
