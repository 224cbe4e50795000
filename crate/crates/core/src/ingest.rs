//! Data bundle ingestion.
//!
//! A bundle is a directory of plain-text inputs plus `manifest.csv`, which
//! lists every file with its SHA-256. CSV tables start with a
//! `# schema: hgtrack-<kind>/1` line and carry units in their headers as
//! `name[unit]`. Ingestion reports every violation it finds, each with file
//! and line, instead of stopping at the first.

use crate::config::{ConfigError, KeyValueConfig};
use crate::exposure::{CategoryTable, ExposureChain, FoodBaseline, IntakeProfile, TradeShares, FOREIGN, SHARE_SUM_TOL};
use crate::grid::{parse_mask, parse_numeric_grid, GridSpec};
use crate::health::DoseResponse;
use crate::ids::{Category, ComboKey, PlantId, ProvinceId};
use crate::inventory::{ApcdConfig, Plant, PlantStatus, ProvinceParams, Speciation};
use crate::mass::SpeciatedMass;
use crate::transport::{max_stable_dt, Boundary, SpeciesRates, TransportParams};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

pub const MANIFEST: &str = "manifest.csv";
pub const PROVINCES: &str = "provinces.csv";
pub const APCD: &str = "apcd.csv";
pub const PLANTS: &str = "plants.csv";
pub const GRID_MASK: &str = "grid_mask.txt";
pub const WIND_U: &str = "wind_u.txt";
pub const WIND_V: &str = "wind_v.txt";
pub const TRANSPORT: &str = "transport.conf";
pub const FOOD_BASELINE: &str = "food_baseline.csv";
pub const DEPOSITION_BASELINE: &str = "deposition_baseline.csv";
pub const TRADE: &str = "trade.csv";
pub const INTAKE: &str = "intake.csv";
pub const POPULATION: &str = "population.csv";
pub const DOSE_RESPONSE: &str = "dose_response.conf";

/// Every file a bundle must list in its manifest.
pub const BUNDLE_FILES: [&str; 13] = [
    PROVINCES,
    APCD,
    PLANTS,
    GRID_MASK,
    WIND_U,
    WIND_V,
    TRANSPORT,
    FOOD_BASELINE,
    DEPOSITION_BASELINE,
    TRADE,
    INTAKE,
    POPULATION,
    DOSE_RESPONSE,
];

pub const PROVINCE_COLUMNS: [(&str, &str); 5] = [
    ("province", ""),
    ("coal_hg", "g/t"),
    ("washed_fraction", "1"),
    ("washing_removal", "1"),
    ("release_ratio", "1"),
];
pub const APCD_COLUMNS: [(&str, &str); 5] = [
    ("combo", ""),
    ("removal_efficiency", "1"),
    ("hg0_share", "1"),
    ("hg2_share", "1"),
    ("hgp_share", "1"),
];
pub const PLANT_COLUMNS: [(&str, &str); 15] = [
    ("plant", ""),
    ("province", ""),
    ("company", ""),
    ("capacity", "MW"),
    ("lat", "deg"),
    ("lon", "deg"),
    ("coal_t1", "t/yr"),
    ("coal_t2", "t/yr"),
    ("power_t2", "kWh/yr"),
    ("ccr_t1", "g/kWh"),
    ("ccr_t2", "g/kWh"),
    ("apcd_t1", ""),
    ("apcd_t2", ""),
    ("release_ratio", "1"),
    ("status", ""),
];
pub const FOOD_BASELINE_COLUMNS: [(&str, &str); 3] = [("province", ""), ("category", ""), ("concentration", "ug/kg")];
pub const DEPOSITION_BASELINE_COLUMNS: [(&str, &str); 2] = [("province", ""), ("deposition", "g/yr")];
pub const TRADE_COLUMNS: [(&str, &str); 4] = [("category", ""), ("producer", ""), ("consumer", ""), ("share", "1")];
pub const INTAKE_COLUMNS: [(&str, &str); 3] = [("province", ""), ("category", ""), ("intake", "kg/person/day")];
pub const POPULATION_COLUMNS: [(&str, &str); 4] = [
    ("province", ""),
    ("body_weight", "kg"),
    ("population", "persons"),
    ("births", "persons/yr"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    MissingFile,
    Checksum,
    Schema,
    Unit,
    Parse,
    DanglingReference,
    ShareSum,
    Duplicate,
    Range,
    Missing,
    GridMismatch,
    OutsideGrid,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::MissingFile => "missing-file",
            ViolationKind::Checksum => "checksum",
            ViolationKind::Schema => "schema",
            ViolationKind::Unit => "unit",
            ViolationKind::Parse => "parse",
            ViolationKind::DanglingReference => "dangling-reference",
            ViolationKind::ShareSum => "share-sum",
            ViolationKind::Duplicate => "duplicate",
            ViolationKind::Range => "range",
            ViolationKind::Missing => "missing",
            ViolationKind::GridMismatch => "grid-mismatch",
            ViolationKind::OutsideGrid => "outside-grid",
        }
    }
}

/// One problem in a bundle. `line` is 0 when it concerns a whole file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    pub line: usize,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.file, self.line, self.kind.label(), self.message)
    }
}

#[derive(Debug, Default)]
struct Violations(Vec<Violation>);

impl Violations {
    fn push(&mut self, file: &str, line: usize, kind: ViolationKind, message: impl Into<String>) {
        self.0.push(Violation { file: file.to_owned(), line, kind, message: message.into() });
    }
}

/// A fully validated bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub epochs: (String, String),
    pub provinces: Vec<ProvinceParams>,
    pub apcd: BTreeMap<ComboKey, ApcdConfig>,
    pub plants: Vec<Plant>,
    pub grid: GridSpec,
    pub transport: TransportParams,
    pub exposure: ExposureChain,
    pub dose: DoseResponse,
    /// SHA-256 of each listed file.
    pub checksums: BTreeMap<String, String>,
    /// SHA-256 of the manifest itself.
    pub bundle_checksum: String,
    /// SHA-256 over the mask and both wind files.
    pub grid_checksum: String,
}

impl DataBundle {
    pub fn province(&self, id: &ProvinceId) -> Option<&ProvinceParams> {
        self.provinces.iter().find(|p| &p.id == id)
    }

    pub fn plant(&self, id: &PlantId) -> Option<&Plant> {
        self.plants.iter().find(|p| &p.id == id)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses a unit-annotated header cell, `name[unit]` or `name`.
fn split_header(cell: &str) -> (&str, &str) {
    let cell = cell.trim();
    match cell.strip_suffix(']').and_then(|c| c.split_once('[')) {
        Some((name, unit)) => (name.trim(), unit.trim()),
        None => (cell, ""),
    }
}

pub fn header_line(columns: &[(&str, &str)]) -> String {
    columns
        .iter()
        .map(|(n, u)| if u.is_empty() { (*n).to_owned() } else { format!("{n}[{u}]") })
        .collect::<Vec<_>>()
        .join(",")
}

pub fn schema_line(kind: &str) -> String {
    format!("# schema: hgtrack-{kind}/1")
}

struct Row {
    line: usize,
    fields: Vec<String>,
}

struct Table<'a> {
    file: &'a str,
    rows: Vec<Row>,
}

impl Row {
    fn text(&self, i: usize) -> &str {
        self.fields.get(i).map_or("", |s| s.as_str())
    }

    fn id(&self, i: usize, file: &str, name: &str, v: &mut Violations) -> Option<String> {
        let s = self.text(i);
        if s.is_empty() {
            v.push(file, self.line, ViolationKind::Parse, format!("{name} is empty"));
            None
        } else {
            Some(s.to_owned())
        }
    }

    fn num(&self, i: usize, file: &str, name: &str, v: &mut Violations) -> Option<f64> {
        let s = self.text(i);
        match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            Ok(_) => {
                v.push(file, self.line, ViolationKind::Range, format!("{name} = {s} is not finite"));
                None
            }
            Err(_) => {
                v.push(file, self.line, ViolationKind::Parse, format!("{name}: cannot parse '{s}' as a number"));
                None
            }
        }
    }

    fn nonneg(&self, i: usize, file: &str, name: &str, v: &mut Violations) -> Option<f64> {
        let x = self.num(i, file, name, v)?;
        if x < 0.0 {
            v.push(file, self.line, ViolationKind::Range, format!("{name} = {x} must be >= 0"));
            return None;
        }
        Some(x)
    }
}

/// Splits a CSV text after its schema line, checking the header.
fn parse_table<'a>(file: &'a str, text: &str, kind: &str, columns: &[(&str, &str)], v: &mut Violations) -> Option<Table<'a>> {
    let mut lines = text.lines();
    let expected_schema = schema_line(kind);
    match lines.next() {
        Some(first) if first.trim() == expected_schema => {}
        Some(first) => {
            v.push(file, 1, ViolationKind::Schema, format!("expected '{expected_schema}', found '{}'", first.trim()));
            return None;
        }
        None => {
            v.push(file, 1, ViolationKind::Schema, "file is empty");
            return None;
        }
    }
    let body_start = text.find('\n').map_or(text.len(), |i| i + 1);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text[body_start..].as_bytes());
    let mut records = reader.records();
    let header = loop {
        match records.next() {
            Some(Ok(r)) => break r,
            Some(Err(e)) => {
                v.push(file, 2, ViolationKind::Parse, format!("unreadable header: {e}"));
                return None;
            }
            None => {
                v.push(file, 2, ViolationKind::Schema, "missing header row");
                return None;
            }
        }
    };
    let header_line_no = header.position().map_or(2, |p| p.line() as usize + 1);
    let mut ok = true;
    if header.len() != columns.len() {
        v.push(
            file,
            header_line_no,
            ViolationKind::Schema,
            format!("expected {} columns ({}), found {}", columns.len(), header_line(columns), header.len()),
        );
        ok = false;
    }
    for (cell, (name, unit)) in header.iter().zip(columns) {
        let (got_name, got_unit) = split_header(cell);
        if got_name != *name {
            v.push(file, header_line_no, ViolationKind::Schema, format!("expected column '{name}', found '{got_name}'"));
            ok = false;
        } else if got_unit != *unit {
            v.push(
                file,
                header_line_no,
                ViolationKind::Unit,
                format!("column '{name}' must be in [{unit}], found [{got_unit}]"),
            );
            ok = false;
        }
    }
    if !ok {
        return None;
    }
    let mut rows = Vec::new();
    for rec in records {
        match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize + 1);
                if r.len() != columns.len() {
                    v.push(file, line, ViolationKind::Schema, format!("expected {} fields, found {}", columns.len(), r.len()));
                    continue;
                }
                rows.push(Row { line, fields: r.iter().map(str::to_owned).collect() });
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize + 1);
                v.push(file, line, ViolationKind::Parse, e.to_string());
            }
        }
    }
    Some(Table { file, rows })
}

fn read_file(dir: &Path, file: &str, v: &mut Violations) -> Option<Vec<u8>> {
    match std::fs::read(dir.join(file)) {
        Ok(b) => Some(b),
        Err(e) => {
            v.push(file, 0, ViolationKind::MissingFile, format!("cannot read: {e}"));
            None
        }
    }
}

fn as_text<'a>(file: &str, bytes: &'a [u8], v: &mut Violations) -> Option<&'a str> {
    match std::str::from_utf8(bytes) {
        Ok(t) => Some(t),
        Err(e) => {
            v.push(file, 0, ViolationKind::Parse, format!("not UTF-8: {e}"));
            None
        }
    }
}

struct Manifest {
    epochs: Option<(String, String)>,
    files: BTreeMap<String, (String, usize)>,
}

/// Parses `t1 -> t2`, requiring t1 to precede t2.
///
/// Labels compare by their leading integer (a year), so `2014-2015` is a
/// valid label.
pub fn parse_epochs(s: &str) -> Result<(String, String), String> {
    let (a, b) = s.split_once("->").ok_or_else(|| format!("expected 't1 -> t2', found '{s}'"))?;
    let (a, b) = (a.trim(), b.trim());
    let year = |l: &str| -> Result<i64, String> {
        let digits: String = l.chars().take_while(char::is_ascii_digit).collect();
        digits.parse().map_err(|_| format!("epoch label '{l}' does not start with a year"))
    };
    if year(a)? >= year(b)? {
        return Err(format!("epoch {a} does not precede {b}"));
    }
    Ok((a.to_owned(), b.to_owned()))
}

fn parse_manifest(text: &str, v: &mut Violations) -> Manifest {
    let mut m = Manifest { epochs: None, files: BTreeMap::new() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == schema_line("manifest") => {}
        other => {
            v.push(
                MANIFEST,
                1,
                ViolationKind::Schema,
                format!("expected '{}', found '{}'", schema_line("manifest"), other.map_or("", |o| o.1)),
            );
        }
    }
    let mut saw_header = false;
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        if let Some(c) = l.strip_prefix('#') {
            if let Some(e) = c.trim().strip_prefix("epochs:") {
                match parse_epochs(e) {
                    Ok(p) => m.epochs = Some(p),
                    Err(msg) => v.push(MANIFEST, line, ViolationKind::Range, msg),
                }
            }
            continue;
        }
        if !saw_header {
            saw_header = true;
            if l != "file,sha256" {
                v.push(MANIFEST, line, ViolationKind::Schema, format!("expected header 'file,sha256', found '{l}'"));
            }
            continue;
        }
        let Some((f, h)) = l.split_once(',') else {
            v.push(MANIFEST, line, ViolationKind::Parse, format!("expected 'file,sha256', found '{l}'"));
            continue;
        };
        let (f, h) = (f.trim(), h.trim());
        if h.len() != 64 || !h.bytes().all(|b| b.is_ascii_hexdigit()) {
            v.push(MANIFEST, line, ViolationKind::Parse, format!("{f}: '{h}' is not a SHA-256 hex digest"));
        }
        if let Some((_, first)) = m.files.insert(f.to_owned(), (h.to_ascii_lowercase(), line)) {
            v.push(MANIFEST, line, ViolationKind::Duplicate, format!("{f} already listed on line {first}"));
        }
    }
    if m.epochs.is_none() && !v.0.iter().any(|x| x.file == MANIFEST && x.kind == ViolationKind::Range) {
        v.push(MANIFEST, 0, ViolationKind::Missing, "no '# epochs: t1 -> t2' line");
    }
    m
}

fn config_violations(file: &str, errs: Vec<ConfigError>, v: &mut Violations) {
    for e in errs {
        v.push(file, e.line, if e.message.starts_with("missing") { ViolationKind::Missing } else { ViolationKind::Parse }, e.message);
    }
}

/// Builds transport parameters from `transport.conf` keys and the wind fields.
pub fn transport_from_config(cfg: &KeyValueConfig, wind_u: Vec<f64>, wind_v: Vec<f64>) -> Result<TransportParams, Vec<ConfigError>> {
    let mut errs = Vec::new();
    let mut num = |k: &str| cfg.number(k).map_err(|e| errs.push(e)).unwrap_or(0.0);
    let diffusivity = num("diffusivity");
    let deposition = SpeciesRates { hg0: num("vd_hg0"), hg2: num("vd_hg2"), hgp: num("vd_hgp") };
    let oxidation = num("oxidation");
    let boundary_inflow = SpeciatedMass::new(num("inflow_hg0"), num("inflow_hg2"), num("inflow_hgp"));
    let dt = num("dt");
    let horizon = num("horizon");
    let boundary = match cfg.raw("boundary") {
        Some("open") => Boundary::Open,
        Some("closed") => Boundary::Closed,
        Some(other) => {
            errs.push(ConfigError { line: cfg.line_of("boundary"), message: format!("boundary must be open or closed, found '{other}'") });
            Boundary::Open
        }
        None => {
            errs.push(ConfigError { line: 0, message: "missing key 'boundary'".into() });
            Boundary::Open
        }
    };
    if errs.is_empty() {
        Ok(TransportParams { wind_u, wind_v, diffusivity, deposition, oxidation, boundary, boundary_inflow, dt, horizon })
    } else {
        Err(errs)
    }
}

pub fn transport_to_config(p: &TransportParams) -> String {
    let mut out = String::from("# transport surrogate parameters\n");
    out += &format!("diffusivity = {}  # m2/s\n", p.diffusivity);
    out += &format!("vd_hg0 = {:e}  # 1/s\n", p.deposition.hg0);
    out += &format!("vd_hg2 = {:e}  # 1/s\n", p.deposition.hg2);
    out += &format!("vd_hgp = {:e}  # 1/s\n", p.deposition.hgp);
    out += &format!("oxidation = {:e}  # 1/s\n", p.oxidation);
    out += &format!(
        "boundary = {}  # open | closed\n",
        match p.boundary {
            Boundary::Open => "open",
            Boundary::Closed => "closed",
        }
    );
    out += &format!("inflow_hg0 = {}  # g per boundary cell\n", p.boundary_inflow.hg0);
    out += &format!("inflow_hg2 = {}  # g per boundary cell\n", p.boundary_inflow.hg2);
    out += &format!("inflow_hgp = {}  # g per boundary cell\n", p.boundary_inflow.hgp);
    out += &format!("dt = {}  # s\n", p.dt);
    out += &format!("horizon = {}  # s\n", p.horizon);
    out
}

/// Reads and validates a bundle directory.
pub fn ingest(dir: &Path) -> Result<DataBundle, Vec<Violation>> {
    let mut v = Violations::default();
    let bundle = ingest_inner(dir, &mut v);
    match bundle {
        Some(b) if v.0.is_empty() => Ok(b),
        _ => {
            if v.0.is_empty() {
                v.push(MANIFEST, 0, ViolationKind::Missing, "bundle incomplete");
            }
            Err(v.0)
        }
    }
}

fn ingest_inner(dir: &Path, v: &mut Violations) -> Option<DataBundle> {
    let manifest_bytes = read_file(dir, MANIFEST, v)?;
    let manifest_text = as_text(MANIFEST, &manifest_bytes, v)?;
    let manifest = parse_manifest(manifest_text, v);

    let mut texts: BTreeMap<&str, String> = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    for f in BUNDLE_FILES {
        let listed = manifest.files.get(f);
        if listed.is_none() {
            v.push(MANIFEST, 0, ViolationKind::Missing, format!("{f} is not listed"));
        }
        let Some(bytes) = read_file(dir, f, v) else { continue };
        let digest = sha256_hex(&bytes);
        if let Some((want, line)) = listed {
            if *want != digest {
                v.push(f, 0, ViolationKind::Checksum, format!("sha256 {digest} does not match manifest line {line} ({want})"));
            }
        }
        checksums.insert(f.to_owned(), digest);
        if let Some(t) = as_text(f, &bytes, v) {
            texts.insert(f, t.to_owned());
        }
    }
    for (f, (_, line)) in &manifest.files {
        if !BUNDLE_FILES.contains(&f.as_str()) {
            v.push(MANIFEST, *line, ViolationKind::Schema, format!("unexpected file {f}"));
        }
    }
    let text = |f: &str| texts.get(f).map(String::as_str);

    let provinces = text(PROVINCES).and_then(|t| read_provinces(t, v));
    let apcd = text(APCD).and_then(|t| read_apcd(t, v));
    let grid = text(GRID_MASK).and_then(|t| match parse_mask(t) {
        Ok(g) => Some(g),
        Err(e) => {
            v.push(GRID_MASK, e.line, ViolationKind::Parse, e.message);
            None
        }
    });
    let wind = |f: &str, v: &mut Violations| -> Option<Vec<f64>> {
        let (h, vals) = match parse_numeric_grid(text(f)?) {
            Ok(x) => x,
            Err(e) => {
                v.push(f, e.line, ViolationKind::Parse, e.message);
                return None;
            }
        };
        if let Some(g) = &grid {
            if h != g.header {
                v.push(f, 2, ViolationKind::GridMismatch, format!("header '{h}' differs from {GRID_MASK} '{}'", g.header));
                return None;
            }
        }
        Some(vals)
    };
    let wind_u = wind(WIND_U, v);
    let wind_v = wind(WIND_V, v);

    let province_ids: Option<Vec<ProvinceId>> = provinces.as_ref().map(|ps: &Vec<ProvinceParams>| ps.iter().map(|p| p.id.clone()).collect());
    let known: BTreeSet<ProvinceId> = province_ids.iter().flatten().cloned().collect();

    if let (Some(g), Some(_)) = (&grid, &province_ids) {
        for p in g.provinces() {
            if !known.contains(&p) {
                v.push(GRID_MASK, 0, ViolationKind::DanglingReference, format!("mask province {p} is not in {PROVINCES}"));
            }
        }
    }

    let plants = match (text(PLANTS), &province_ids, &apcd) {
        (Some(t), Some(_), Some(a)) => read_plants(t, &known, a, grid.as_ref(), v),
        _ => None,
    };

    let transport = match (text(TRANSPORT), wind_u, wind_v) {
        (Some(t), Some(u), Some(w)) => match KeyValueConfig::parse(t).and_then(|cfg| transport_from_config(&cfg, u, w)) {
            Ok(p) => {
                if let Some(g) = &grid {
                    if let Err(e) = p.validate(g) {
                        v.push(TRANSPORT, 0, ViolationKind::Range, e.to_string());
                    } else if p.dt > max_stable_dt(&p, g) {
                        v.push(
                            TRANSPORT,
                            KeyValueConfig::parse(t).map(|c| c.line_of("dt")).unwrap_or(0),
                            ViolationKind::Range,
                            format!("dt = {} s exceeds the stability limit {} s", p.dt, max_stable_dt(&p, g)),
                        );
                    }
                }
                Some(p)
            }
            Err(errs) => {
                config_violations(TRANSPORT, errs, v);
                None
            }
        },
        _ => None,
    };

    let exposure = province_ids.as_ref().and_then(|ids| read_exposure(ids, &text, v));

    let dose = text(DOSE_RESPONSE).and_then(|t| {
        let cfg = match KeyValueConfig::parse(t) {
            Ok(c) => c,
            Err(errs) => {
                config_violations(DOSE_RESPONSE, errs, v);
                return None;
            }
        };
        let dr = match DoseResponse::from_config(&cfg) {
            Ok(d) => d,
            Err(e) => {
                v.push(DOSE_RESPONSE, 0, ViolationKind::Range, e.to_string());
                return None;
            }
        };
        for p in dr.baseline_mortality.keys().chain(dr.baseline_hair.keys()) {
            if province_ids.is_some() && !known.contains(p) {
                v.push(DOSE_RESPONSE, 0, ViolationKind::DanglingReference, format!("unknown province {p}"));
            }
        }
        if let Some(ids) = &province_ids {
            if let Err(e) = dr.covers(ids) {
                v.push(DOSE_RESPONSE, 0, ViolationKind::Missing, e.to_string());
            }
        }
        Some(dr)
    });

    let grid_checksum = {
        let mut h = Sha256::new();
        for f in [GRID_MASK, WIND_U, WIND_V] {
            h.update(checksums.get(f).map_or("", String::as_str).as_bytes());
        }
        hex::encode(h.finalize())
    };

    Some(DataBundle {
        epochs: manifest.epochs?,
        provinces: provinces?,
        apcd: apcd?,
        plants: plants?,
        grid: grid?,
        transport: transport?,
        exposure: exposure?,
        dose: dose?,
        checksums,
        bundle_checksum: sha256_hex(&manifest_bytes),
        grid_checksum,
    })
}

fn read_provinces(text: &str, v: &mut Violations) -> Option<Vec<ProvinceParams>> {
    let t = parse_table(PROVINCES, text, "provinces", &PROVINCE_COLUMNS, v)?;
    let mut out: Vec<ProvinceParams> = Vec::new();
    let before = v.0.len();
    for r in &t.rows {
        let (Some(id), Some(coal_hg), Some(washed_fraction), Some(washing_removal), Some(release_ratio)) = (
            r.id(0, t.file, "province", v),
            r.num(1, t.file, "coal_hg", v),
            r.num(2, t.file, "washed_fraction", v),
            r.num(3, t.file, "washing_removal", v),
            r.num(4, t.file, "release_ratio", v),
        ) else {
            continue;
        };
        if id == FOREIGN {
            v.push(t.file, r.line, ViolationKind::Range, format!("'{FOREIGN}' is reserved"));
            continue;
        }
        let p = ProvinceParams { id: id.into(), coal_hg, washed_fraction, washing_removal, release_ratio };
        if let Err(e) = p.validate() {
            v.push(t.file, r.line, ViolationKind::Range, e.to_string());
        }
        if out.iter().any(|q| q.id == p.id) {
            v.push(t.file, r.line, ViolationKind::Duplicate, format!("province {} listed twice", p.id));
            continue;
        }
        out.push(p);
    }
    if out.is_empty() && v.0.len() == before {
        v.push(PROVINCES, 0, ViolationKind::Missing, "no provinces");
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    (v.0.len() == before).then_some(out)
}

fn read_apcd(text: &str, v: &mut Violations) -> Option<BTreeMap<ComboKey, ApcdConfig>> {
    let t = parse_table(APCD, text, "apcd", &APCD_COLUMNS, v)?;
    let mut out = BTreeMap::new();
    let before = v.0.len();
    for r in &t.rows {
        let (Some(combo), Some(eta), Some(h0), Some(h2), Some(hp)) = (
            r.id(0, t.file, "combo", v),
            r.num(1, t.file, "removal_efficiency", v),
            r.num(2, t.file, "hg0_share", v),
            r.num(3, t.file, "hg2_share", v),
            r.num(4, t.file, "hgp_share", v),
        ) else {
            continue;
        };
        let cfg = ApcdConfig::new(combo.as_str(), eta, Speciation::new(h0, h2, hp));
        if let Err(e) = cfg.validate() {
            v.push(t.file, r.line, ViolationKind::Range, e.to_string());
        }
        if out.insert(cfg.combo.clone(), cfg).is_some() {
            v.push(t.file, r.line, ViolationKind::Duplicate, format!("combo {combo} listed twice"));
        }
    }
    (v.0.len() == before).then_some(out)
}

fn read_plants(
    text: &str,
    provinces: &BTreeSet<ProvinceId>,
    apcd: &BTreeMap<ComboKey, ApcdConfig>,
    grid: Option<&GridSpec>,
    v: &mut Violations,
) -> Option<Vec<Plant>> {
    let t = parse_table(PLANTS, text, "plants", &PLANT_COLUMNS, v)?;
    let f = t.file;
    let before = v.0.len();
    let mut out: Vec<Plant> = Vec::new();
    for r in &t.rows {
        let combo = |i: usize, v: &mut Violations| -> Option<ApcdConfig> {
            let key = r.id(i, f, PLANT_COLUMNS[i].0, v)?;
            let c = apcd.get(&ComboKey::from(key.as_str())).cloned();
            if c.is_none() {
                v.push(f, r.line, ViolationKind::DanglingReference, format!("APCD combo {key} is not in {APCD}"));
            }
            c
        };
        let id = r.id(0, f, "plant", v);
        let province = r.id(1, f, "province", v);
        let company = r.id(2, f, "company", v);
        let nums: Vec<Option<f64>> = (3..=10).map(|i| r.num(i, f, PLANT_COLUMNS[i].0, v)).collect();
        let apcd_t1 = combo(11, v);
        let apcd_t2 = combo(12, v);
        let release_ratio = match r.text(13) {
            "" => Some(None),
            _ => r.num(13, f, "release_ratio", v).map(Some),
        };
        let status = match r.text(14) {
            "active" => Some(PlantStatus::Active),
            "decommissioned" => Some(PlantStatus::Decommissioned),
            other => {
                v.push(f, r.line, ViolationKind::Parse, format!("status must be active or decommissioned, found '{other}'"));
                None
            }
        };
        if let Some(p) = &province {
            if !provinces.contains(&ProvinceId::from(p.as_str())) {
                v.push(f, r.line, ViolationKind::DanglingReference, format!("plant {} references unknown province {p}", id.as_deref().unwrap_or("?")));
                continue;
            }
        }
        let (Some(id), Some(province), Some(company), Some(apcd_t1), Some(apcd_t2), Some(release_ratio), Some(status)) =
            (id, province, company, apcd_t1, apcd_t2, release_ratio, status)
        else {
            continue;
        };
        let [Some(capacity_mw), Some(lat), Some(lon), Some(coal_t1), Some(coal_t2), Some(power_t2), Some(ccr_t1), Some(ccr_t2)] = nums[..] else {
            continue;
        };
        let plant = Plant {
            id: id.into(),
            province: province.into(),
            company: company.into(),
            capacity_mw,
            lat,
            lon,
            coal_t1,
            coal_t2,
            power_t2,
            ccr_t1,
            ccr_t2,
            apcd_t1,
            apcd_t2,
            release_ratio,
            status,
        };
        if let Err(e) = plant.validate() {
            v.push(f, r.line, ViolationKind::Range, e.to_string());
        }
        if let Some(g) = grid {
            match g.locate(plant.lat, plant.lon) {
                None => v.push(f, r.line, ViolationKind::OutsideGrid, format!("plant {} at ({}, {}) lies outside the grid", plant.id, plant.lat, plant.lon)),
                Some(cell) if g.region_mask[cell].as_ref() != Some(&plant.province) => {
                    log::warn!("plant {} sits in a cell not masked as {}", plant.id, plant.province);
                }
                Some(_) => {}
            }
        }
        if out.iter().any(|q| q.id == plant.id) {
            v.push(f, r.line, ViolationKind::Duplicate, format!("plant {} listed twice", plant.id));
            continue;
        }
        out.push(plant);
    }
    (v.0.len() == before).then_some(out)
}

fn read_exposure<'t>(provinces: &[ProvinceId], text: &impl Fn(&str) -> Option<&'t str>, v: &mut Violations) -> Option<ExposureChain> {
    let before = v.0.len();
    let index: BTreeMap<&ProvinceId, usize> = provinces.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let province_of = |file: &str, line: usize, s: &str, v: &mut Violations| -> Option<usize> {
        let i = index.get(&ProvinceId::from(s)).copied();
        if i.is_none() {
            v.push(file, line, ViolationKind::DanglingReference, format!("unknown province {s}"));
        }
        i
    };

    // categories are defined by the food baseline, in order of appearance
    let food = parse_table(FOOD_BASELINE, text(FOOD_BASELINE)?, "food-baseline", &FOOD_BASELINE_COLUMNS, v)?;
    let mut categories: Vec<Category> = Vec::new();
    for r in &food.rows {
        let c = Category::from(r.text(1));
        if !r.text(1).is_empty() && !categories.contains(&c) {
            categories.push(c);
        }
    }
    if categories.is_empty() {
        v.push(FOOD_BASELINE, 0, ViolationKind::Missing, "no food categories");
        return None;
    }
    let cat_index: BTreeMap<&Category, usize> = categories.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let category_of = |file: &str, line: usize, s: &str, v: &mut Violations| -> Option<usize> {
        let i = cat_index.get(&Category::from(s)).copied();
        if i.is_none() {
            v.push(file, line, ViolationKind::DanglingReference, format!("unknown food category {s}"));
        }
        i
    };

    let fill_table = |t: &Table, col: usize, name: &str, v: &mut Violations| -> CategoryTable {
        let mut table = CategoryTable::zeros(provinces, &categories);
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in &t.rows {
            let p = province_of(t.file, r.line, r.text(0), v);
            let c = category_of(t.file, r.line, r.text(1), v);
            let x = r.nonneg(col, t.file, name, v);
            if let (Some(p), Some(c), Some(x)) = (p, c, x) {
                if let Some(first) = seen.insert((p, c), r.line) {
                    v.push(t.file, r.line, ViolationKind::Duplicate, format!("{} / {} already given on line {first}", provinces[p], categories[c]));
                }
                table.set(p, c, x);
            }
        }
        for (p, pid) in provinces.iter().enumerate() {
            for (c, cid) in categories.iter().enumerate() {
                if !seen.contains_key(&(p, c)) {
                    v.push(t.file, 0, ViolationKind::Missing, format!("no {name} for {pid} / {cid}"));
                }
            }
        }
        table
    };
    let concentration = fill_table(&food, 2, "concentration", v);

    let dep = parse_table(DEPOSITION_BASELINE, text(DEPOSITION_BASELINE)?, "deposition-baseline", &DEPOSITION_BASELINE_COLUMNS, v);
    let mut deposition = vec![f64::NAN; provinces.len()];
    if let Some(dep) = &dep {
        for r in &dep.rows {
            if let (Some(p), Some(x)) = (province_of(dep.file, r.line, r.text(0), v), r.nonneg(1, dep.file, "deposition", v)) {
                if !deposition[p].is_nan() {
                    v.push(dep.file, r.line, ViolationKind::Duplicate, format!("{} listed twice", provinces[p]));
                }
                deposition[p] = x;
            }
        }
        for (p, x) in provinces.iter().zip(&deposition) {
            if x.is_nan() {
                v.push(dep.file, 0, ViolationKind::Missing, format!("no baseline deposition for {p}"));
            }
        }
    }

    let intake_table = parse_table(INTAKE, text(INTAKE)?, "intake", &INTAKE_COLUMNS, v);
    let intake = intake_table.as_ref().map(|t| fill_table(t, 2, "intake", v));

    let pop = parse_table(POPULATION, text(POPULATION)?, "population", &POPULATION_COLUMNS, v);
    let n = provinces.len();
    let (mut bw, mut population, mut births) = (vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; n]);
    if let Some(pop) = &pop {
        for r in &pop.rows {
            let p = province_of(pop.file, r.line, r.text(0), v);
            let w = r.num(1, pop.file, "body_weight", v);
            let m = r.nonneg(2, pop.file, "population", v);
            let b = r.nonneg(3, pop.file, "births", v);
            if let Some(w) = w {
                if w <= 0.0 {
                    v.push(pop.file, r.line, ViolationKind::Range, format!("body_weight = {w} must be > 0"));
                }
            }
            if let (Some(p), Some(w), Some(m), Some(b)) = (p, w, m, b) {
                if !bw[p].is_nan() {
                    v.push(pop.file, r.line, ViolationKind::Duplicate, format!("{} listed twice", provinces[p]));
                }
                (bw[p], population[p], births[p]) = (w, m, b);
            }
        }
        for (p, x) in provinces.iter().zip(&bw) {
            if x.is_nan() {
                v.push(pop.file, 0, ViolationKind::Missing, format!("no population row for {p}"));
            }
        }
    }

    let trade = parse_table(TRADE, text(TRADE)?, "trade", &TRADE_COLUMNS, v).map(|t| {
        let mut shares = vec![DMatrix::<f64>::zeros(n, n + 1); categories.len()];
        let mut seen: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for r in &t.rows {
            let c = category_of(t.file, r.line, r.text(0), v);
            let producer = if r.text(1) == FOREIGN { Some(n) } else { province_of(t.file, r.line, r.text(1), v) };
            let consumer = province_of(t.file, r.line, r.text(2), v);
            let x = r.nonneg(3, t.file, "share", v);
            if let (Some(c), Some(j), Some(i), Some(x)) = (c, producer, consumer, x) {
                if let Some(first) = seen.insert((c, j, i), r.line) {
                    v.push(t.file, r.line, ViolationKind::Duplicate, format!("share already given on line {first}"));
                }
                shares[c][(i, j)] = x;
            }
        }
        for (c, m) in shares.iter().enumerate() {
            for i in 0..n {
                let sum: f64 = m.row(i).iter().sum();
                if (sum - 1.0).abs() > SHARE_SUM_TOL {
                    v.push(
                        t.file,
                        0,
                        ViolationKind::ShareSum,
                        format!("shares of category {} for consumer {} sum to {sum}, expected 1", categories[c], provinces[i]),
                    );
                }
            }
        }
        TradeShares { provinces: provinces.to_vec(), categories: categories.clone(), shares }
    });

    if v.0.len() != before {
        return None;
    }
    let baseline = FoodBaseline { concentration, deposition };
    let profile = IntakeProfile { intake: intake?, body_weight: bw, population, births };
    match ExposureChain::new(baseline, trade?, profile) {
        Ok(c) => Some(c),
        Err(e) => {
            v.push(FOOD_BASELINE, 0, ViolationKind::Range, e.to_string());
            None
        }
    }
}

/// Renders the manifest for a set of file contents.
pub fn render_manifest(epochs: &(String, String), files: &BTreeMap<String, String>) -> String {
    let mut out = format!("{}\n# epochs: {} -> {}\nfile,sha256\n", schema_line("manifest"), epochs.0, epochs.1);
    for (f, body) in files {
        out += &format!("{f},{}\n", sha256_hex(body.as_bytes()));
    }
    out
}

/// Writes files and their manifest into `dir`.
pub fn write_bundle(dir: &Path, epochs: &(String, String), files: &BTreeMap<String, String>) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (f, body) in files {
        std::fs::write(dir.join(f), body)?;
    }
    std::fs::write(dir.join(MANIFEST), render_manifest(epochs, files))
}
