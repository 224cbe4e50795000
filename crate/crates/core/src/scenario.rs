//! Retrofit scenarios, the end-to-end run, and run records.
//!
//! A scenario file is a list of `key: value` lines:
//!
//! ```text
//! scenario: demo-all
//! epochs: 2010 -> 2014
//! measures: SUS, APCD, PGE
//! select: province=P01,P02 class=>=1200
//! select: id=PL07
//! notes: free text
//! ```
//!
//! `select:` may repeat. A plant is selected when any clause matches it; a
//! clause matches when every key in it matches. `select: all` selects every
//! plant and a scenario without `select:` lines selects none.

use crate::health::{
    attribute, group_by_source, rank_report, AttributionTensor, DoseResponse, HealthError, HealthOutcome, ImpactModel,
    RankReport,
};
use crate::ids::{Category, Company, PlantId, ProvinceId};
use crate::ingest::{parse_epochs, sha256_hex, DataBundle};
use crate::inventory::{build_inventory, group_totals, CapacityClass, GroupKey, InventoryWarning, Measure, Plant};
use crate::exposure::ExposureState;
use crate::grid::GridSpec;
use crate::mass::{SpeciatedMass, Species};
use crate::transport::{
    aggregate_to_provinces, build_srm, rasterize_emissions, write_srm, Boundary, DepositionField, ProvinceDeposition,
    SourceReceptorMatrix, SpeciesRates,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const RUN_SCHEMA: &str = "hgtrack-run/1";
/// Environment variable naming the directory that receives run outputs.
pub const OUT_ENV: &str = "HGTRACK_OUT";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

/// One `select:` clause. Empty lists match anything; within a list any value may match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub province: Vec<ProvinceId>,
    pub company: Vec<Company>,
    pub class: Vec<CapacityClass>,
    pub id: Vec<PlantId>,
}

impl Selector {
    pub fn matches(&self, p: &Plant) -> bool {
        (self.province.is_empty() || self.province.contains(&p.province))
            && (self.company.is_empty() || self.company.contains(&p.company))
            && (self.class.is_empty() || self.class.contains(&p.capacity_class()))
            && (self.id.is_empty() || self.id.contains(&p.id))
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut s = Selector::default();
        for term in text.split_whitespace() {
            let (k, vals) = term.split_once('=').ok_or_else(|| format!("expected key=value, found '{term}'"))?;
            let vals: Vec<&str> = vals.split(',').filter(|v| !v.is_empty()).collect();
            if vals.is_empty() {
                return Err(format!("no values for '{k}'"));
            }
            match k {
                "province" => s.province.extend(vals.iter().map(|v| ProvinceId::from(*v))),
                "company" => s.company.extend(vals.iter().map(|v| Company::from(*v))),
                "id" => s.id.extend(vals.iter().map(|v| PlantId::from(*v))),
                "class" => {
                    for v in vals {
                        s.class.push(CapacityClass::parse(v).ok_or_else(|| format!("unknown capacity class '{v}'"))?);
                    }
                }
                other => return Err(format!("unknown selector key '{other}'")),
            }
        }
        if s == Selector::default() {
            return Err("empty selector".into());
        }
        Ok(s)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join<T: fmt::Display>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let mut terms = Vec::new();
        if !self.province.is_empty() {
            terms.push(format!("province={}", join(&self.province)));
        }
        if !self.company.is_empty() {
            terms.push(format!("company={}", join(&self.company)));
        }
        if !self.class.is_empty() {
            terms.push(format!("class={}", self.class.iter().map(|c| c.label()).collect::<Vec<_>>().join(",")));
        }
        if !self.id.is_empty() {
            terms.push(format!("id={}", join(&self.id)));
        }
        f.write_str(&terms.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clause {
    All,
    Where(Selector),
}

/// Union of clauses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantFilter {
    pub clauses: Vec<Clause>,
}

impl PlantFilter {
    pub fn all() -> Self {
        Self { clauses: vec![Clause::All] }
    }

    /// Exactly the listed plants; an empty list selects none.
    pub fn ids<I: IntoIterator<Item = PlantId>>(ids: I) -> Self {
        let id: Vec<PlantId> = ids.into_iter().collect();
        if id.is_empty() {
            return Self::default();
        }
        Self { clauses: vec![Clause::Where(Selector { id, ..Selector::default() })] }
    }

    pub fn matches(&self, p: &Plant) -> bool {
        self.clauses.iter().any(|c| match c {
            Clause::All => true,
            Clause::Where(s) => s.matches(p),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub measures: BTreeSet<Measure>,
    pub filter: PlantFilter,
    pub epochs: (String, String),
    pub notes: String,
}

impl Scenario {
    pub fn new(id: &str, measures: &[Measure], filter: PlantFilter, epochs: (String, String)) -> Self {
        Self { id: id.to_owned(), measures: measures.iter().copied().collect(), filter, epochs, notes: String::new() }
    }

    /// Parses a scenario file, reporting every bad line.
    pub fn parse(text: &str) -> Result<Self, Vec<ScenarioError>> {
        let mut errors = Vec::new();
        let mut id = None;
        let mut measures = None;
        let mut epochs = None;
        let mut notes = Vec::new();
        let mut clauses = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let mut err = |message: String| errors.push(ScenarioError { line, message });
            let Some((key, value)) = content.split_once(':') else {
                err(format!("expected 'key: value', found '{content}'"));
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "scenario" if id.is_some() => err("duplicate 'scenario'".into()),
                "scenario" if value.is_empty() => err("empty scenario id".into()),
                "scenario" => id = Some(value.to_owned()),
                "measures" if measures.is_some() => err("duplicate 'measures'".into()),
                "measures" => {
                    let mut set = BTreeSet::new();
                    for m in value.split(',').map(str::trim).filter(|m| !m.is_empty()) {
                        match Measure::parse(m) {
                            Some(m) => {
                                set.insert(m);
                            }
                            None => err(format!("unknown measure '{m}' (expected SUS, APCD or PGE)")),
                        }
                    }
                    measures = Some(set);
                }
                "epochs" if epochs.is_some() => err("duplicate 'epochs'".into()),
                "epochs" => match parse_epochs(value) {
                    Ok(e) => epochs = Some(e),
                    Err(m) => err(m),
                },
                "select" if value == "all" => clauses.push(Clause::All),
                "select" => match Selector::parse(value) {
                    Ok(s) => clauses.push(Clause::Where(s)),
                    Err(m) => err(m),
                },
                "notes" => notes.push(value.to_owned()),
                other => err(format!("unknown key '{other}'")),
            }
        }
        let missing = |what: &str| ScenarioError { line: 0, message: format!("missing '{what}'") };
        if id.is_none() {
            errors.push(missing("scenario"));
        }
        if measures.is_none() {
            errors.push(missing("measures"));
        }
        if epochs.is_none() && !errors.iter().any(|e| e.message.contains("epoch")) {
            errors.push(missing("epochs"));
        }
        match (id, measures, epochs) {
            (Some(id), Some(measures), Some(epochs)) if errors.is_empty() => {
                Ok(Self { id, measures, filter: PlantFilter { clauses }, epochs, notes: notes.join("\n") })
            }
            _ => Err(errors),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario: {}\nepochs: {} -> {}\n", self.id, self.epochs.0, self.epochs.1);
        out += &format!("measures: {}\n", self.measures.iter().map(|m| m.label()).collect::<Vec<_>>().join(", "));
        for c in &self.filter.clauses {
            match c {
                Clause::All => out += "select: all\n",
                Clause::Where(s) => out += &format!("select: {s}\n"),
            }
        }
        for n in self.notes.lines() {
            out += &format!("notes: {n}\n");
        }
        out
    }

    pub fn select<'a>(&self, plants: &'a [Plant]) -> Vec<&'a Plant> {
        plants.iter().filter(|p| self.filter.matches(p)).collect()
    }
}

/// A failed run: the stage that failed and the entity it failed on.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("stage {stage} failed on {entity}: {message}")]
pub struct RunError {
    pub stage: &'static str,
    pub entity: String,
    pub message: String,
}

impl RunError {
    fn new(stage: &'static str, entity: impl Into<String>, message: impl fmt::Display) -> Self {
        Self { stage, entity: entity.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub measure: Measure,
    pub plant: PlantId,
    pub province: ProvinceId,
    pub company: Company,
    pub class: CapacityClass,
    /// Emission reduction, g/yr.
    pub delta: SpeciatedMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub bundle: String,
    pub grid: String,
    pub srm: String,
    pub files: BTreeMap<String, String>,
}

/// Transport scalars; the wind field is covered by the grid checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSnapshot {
    pub diffusivity: f64,
    pub deposition: SpeciesRates,
    pub oxidation: f64,
    pub boundary: Boundary,
    pub boundary_inflow: SpeciatedMass,
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub transport: TransportSnapshot,
    pub dose: DoseResponse,
}

/// Everything a run produced, in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub scenario_id: String,
    pub scenario: Scenario,
    pub checksums: Checksums,
    pub parameters: ParameterSnapshot,
    pub grid: GridSpec,
    pub provinces: Vec<ProvinceId>,
    pub categories: Vec<Category>,
    pub selected_plants: Vec<PlantId>,
    /// Per (measure, plant) reductions, g/yr.
    pub inventory: Vec<InventoryRow>,
    pub warnings: Vec<InventoryWarning>,
    /// Reductions by measure and source province, g/yr.
    pub emission_by_measure: BTreeMap<Measure, BTreeMap<ProvinceId, SpeciatedMass>>,
    pub totals_by_province: BTreeMap<String, SpeciatedMass>,
    pub totals_by_company: BTreeMap<String, SpeciatedMass>,
    pub totals_by_class: BTreeMap<String, SpeciatedMass>,
    /// Gridded emission reductions, g/yr, row-major.
    pub emission_grid: Vec<SpeciatedMass>,
    /// Avoided deposition, g/yr.
    pub deposition: DepositionField,
    pub province_deposition: ProvinceDeposition,
    pub exposure: ExposureState,
    pub outcome: HealthOutcome,
    pub attribution: AttributionTensor,
    pub rankings: RankReport,
}

/// Stage name → entity key → value.
pub type Stages = BTreeMap<&'static str, BTreeMap<String, f64>>;

fn put_species(map: &mut BTreeMap<String, f64>, prefix: &str, m: &SpeciatedMass) {
    for s in Species::ALL {
        map.insert(format!("{prefix}/{}", s.label()), m.get(s));
    }
}

impl RunRecord {
    /// Every numeric output flattened per stage, for diffs and golden checks.
    pub fn stages(&self) -> Stages {
        let mut st: Stages = BTreeMap::new();
        let inv = st.entry("inventory").or_default();
        for r in &self.inventory {
            put_species(inv, &format!("{}/{}", r.measure, r.plant), &r.delta);
        }
        let em = st.entry("emission_by_measure").or_default();
        for (m, by) in &self.emission_by_measure {
            for (p, x) in by {
                put_species(em, &format!("{m}/{p}"), x);
            }
        }
        let gt = st.entry("group_totals").or_default();
        for (kind, map) in [("province", &self.totals_by_province), ("company", &self.totals_by_company), ("class", &self.totals_by_class)] {
            for (k, x) in map {
                put_species(gt, &format!("{kind}/{k}"), x);
            }
        }
        let eg = st.entry("emission_grid").or_default();
        for (c, x) in self.emission_grid.iter().enumerate() {
            put_species(eg, &format!("{c}"), x);
        }
        let dg = st.entry("deposition_grid").or_default();
        for (c, t) in self.deposition.deposited.iter().enumerate() {
            for (name, v) in ["hg0", "hg2", "hgp", "hg0_to_hg2"].iter().zip(t.as_array()) {
                dg.insert(format!("{c}/{name}"), v);
            }
        }
        for (what, t) in [("exported", &self.deposition.exported), ("airborne", &self.deposition.airborne)] {
            for (name, v) in ["hg0", "hg2", "hgp", "hg0_to_hg2"].iter().zip(t.as_array()) {
                dg.insert(format!("{what}/{name}"), v);
            }
        }
        dg.insert("oxidized".into(), self.deposition.oxidized);
        let pd = st.entry("province_deposition").or_default();
        for (p, x) in &self.province_deposition.by_province {
            put_species(pd, p.as_str(), x);
        }
        put_species(pd, "external", &self.province_deposition.external);
        for (stage, table) in [("producer_delta", &self.exposure.producer_delta), ("consumer_delta", &self.exposure.consumer_delta)] {
            let s = st.entry(stage).or_default();
            for (p, c, v) in table.iter() {
                s.insert(format!("{p}/{c}"), v);
            }
        }
        let edi = st.entry("delta_edi").or_default();
        for (p, v) in &self.exposure.delta_edi {
            edi.insert(p.to_string(), *v);
        }
        let oc = st.entry("outcome").or_default();
        for (p, o) in &self.outcome.by_province {
            oc.insert(format!("{p}/iq_per_foetus"), o.iq_per_foetus);
            oc.insert(format!("{p}/iq_total"), o.iq_total);
            oc.insert(format!("{p}/deaths"), o.deaths);
        }
        oc.insert("national/iq_per_foetus".into(), self.outcome.national_iq_per_foetus);
        let at = st.entry("attribution").or_default();
        for (k, e) in &self.attribution.entries {
            let s = &k.source;
            let key = format!("{}|{}|{}|{}|{}", k.receptor, s.province, s.measure, s.company, s.class.label());
            at.insert(format!("{key}/deaths"), e.deaths);
            at.insert(format!("{key}/iq_total"), e.iq_total);
        }
        let rk = st.entry("rankings").or_default();
        for (name, list) in self.rankings.lists() {
            for (i, x) in list.iter().enumerate() {
                rk.insert(format!("{name}/{}/{}/deaths", i + 1, x.province), x.deaths);
                rk.insert(format!("{name}/{}/{}/iq_total", i + 1, x.province), x.iq_total);
            }
        }
        for m in &self.rankings.measure_shares {
            for (what, v) in [("deaths", m.deaths), ("iq_total", m.iq_total), ("deaths_share", m.deaths_share), ("iq_share", m.iq_share)] {
                rk.insert(format!("share/{}/{what}", m.measure), v);
            }
        }
        st
    }

    /// SHA-256 of the serialized record.
    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_json())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("run records serialize");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn total_reduction(&self) -> SpeciatedMass {
        self.inventory.iter().map(|r| r.delta).sum()
    }
}

/// Adds `b` into `a` key by key.
pub fn add_stages(a: &mut Stages, b: &Stages) {
    for (stage, map) in b {
        let target = a.entry(stage).or_default();
        for (k, v) in map {
            *target.entry(k.clone()).or_insert(0.0) += v;
        }
    }
}

/// Per stage, the largest entry difference relative to the stage's largest magnitude.
pub fn stage_errors(a: &Stages, b: &Stages) -> BTreeMap<&'static str, f64> {
    let names: BTreeSet<&'static str> = a.keys().chain(b.keys()).copied().collect();
    let empty = BTreeMap::new();
    names
        .into_iter()
        .map(|name| {
            let (x, y) = (a.get(name).unwrap_or(&empty), b.get(name).unwrap_or(&empty));
            (name, relative_error(x, y))
        })
        .collect()
}

fn relative_error(x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
    let get = |m: &BTreeMap<String, f64>, k: &String| m.get(k).copied().unwrap_or(0.0);
    let scale = keys.iter().map(|k| get(x, k).abs().max(get(y, k).abs())).fold(0.0, f64::max);
    let err = keys.iter().map(|k| (get(x, k) - get(y, k)).abs()).fold(0.0, f64::max);
    if err == 0.0 {
        0.0
    } else if scale > 0.0 {
        err / scale
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub key: String,
    pub a: f64,
    pub b: f64,
}

/// Differences between two runs on the same bundle. Scenario ids are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    /// Non-numeric scenario or selection differences.
    pub scenario: Vec<String>,
    pub stages: BTreeMap<String, Vec<DiffEntry>>,
}

impl RunDiff {
    pub fn is_empty(&self) -> bool {
        self.scenario.is_empty() && self.stages.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("runs use different data bundles ({a} vs {b})")]
    Bundle { a: String, b: String },
    #[error("runs use different grids ({a} vs {b})")]
    Grid { a: String, b: String },
}

/// Entries differing by more than `rel_tol` times the stage's largest magnitude.
pub fn compare(a: &RunRecord, b: &RunRecord, rel_tol: f64) -> Result<RunDiff, CompareError> {
    if a.checksums.bundle != b.checksums.bundle {
        return Err(CompareError::Bundle { a: a.checksums.bundle.clone(), b: b.checksums.bundle.clone() });
    }
    if a.checksums.grid != b.checksums.grid {
        return Err(CompareError::Grid { a: a.checksums.grid.clone(), b: b.checksums.grid.clone() });
    }
    let mut diff = RunDiff::default();
    if a.scenario.measures != b.scenario.measures {
        diff.scenario.push(format!("measures {:?} vs {:?}", a.scenario.measures, b.scenario.measures));
    }
    if a.scenario.epochs != b.scenario.epochs {
        diff.scenario.push(format!("epochs {:?} vs {:?}", a.scenario.epochs, b.scenario.epochs));
    }
    let sa: BTreeSet<&PlantId> = a.selected_plants.iter().collect();
    let sb: BTreeSet<&PlantId> = b.selected_plants.iter().collect();
    for p in sa.symmetric_difference(&sb) {
        diff.scenario.push(format!("plant {p} selected in only one run"));
    }
    if a.parameters != b.parameters {
        diff.scenario.push("parameter snapshots differ".into());
    }
    let (xa, xb) = (a.stages(), b.stages());
    let names: BTreeSet<&'static str> = xa.keys().chain(xb.keys()).copied().collect();
    let empty = BTreeMap::new();
    for name in names {
        let (x, y) = (xa.get(name).unwrap_or(&empty), xb.get(name).unwrap_or(&empty));
        let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
        let get = |m: &BTreeMap<String, f64>, k: &String| m.get(k).copied().unwrap_or(0.0);
        let scale = keys.iter().map(|k| get(x, k).abs().max(get(y, k).abs())).fold(0.0, f64::max);
        let entries: Vec<DiffEntry> = keys
            .into_iter()
            .filter(|k| {
                let (u, v) = (get(x, k), get(y, k));
                u != v && (u - v).abs() > rel_tol * scale
            })
            .map(|k| DiffEntry { key: k.clone(), a: get(x, k), b: get(y, k) })
            .collect();
        if !entries.is_empty() {
            diff.stages.insert(name.to_owned(), entries);
        }
    }
    Ok(diff)
}

/// A bundle with its source-receptor matrix, ready to run scenarios.
///
/// The matrix covers the cells of every plant in the bundle, so it is built
/// once and shared by all scenarios.
#[derive(Debug, Clone)]
pub struct Engine {
    pub bundle: DataBundle,
    pub srm: SourceReceptorMatrix,
    srm_checksum: String,
}

impl Engine {
    pub fn new(bundle: DataBundle) -> Result<Self, RunError> {
        let mut sources = BTreeSet::new();
        for p in &bundle.plants {
            let cell = bundle
                .grid
                .locate(p.lat, p.lon)
                .ok_or_else(|| RunError::new("srm", p.id.to_string(), "plant lies outside the grid"))?;
            sources.insert(cell);
        }
        let srm = build_srm(&bundle.transport, &bundle.grid, &sources).map_err(|e| RunError::new("srm", "grid", e))?;
        Ok(Self::with_srm(bundle, srm))
    }

    pub fn with_srm(bundle: DataBundle, srm: SourceReceptorMatrix) -> Self {
        let srm_checksum = sha256_hex(write_srm(&srm).as_bytes());
        Self { bundle, srm, srm_checksum }
    }

    pub fn srm_checksum(&self) -> &str {
        &self.srm_checksum
    }

    /// Independent scenarios run in parallel; results keep input order.
    pub fn run_many(&self, scenarios: &[Scenario]) -> Vec<Result<RunRecord, RunError>> {
        scenarios.par_iter().map(|s| self.run(s)).collect()
    }

    pub fn run(&self, sc: &Scenario) -> Result<RunRecord, RunError> {
        let b = &self.bundle;
        if sc.epochs != b.epochs {
            return Err(RunError::new(
                "scenario",
                sc.id.clone(),
                format!("epochs {} -> {} do not match the bundle's {} -> {}", sc.epochs.0, sc.epochs.1, b.epochs.0, b.epochs.1),
            ));
        }
        let selected: Vec<Plant> = sc.select(&b.plants).into_iter().cloned().collect();
        let provinces: BTreeMap<ProvinceId, _> = b.provinces.iter().map(|p| (p.id.clone(), p.clone())).collect();

        let mut deltas = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut emission_by_measure = BTreeMap::new();
        for &m in &sc.measures {
            let inv = build_inventory(&selected, &provinces, m).map_err(|e| RunError::new("inventory", m.label(), e))?;
            let mut by_province: BTreeMap<ProvinceId, SpeciatedMass> =
                b.provinces.iter().map(|p| (p.id.clone(), SpeciatedMass::ZERO)).collect();
            for (id, d) in inv.deltas {
                let plant = selected.iter().find(|p| p.id == id).expect("inventory covers selected plants");
                *by_province.entry(plant.province.clone()).or_default() += d;
                deltas.insert((m, id), d);
            }
            warnings.extend(inv.warnings);
            emission_by_measure.insert(m, by_province);
        }
        let mut per_plant: BTreeMap<PlantId, SpeciatedMass> = BTreeMap::new();
        for ((_, id), d) in &deltas {
            *per_plant.entry(id.clone()).or_default() += *d;
        }
        let inventory: Vec<InventoryRow> = deltas
            .iter()
            .map(|((m, id), d)| {
                let p = selected.iter().find(|p| &p.id == id).expect("inventory covers selected plants");
                InventoryRow {
                    measure: *m,
                    plant: id.clone(),
                    province: p.province.clone(),
                    company: p.company.clone(),
                    class: p.capacity_class(),
                    delta: *d,
                }
            })
            .collect();

        let emission = rasterize_emissions(&per_plant, &selected, &b.grid).map_err(|e| RunError::new("rasterize", "emission field", e))?;
        let deposition = self.srm.apply(&emission).map_err(|e| RunError::new("transport", "emission field", e))?;
        let province_deposition = aggregate_to_provinces(&deposition, &b.grid);
        let dep_delta: BTreeMap<ProvinceId, f64> =
            b.exposure.provinces().iter().map(|p| (p.clone(), province_deposition.thg(p))).collect();
        let exposure = b.exposure.propagate(&dep_delta).map_err(|e| RunError::new("exposure", "food chain", e))?;
        let outcome = HealthOutcome::evaluate(&exposure.delta_edi, &b.dose, &b.exposure.intake)
            .map_err(|e| RunError::new("health", "endpoints", e))?;

        let attr_err = |e: HealthError| RunError::new("attribution", "source groups", e);
        let grouped = group_by_source(&deltas, &selected).map_err(attr_err)?;
        let model = ImpactModel { srm: &self.srm, grid: &b.grid, exposure: &b.exposure, dose: &b.dose };
        let attribution = attribute(&model, &grouped, &selected).map_err(attr_err)?;
        let rankings = rank_report(&attribution);

        let t = &b.transport;
        Ok(RunRecord {
            schema: RUN_SCHEMA.to_owned(),
            scenario_id: sc.id.clone(),
            scenario: sc.clone(),
            checksums: Checksums {
                bundle: b.bundle_checksum.clone(),
                grid: b.grid_checksum.clone(),
                srm: self.srm_checksum.clone(),
                files: b.checksums.clone(),
            },
            parameters: ParameterSnapshot {
                transport: TransportSnapshot {
                    diffusivity: t.diffusivity,
                    deposition: t.deposition,
                    oxidation: t.oxidation,
                    boundary: t.boundary,
                    boundary_inflow: t.boundary_inflow,
                    dt: t.dt,
                    horizon: t.horizon,
                },
                dose: b.dose.clone(),
            },
            grid: b.grid.clone(),
            provinces: b.exposure.provinces().to_vec(),
            categories: b.exposure.categories().to_vec(),
            selected_plants: selected.iter().map(|p| p.id.clone()).collect(),
            inventory,
            warnings,
            emission_by_measure,
            totals_by_province: group_totals(&per_plant, &selected, GroupKey::Province),
            totals_by_company: group_totals(&per_plant, &selected, GroupKey::Company),
            totals_by_class: group_totals(&per_plant, &selected, GroupKey::CapacityClass),
            emission_grid: emission.cells,
            deposition,
            province_deposition,
            exposure,
            outcome,
            attribution,
            rankings,
        })
    }
}

/// `$HGTRACK_OUT`, or `./runs` when unset.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Writes the record under `root/<first 16 hex digits of its hash>/`.
pub fn persist(record: &RunRecord, root: &Path) -> std::io::Result<PathBuf> {
    let dir = root.join(&record.content_hash()[..16]);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(RECORD_FILE), record.to_json())?;
    std::fs::write(dir.join("scenario.txt"), record.scenario.render())?;
    Ok(dir)
}

/// Loads a record from a run directory or a record file.
pub fn load(path: &Path) -> Result<RunRecord, String> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
    let record = RunRecord::from_json(&bytes).map_err(|e| format!("{}: {e}", file.display()))?;
    if record.schema != RUN_SCHEMA {
        return Err(format!("{}: unsupported schema {}", file.display(), record.schema));
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest;
    use std::sync::OnceLock;

    fn engine() -> &'static Engine {
        static E: OnceLock<Engine> = OnceLock::new();
        E.get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            crate::demo::write(dir.path(), None).unwrap();
            Engine::new(ingest(dir.path()).unwrap()).unwrap()
        })
    }

    fn scenario(measures: &[Measure], filter: PlantFilter) -> Scenario {
        Scenario::new("t", measures, filter, crate::demo::epochs())
    }

    #[test]
    fn parses_demo_scenario() {
        let s = Scenario::parse(crate::demo::SCENARIO_ALL).unwrap();
        assert_eq!(s.id, "demo-all");
        assert_eq!(s.measures.len(), 3);
        assert_eq!(s.filter, PlantFilter::all());
        assert_eq!(Scenario::parse(&s.render()).unwrap(), s);
    }

    #[test]
    fn parse_reports_every_bad_line() {
        let text = "scenario: x\nepochs: 2014 -> 2010\nmeasures: SUS, FOO\nselect: colour=red\nbogus\n";
        let errs = Scenario::parse(text).unwrap_err();
        let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5]);
    }

    #[test]
    fn selector_clauses_union_and_intersect() {
        let s = Scenario::parse("scenario: x\nepochs: 2010 -> 2014\nmeasures: SUS\nselect: province=P05 class=<100\nselect: id=PL01\n").unwrap();
        let ids: Vec<&str> = s.select(&engine().bundle.plants).iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["PL01", "PL04"]);
        let round = Scenario::parse(&s.render()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn empty_filter_gives_zero_record() {
        let r = engine().run(&scenario(&Measure::ALL, PlantFilter::default())).unwrap();
        assert!(r.inventory.is_empty());
        for (_, map) in r.stages() {
            assert!(map.values().all(|v| *v == 0.0));
        }
        assert_eq!(r.outcome.by_province.len(), 5);
    }

    #[test]
    fn runs_are_deterministic_and_content_addressed() {
        let sc = scenario(&Measure::ALL, PlantFilter::all());
        let a = engine().run(&sc).unwrap();
        let b = engine().run(&sc).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let root = tempfile::tempdir().unwrap();
        let d1 = persist(&a, root.path()).unwrap();
        let d2 = persist(&b, root.path()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(load(&d1).unwrap(), a);
    }

    #[test]
    fn measure_runs_add_up() {
        let e = engine();
        let all = e.run(&scenario(&Measure::ALL, PlantFilter::all())).unwrap();
        let mut sum = Stages::new();
        for m in Measure::ALL {
            add_stages(&mut sum, &e.run(&scenario(&[m], PlantFilter::all())).unwrap().stages());
        }
        for (stage, err) in stage_errors(&sum, &all.stages()) {
            // ranks and shares are order statistics
            if stage == "rankings" {
                continue;
            }
            assert!(err <= 1e-9, "{stage}: {err}");
        }
    }

    #[test]
    fn compare_ignores_ids_and_localizes_plants() {
        let e = engine();
        let sc = scenario(&Measure::ALL, PlantFilter::all());
        let a = e.run(&sc).unwrap();
        let mut renamed = sc.clone();
        renamed.id = "other".into();
        let b = e.run(&renamed).unwrap();
        assert!(compare(&a, &b, 0.0).unwrap().is_empty());

        let without: Vec<PlantId> = e.bundle.plants.iter().map(|p| p.id.clone()).filter(|p| p.as_str() != "PL08").collect();
        let c = e.run(&scenario(&Measure::ALL, PlantFilter::ids(without))).unwrap();
        let d = compare(&a, &c, 1e-12).unwrap();
        assert_eq!(d.scenario, vec!["plant PL08 selected in only one run".to_owned()]);
        assert!(d.stages["inventory"].iter().all(|x| x.key.contains("/PL08/")));
        assert!(d.stages["group_totals"].iter().all(|x| x.key.starts_with("province/P03") || x.key.starts_with("company/Westland") || x.key.starts_with("class/300-1200")));
        assert!(d.stages["attribution"].iter().all(|x| x.key.split('|').nth(1) == Some("P03")));
    }

    #[test]
    fn epoch_mismatch_names_stage() {
        let mut sc = scenario(&[Measure::Sus], PlantFilter::all());
        sc.epochs = ("2005".into(), "2010".into());
        let err = engine().run(&sc).unwrap_err();
        assert_eq!(err.stage, "scenario");
    }

    #[test]
    fn enlarging_filter_never_reduces_total() {
        let e = engine();
        let ids: Vec<PlantId> = e.bundle.plants.iter().map(|p| p.id.clone()).filter(|p| p.as_str() != "PL12").collect();
        let mut prev = 0.0;
        for k in 0..=ids.len() {
            let r = e.run(&scenario(&Measure::ALL, PlantFilter::ids(ids[..k].to_vec()))).unwrap();
            assert!(r.inventory.iter().all(|x| x.delta.total() >= 0.0));
            let t = r.total_reduction().total();
            assert!(t >= prev, "{k}: {t} < {prev}");
            prev = t;
        }
    }
}
