//! Plot-ready outputs of a run record.
//!
//! CSV tables carry a schema line and units in their headers. Numbers are
//! written in the shortest form that parses back to the same `f64`, so the
//! tables reproduce the record exactly.

use crate::ingest::{header_line, schema_line};
use crate::mass::{SpeciatedMass, Species};
use crate::scenario::{RunRecord, Stages};
use crate::transport::Tracers;
use serde_json::json;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Geojson,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "geojson" | "geojson-like" => Ok(Format::Geojson),
            other => Err(format!("unknown report format '{other}' (expected table, csv or geojson)")),
        }
    }
}

pub const INVENTORY: &str = "inventory.csv";
pub const EMISSIONS: &str = "emissions_by_province.csv";
pub const GROUP_TOTALS: &str = "group_totals.csv";
pub const EMISSION_GRID: &str = "emission_grid.csv";
pub const DEPOSITION_GRID: &str = "deposition_grid.csv";
pub const BUDGET: &str = "deposition_budget.csv";
pub const DEPOSITION: &str = "deposition_by_province.csv";
pub const FOOD: &str = "food_delta.csv";
pub const EDI: &str = "edi.csv";
pub const OUTCOMES: &str = "outcomes.csv";
pub const ATTRIBUTION: &str = "attribution.csv";
pub const RANKINGS: &str = "rankings.csv";
pub const MEASURE_SHARES: &str = "measure_shares.csv";
pub const GEOJSON: &str = "deposition.geojson";
pub const TABLE: &str = "report.txt";

const G: &str = "g/yr";
const SPECIES_COLUMNS: [(&str, &str); 4] = [("hg0", G), ("hg2", G), ("hgp", G), ("thg", G)];
const TRACER_COLUMNS: [(&str, &str); 5] = [("hg0", G), ("hg2", G), ("hgp", G), ("hg0_to_hg2", G), ("thg", G)];
const TRACER_KEYS: [&str; 4] = ["hg0", "hg2", "hgp", "hg0_to_hg2"];

/// Shortest round-trip text; scientific notation outside [1e-4, 1e15).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        "0".to_owned()
    } else if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn species(m: &SpeciatedMass) -> String {
    format!("{},{},{},{}", num(m.hg0), num(m.hg2), num(m.hgp), num(m.total()))
}

fn tracers(t: &Tracers) -> String {
    format!("{},{},{},{},{}", num(t.hg0), num(t.hg2), num(t.hgp), num(t.ox), num(t.total()))
}

fn table(kind: &str, columns: &[(&str, &str)]) -> String {
    format!("{}\n{}\n", schema_line(&format!("report-{kind}")), header_line(columns))
}

fn cols<'a>(lead: &[(&'a str, &'a str)], tail: &[(&'a str, &'a str)]) -> Vec<(&'a str, &'a str)> {
    lead.iter().chain(tail).copied().collect()
}

/// CSV tables keyed by file name.
pub fn csv_files(r: &RunRecord) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();

    let mut s = table("inventory", &cols(&[("measure", ""), ("plant", ""), ("province", ""), ("company", ""), ("class", "")], &SPECIES_COLUMNS));
    for row in &r.inventory {
        writeln!(s, "{},{},{},{},{},{}", row.measure, row.plant, row.province, row.company, row.class.label(), species(&row.delta)).unwrap();
    }
    out.insert(INVENTORY.to_owned(), s);

    let mut s = table("emissions", &cols(&[("measure", ""), ("province", "")], &SPECIES_COLUMNS));
    for (m, by) in &r.emission_by_measure {
        for p in &r.provinces {
            writeln!(s, "{m},{p},{}", species(by.get(p).unwrap_or(&SpeciatedMass::ZERO))).unwrap();
        }
    }
    out.insert(EMISSIONS.to_owned(), s);

    let mut s = table("group-totals", &cols(&[("group", ""), ("label", "")], &SPECIES_COLUMNS));
    for (kind, map) in [("province", &r.totals_by_province), ("company", &r.totals_by_company), ("class", &r.totals_by_class)] {
        for (k, m) in map {
            writeln!(s, "{kind},{k},{}", species(m)).unwrap();
        }
    }
    out.insert(GROUP_TOTALS.to_owned(), s);

    let lead = [("cell", ""), ("i", ""), ("j", "")];
    let mut s = table("emission-grid", &cols(&lead, &SPECIES_COLUMNS));
    for (c, m) in r.emission_grid.iter().enumerate() {
        let (i, j) = r.grid.coords(c);
        writeln!(s, "{c},{i},{j},{}", species(m)).unwrap();
    }
    out.insert(EMISSION_GRID.to_owned(), s);

    let mut s = table("deposition-grid", &cols(&lead, &TRACER_COLUMNS));
    for (c, t) in r.deposition.deposited.iter().enumerate() {
        let (i, j) = r.grid.coords(c);
        writeln!(s, "{c},{i},{j},{}", tracers(t)).unwrap();
    }
    out.insert(DEPOSITION_GRID.to_owned(), s);

    let mut s = table("deposition-budget", &cols(&[("pool", "")], &TRACER_COLUMNS));
    writeln!(s, "exported,{}", tracers(&r.deposition.exported)).unwrap();
    writeln!(s, "airborne,{}", tracers(&r.deposition.airborne)).unwrap();
    let ox = Tracers { ox: r.deposition.oxidized, ..Tracers::ZERO };
    writeln!(s, "oxidized,{}", tracers(&ox)).unwrap();
    out.insert(BUDGET.to_owned(), s);

    let mut s = table("deposition", &cols(&[("province", "")], &SPECIES_COLUMNS));
    for p in &r.provinces {
        let m = r.province_deposition.by_province.get(p).unwrap_or(&SpeciatedMass::ZERO);
        writeln!(s, "{p},{}", species(m)).unwrap();
    }
    writeln!(s, "external,{}", species(&r.province_deposition.external)).unwrap();
    out.insert(DEPOSITION.to_owned(), s);

    let mut s = table("food", &[("province", ""), ("category", ""), ("producer_delta", "ug/kg"), ("consumer_delta", "ug/kg")]);
    let (prod, cons) = (&r.exposure.producer_delta, &r.exposure.consumer_delta);
    for (pi, p) in prod.provinces.iter().enumerate() {
        for (ci, c) in prod.categories.iter().enumerate() {
            writeln!(s, "{p},{c},{},{}", num(prod.get(pi, ci)), num(cons.get(pi, ci))).unwrap();
        }
    }
    out.insert(FOOD.to_owned(), s);

    let mut s = table("edi", &[("province", ""), ("delta_edi", "ug/kg-bw/day")]);
    for p in &r.provinces {
        writeln!(s, "{p},{}", num(r.exposure.delta_edi.get(p).copied().unwrap_or(0.0))).unwrap();
    }
    out.insert(EDI.to_owned(), s);

    let mut s = table("outcomes", &[("province", ""), ("iq_per_foetus", "points"), ("iq_total", "points"), ("deaths", "deaths/yr")]);
    for p in &r.provinces {
        let o = r.outcome.by_province.get(p).copied().unwrap_or_default();
        writeln!(s, "{p},{},{},{}", num(o.iq_per_foetus), num(o.iq_total), num(o.deaths)).unwrap();
    }
    writeln!(s, "national,{},{},{}", num(r.outcome.national_iq_per_foetus), num(r.outcome.total_iq()), num(r.outcome.total_deaths())).unwrap();
    out.insert(OUTCOMES.to_owned(), s);

    let mut s = table(
        "attribution",
        &[("receptor", ""), ("source", ""), ("measure", ""), ("company", ""), ("class", ""), ("deaths", "deaths/yr"), ("iq", "points")],
    );
    for (k, e) in &r.attribution.entries {
        let g = &k.source;
        writeln!(s, "{},{},{},{},{},{},{}", k.receptor, g.province, g.measure, g.company, g.class.label(), num(e.deaths), num(e.iq_total)).unwrap();
    }
    out.insert(ATTRIBUTION.to_owned(), s);

    let mut s = table("rankings", &[("list", ""), ("rank", ""), ("province", ""), ("deaths", "deaths/yr"), ("iq", "points")]);
    for (name, list) in r.rankings.lists() {
        for (i, x) in list.iter().enumerate() {
            writeln!(s, "{name},{},{},{},{}", i + 1, x.province, num(x.deaths), num(x.iq_total)).unwrap();
        }
    }
    out.insert(RANKINGS.to_owned(), s);

    let mut s = table(
        "measure-shares",
        &[("measure", ""), ("deaths", "deaths/yr"), ("iq", "points"), ("deaths_share", "1"), ("iq_share", "1")],
    );
    for m in &r.rankings.measure_shares {
        writeln!(s, "{},{},{},{},{}", m.measure, num(m.deaths), num(m.iq_total), num(m.deaths_share), num(m.iq_share)).unwrap();
    }
    out.insert(MEASURE_SHARES.to_owned(), s);
    out
}

/// One polygon feature per grid cell with its avoided deposition.
pub fn geojson(r: &RunRecord) -> String {
    let features: Vec<_> = r
        .deposition
        .deposited
        .iter()
        .enumerate()
        .map(|(c, t)| {
            let ring: Vec<[f64; 2]> = r.grid.cell_corners(c).iter().chain(&r.grid.cell_corners(c)[..1]).map(|(lat, lon)| [*lon, *lat]).collect();
            let (i, j) = r.grid.coords(c);
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": {
                    "cell": c,
                    "i": i,
                    "j": j,
                    "province": r.grid.region_mask[c].as_ref().map(|p| p.as_str()),
                    "units": G,
                    "hg0": t.hg0,
                    "hg2": t.hg2,
                    "hgp": t.hgp,
                    "hg0_to_hg2": t.ox,
                    "thg": t.total(),
                }
            })
        })
        .collect();
    let doc = json!({
        "type": "FeatureCollection",
        "properties": { "scenario": r.scenario_id, "quantity": "avoided deposition", "units": G },
        "features": features,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("json values serialize");
    s.push('\n');
    s
}

fn pad(rows: &[Vec<String>]) -> String {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

fn sci(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.6e}")
    }
}

/// Human-readable summary tables.
pub fn text_table(r: &RunRecord) -> String {
    let mut out = format!("scenario {} ({} -> {})\n", r.scenario_id, r.scenario.epochs.0, r.scenario.epochs.1);
    out += &format!("selected plants: {}\n\n", r.selected_plants.len());

    out += "Emission reductions by province and measure\n";
    let mut rows = vec![vec!["province".into(), "measure".into(), "Hg0 [g/yr]".into(), "Hg2+ [g/yr]".into(), "HgP [g/yr]".into(), "THg [g/yr]".into()]];
    for (m, by) in &r.emission_by_measure {
        for p in &r.provinces {
            let x = by.get(p).copied().unwrap_or_default();
            rows.push(vec![p.to_string(), m.to_string(), sci(x.hg0), sci(x.hg2), sci(x.hgp), sci(x.total())]);
        }
    }
    out += &pad(&rows);

    out += "\nAvoided deposition by province\n";
    let mut rows = vec![vec!["province".into(), "Hg0 [g/yr]".into(), "Hg2+ [g/yr]".into(), "HgP [g/yr]".into(), "THg [g/yr]".into()]];
    for p in &r.provinces {
        let x = r.province_deposition.by_province.get(p).copied().unwrap_or_default();
        rows.push(vec![p.to_string(), sci(x.hg0), sci(x.hg2), sci(x.hgp), sci(x.total())]);
    }
    let x = r.province_deposition.external;
    rows.push(vec!["external".into(), sci(x.hg0), sci(x.hg2), sci(x.hgp), sci(x.total())]);
    out += &pad(&rows);

    out += "\nIntake and health benefits by province\n";
    let mut rows = vec![vec![
        "province".into(),
        "dEDI [ug/kg-bw/day]".into(),
        "IQ per foetus [points]".into(),
        "IQ total [points]".into(),
        "deaths [deaths/yr]".into(),
    ]];
    for p in &r.provinces {
        let o = r.outcome.by_province.get(p).copied().unwrap_or_default();
        let edi = r.exposure.delta_edi.get(p).copied().unwrap_or(0.0);
        rows.push(vec![p.to_string(), sci(edi), sci(o.iq_per_foetus), sci(o.iq_total), sci(o.deaths)]);
    }
    rows.push(vec![
        "national".into(),
        String::new(),
        sci(r.outcome.national_iq_per_foetus),
        sci(r.outcome.total_iq()),
        sci(r.outcome.total_deaths()),
    ]);
    out += &pad(&rows);

    out += &format!("\nAttribution ({} mode, closure residual {})\n", r.attribution.mode, sci(r.attribution.closure_residual));
    let mut rows = vec![vec!["list".into(), "rank".into(), "province".into(), "deaths [deaths/yr]".into(), "IQ total [points]".into()]];
    for (name, list) in [("receivers", &r.rankings.receivers), ("exporters", &r.rankings.exporters)] {
        for (i, x) in list.iter().enumerate() {
            rows.push(vec![name.into(), (i + 1).to_string(), x.province.to_string(), sci(x.deaths), sci(x.iq_total)]);
        }
    }
    out += &pad(&rows);
    out += "\nMeasure shares\n";
    let mut rows = vec![vec!["measure".into(), "deaths [deaths/yr]".into(), "share".into(), "IQ total [points]".into(), "share".into()]];
    for m in &r.rankings.measure_shares {
        rows.push(vec![m.measure.to_string(), sci(m.deaths), format!("{:.4}", m.deaths_share), sci(m.iq_total), format!("{:.4}", m.iq_share)]);
    }
    out += &pad(&rows);
    for w in &r.warnings {
        out += &format!("warning: {w}\n");
    }
    out
}

pub fn render(r: &RunRecord, format: Format) -> BTreeMap<String, String> {
    match format {
        Format::Csv => csv_files(r),
        Format::Geojson => BTreeMap::from([(GEOJSON.to_owned(), geojson(r))]),
        Format::Table => BTreeMap::from([(TABLE.to_owned(), text_table(r))]),
    }
}

pub fn write(r: &RunRecord, format: Format, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    render(r, format)
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map(|_| path)
        })
        .collect()
}

fn rows<'a>(files: &'a BTreeMap<String, String>, name: &str) -> Result<impl Iterator<Item = Vec<&'a str>>, String> {
    let text = files.get(name).ok_or_else(|| format!("missing {name}"))?;
    Ok(text.lines().skip(2).filter(|l| !l.is_empty()).map(|l| l.split(',').collect()))
}

fn parse(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("bad number '{s}'"))
}

/// Reads CSV report tables back into the keys of [`RunRecord::stages`].
pub fn read_csv_stages(files: &BTreeMap<String, String>) -> Result<Stages, String> {
    let mut st: Stages = BTreeMap::new();
    let species_into = |map: &mut BTreeMap<String, f64>, prefix: String, cells: &[&str]| -> Result<(), String> {
        for (s, v) in Species::ALL.iter().zip(cells) {
            map.insert(format!("{prefix}/{}", s.label()), parse(v)?);
        }
        Ok(())
    };
    let m = st.entry("inventory").or_default();
    for r in rows(files, INVENTORY)? {
        species_into(m, format!("{}/{}", r[0], r[1]), &r[5..])?;
    }
    let m = st.entry("emission_by_measure").or_default();
    for r in rows(files, EMISSIONS)? {
        species_into(m, format!("{}/{}", r[0], r[1]), &r[2..])?;
    }
    let m = st.entry("group_totals").or_default();
    for r in rows(files, GROUP_TOTALS)? {
        species_into(m, format!("{}/{}", r[0], r[1]), &r[2..])?;
    }
    let m = st.entry("emission_grid").or_default();
    for r in rows(files, EMISSION_GRID)? {
        species_into(m, r[0].to_owned(), &r[3..])?;
    }
    let m = st.entry("deposition_grid").or_default();
    for r in rows(files, DEPOSITION_GRID)? {
        for (k, v) in TRACER_KEYS.iter().zip(&r[3..]) {
            m.insert(format!("{}/{k}", r[0]), parse(v)?);
        }
    }
    for r in rows(files, BUDGET)? {
        if r[0] == "oxidized" {
            m.insert("oxidized".into(), parse(r[4])?);
        } else {
            for (k, v) in TRACER_KEYS.iter().zip(&r[1..]) {
                m.insert(format!("{}/{k}", r[0]), parse(v)?);
            }
        }
    }
    let m = st.entry("province_deposition").or_default();
    for r in rows(files, DEPOSITION)? {
        species_into(m, r[0].to_owned(), &r[1..])?;
    }
    for r in rows(files, FOOD)? {
        st.entry("producer_delta").or_default().insert(format!("{}/{}", r[0], r[1]), parse(r[2])?);
        st.entry("consumer_delta").or_default().insert(format!("{}/{}", r[0], r[1]), parse(r[3])?);
    }
    let m = st.entry("delta_edi").or_default();
    for r in rows(files, EDI)? {
        m.insert(r[0].to_owned(), parse(r[1])?);
    }
    let m = st.entry("outcome").or_default();
    for r in rows(files, OUTCOMES)? {
        if r[0] == "national" {
            m.insert("national/iq_per_foetus".into(), parse(r[1])?);
        } else {
            m.insert(format!("{}/iq_per_foetus", r[0]), parse(r[1])?);
            m.insert(format!("{}/iq_total", r[0]), parse(r[2])?);
            m.insert(format!("{}/deaths", r[0]), parse(r[3])?);
        }
    }
    let m = st.entry("attribution").or_default();
    for r in rows(files, ATTRIBUTION)? {
        let key = r[..5].join("|");
        m.insert(format!("{key}/deaths"), parse(r[5])?);
        m.insert(format!("{key}/iq_total"), parse(r[6])?);
    }
    let m = st.entry("rankings").or_default();
    for r in rows(files, RANKINGS)? {
        m.insert(format!("{}/{}/{}/deaths", r[0], r[1], r[2]), parse(r[3])?);
        m.insert(format!("{}/{}/{}/iq_total", r[0], r[1], r[2]), parse(r[4])?);
    }
    for r in rows(files, MEASURE_SHARES)? {
        for (what, v) in ["deaths", "iq_total", "deaths_share", "iq_share"].iter().zip(&r[1..]) {
            m.insert(format!("share/{}/{what}", r[0]), parse(v)?);
        }
    }
    Ok(st)
}
