use super::{cvd_marginal, CvdForm, DoseResponse, HealthError, HealthOutcome, ProvinceOutcome};
use crate::exposure::{ExposureChain, ExposureState};
use crate::grid::GridSpec;
use crate::ids::{Company, PlantId, ProvinceId};
use crate::inventory::{CapacityClass, Measure, Plant};
use crate::mass::SpeciatedMass;
use crate::transport::{aggregate_to_provinces, rasterize_emissions, DepositionField, EmissionField, ProvinceDeposition, SourceReceptorMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// The source dimensions of the attribution tensor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceGroup {
    pub province: ProvinceId,
    pub measure: Measure,
    pub company: Company,
    pub class: CapacityClass,
}

/// Per-(measure, plant) deltas and the source groups partitioning them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupedInventory {
    pub deltas: BTreeMap<(Measure, PlantId), SpeciatedMass>,
    pub groups: BTreeMap<SourceGroup, Vec<(Measure, PlantId)>>,
}

impl GroupedInventory {
    /// Every delta must sit in exactly one group, and groups may only name
    /// existing deltas.
    pub fn validate(&self) -> Result<(), HealthError> {
        let mut seen = BTreeSet::new();
        for (g, members) in &self.groups {
            for m in members {
                if !self.deltas.contains_key(m) {
                    return Err(HealthError::Partition(format!("group {} lists unknown entry {} {}", g.province, m.0, m.1)));
                }
                if !seen.insert(m) {
                    return Err(HealthError::Partition(format!("{} {} appears in more than one group", m.0, m.1)));
                }
            }
        }
        if let Some(missing) = self.deltas.keys().find(|k| !seen.contains(k)) {
            return Err(HealthError::Partition(format!("{} {} is not covered by any group", missing.0, missing.1)));
        }
        Ok(())
    }

    /// Per-plant deltas summed over measures, for the listed entries.
    fn plant_deltas<'a>(&self, members: impl IntoIterator<Item = &'a (Measure, PlantId)>) -> BTreeMap<PlantId, SpeciatedMass> {
        let mut out: BTreeMap<PlantId, SpeciatedMass> = BTreeMap::new();
        for key in members {
            *out.entry(key.1.clone()).or_default() += self.deltas[key];
        }
        out
    }
}

/// Groups deltas by the plant's province, company and capacity class plus the measure.
pub fn group_by_source(
    deltas: &BTreeMap<(Measure, PlantId), SpeciatedMass>,
    plants: &[Plant],
) -> Result<GroupedInventory, HealthError> {
    let registry: BTreeMap<&PlantId, &Plant> = plants.iter().map(|p| (&p.id, p)).collect();
    let mut groups: BTreeMap<SourceGroup, Vec<(Measure, PlantId)>> = BTreeMap::new();
    for key in deltas.keys() {
        let p = registry
            .get(&key.1)
            .ok_or_else(|| HealthError::Partition(format!("plant {} is not in the registry", key.1)))?;
        let g = SourceGroup {
            province: p.province.clone(),
            measure: key.0,
            company: p.company.clone(),
            class: p.capacity_class(),
        };
        groups.entry(g).or_default().push(key.clone());
    }
    Ok(GroupedInventory { deltas: deltas.clone(), groups })
}

/// Emission field → deposition → exposure → health, through a fixed
/// source-receptor matrix.
#[derive(Debug, Clone, Copy)]
pub struct ImpactModel<'a> {
    pub srm: &'a SourceReceptorMatrix,
    pub grid: &'a GridSpec,
    pub exposure: &'a ExposureChain,
    pub dose: &'a DoseResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Impact {
    pub deposition: DepositionField,
    pub provinces: ProvinceDeposition,
    pub exposure: ExposureState,
    pub outcome: HealthOutcome,
}

impl ImpactModel<'_> {
    pub fn evaluate(&self, field: &EmissionField) -> Result<Impact, HealthError> {
        let deposition = self.srm.apply(field)?;
        let provinces = aggregate_to_provinces(&deposition, self.grid);
        let dep_delta: BTreeMap<ProvinceId, f64> =
            self.exposure.provinces().iter().map(|p| (p.clone(), provinces.thg(p))).collect();
        let exposure = self.exposure.propagate(&dep_delta)?;
        let outcome = HealthOutcome::evaluate(&exposure.delta_edi, self.dose, &self.exposure.intake)?;
        Ok(Impact { deposition, provinces, exposure, outcome })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributionKey {
    pub receptor: ProvinceId,
    pub source: SourceGroup,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    /// Avoided fatal heart attacks per year.
    pub deaths: f64,
    /// IQ points over a year's births.
    pub iq_total: f64,
}

/// Receptor health benefit split by source group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionTensor {
    pub mode: CvdForm,
    /// Sorted by key.
    pub entries: Vec<(AttributionKey, AttributionEntry)>,
    /// Whole-scenario outcome per receptor.
    pub totals: BTreeMap<ProvinceId, ProvinceOutcome>,
    /// `Σ_r |Σ_g entry − total| / Σ_r |total|`, worst of deaths and IQ.
    pub closure_residual: f64,
}

impl AttributionTensor {
    /// Entries summed over every source dimension, per receptor.
    pub fn receptor_sums(&self) -> BTreeMap<ProvinceId, AttributionEntry> {
        let mut out: BTreeMap<ProvinceId, AttributionEntry> =
            self.totals.keys().map(|p| (p.clone(), AttributionEntry::default())).collect();
        for (k, e) in &self.entries {
            let acc = out.entry(k.receptor.clone()).or_default();
            acc.deaths += e.deaths;
            acc.iq_total += e.iq_total;
        }
        out
    }

    fn closure(entries: &[(AttributionKey, AttributionEntry)], totals: &BTreeMap<ProvinceId, ProvinceOutcome>) -> f64 {
        let tmp = AttributionTensor { mode: CvdForm::Linear, entries: entries.to_vec(), totals: totals.clone(), closure_residual: 0.0 };
        let sums = tmp.receptor_sums();
        let relative = |pairs: Vec<(f64, f64)>| {
            let err: f64 = pairs.iter().map(|(s, t)| (s - t).abs()).sum();
            let scale: f64 = pairs.iter().map(|(_, t)| t.abs()).sum();
            if scale > 0.0 { err / scale } else { err }
        };
        let deaths = relative(totals.iter().map(|(p, t)| (sums[p].deaths, t.deaths)).collect());
        let iq = relative(totals.iter().map(|(p, t)| (sums[p].iq_total, t.iq_total)).collect());
        deaths.max(iq)
    }
}

/// Propagates each source group alone through the impact chain.
///
/// In linear mode the entries add up to the whole-scenario outcome. In
/// log-linear mode deaths are attributed with the derivative at zero intake
/// change and the mismatch is reported as `closure_residual`.
pub fn attribute(model: &ImpactModel<'_>, inventory: &GroupedInventory, plants: &[Plant]) -> Result<AttributionTensor, HealthError> {
    inventory.validate()?;
    let whole = rasterize_emissions(&inventory.plant_deltas(inventory.deltas.keys()), plants, model.grid)?;
    let totals = model.evaluate(&whole)?.outcome.by_province;

    let groups: Vec<(&SourceGroup, &Vec<(Measure, PlantId)>)> = inventory.groups.iter().collect();
    let per_group = groups
        .par_iter()
        .map(|(g, members)| {
            let field = rasterize_emissions(&inventory.plant_deltas(members.iter()), plants, model.grid)?;
            let impact = model.evaluate(&field)?;
            let deaths = match model.dose.cvd_form {
                CvdForm::Linear => impact.outcome.by_province.iter().map(|(p, o)| (p.clone(), o.deaths)).collect(),
                CvdForm::LogLinear => cvd_marginal(&impact.exposure.delta_edi, model.dose)?,
            };
            let rows: Vec<(AttributionKey, AttributionEntry)> = impact
                .outcome
                .by_province
                .iter()
                .map(|(p, o)| {
                    let key = AttributionKey { receptor: p.clone(), source: (*g).clone() };
                    (key, AttributionEntry { deaths: deaths[p], iq_total: o.iq_total })
                })
                .collect();
            Ok::<_, HealthError>(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut entries: Vec<(AttributionKey, AttributionEntry)> = per_group.into_iter().flatten().collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let closure_residual = AttributionTensor::closure(&entries, &totals);
    Ok(AttributionTensor { mode: model.dose.cvd_form, entries, totals, closure_residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub province: ProvinceId,
    pub deaths: f64,
    pub iq_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureShare {
    pub measure: Measure,
    pub deaths: f64,
    pub iq_total: f64,
    /// Fraction of all avoided deaths.
    pub deaths_share: f64,
    pub iq_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Benefit received from sources in other provinces.
    pub receivers: Vec<Ranked>,
    /// Benefit a source province delivers to other provinces.
    pub exporters: Vec<Ranked>,
    /// Total benefit per receptor.
    pub receptors: Vec<Ranked>,
    pub measure_shares: Vec<MeasureShare>,
}

impl RankReport {
    /// The three province rankings with their names.
    pub fn lists(&self) -> [(&'static str, &[Ranked]); 3] {
        [("receivers", &self.receivers), ("exporters", &self.exporters), ("receptors", &self.receptors)]
    }
}

fn ranked(map: BTreeMap<ProvinceId, (f64, f64)>) -> Vec<Ranked> {
    let mut v: Vec<Ranked> = map
        .into_iter()
        .map(|(province, (deaths, iq_total))| Ranked { province, deaths, iq_total })
        .collect();
    // BTreeMap order already sorts by id; the stable sort keeps it for ties
    v.sort_by(|a, b| b.deaths.total_cmp(&a.deaths).then_with(|| b.iq_total.total_cmp(&a.iq_total)).then(Ordering::Equal));
    v
}

/// Deterministic summaries; ties are broken by province id ascending.
pub fn rank_report(t: &AttributionTensor) -> RankReport {
    let mut receivers: BTreeMap<ProvinceId, (f64, f64)> = BTreeMap::new();
    let mut exporters: BTreeMap<ProvinceId, (f64, f64)> = BTreeMap::new();
    let mut receptors: BTreeMap<ProvinceId, (f64, f64)> = BTreeMap::new();
    let mut by_measure: BTreeMap<Measure, (f64, f64)> = Measure::ALL.iter().map(|m| (*m, (0.0, 0.0))).collect();
    for p in t.totals.keys() {
        receivers.insert(p.clone(), (0.0, 0.0));
        exporters.insert(p.clone(), (0.0, 0.0));
        receptors.insert(p.clone(), (0.0, 0.0));
    }
    for (k, e) in &t.entries {
        let add = |acc: &mut (f64, f64)| {
            acc.0 += e.deaths;
            acc.1 += e.iq_total;
        };
        add(receptors.entry(k.receptor.clone()).or_default());
        add(by_measure.entry(k.source.measure).or_default());
        if k.source.province != k.receptor {
            add(receivers.entry(k.receptor.clone()).or_default());
            add(exporters.entry(k.source.province.clone()).or_default());
        }
    }
    let total_deaths: f64 = by_measure.values().map(|v| v.0).sum();
    let total_iq: f64 = by_measure.values().map(|v| v.1).sum();
    let share = |x: f64, total: f64| if total != 0.0 { x / total } else { 0.0 };
    RankReport {
        receivers: ranked(receivers),
        exporters: ranked(exporters),
        receptors: ranked(receptors),
        measure_shares: by_measure
            .into_iter()
            .map(|(measure, (d, q))| MeasureShare {
                measure,
                deaths: d,
                iq_total: q,
                deaths_share: share(d, total_deaths),
                iq_share: share(q, total_iq),
            })
            .collect(),
    }
}
