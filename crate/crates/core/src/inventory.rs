//! Plant-level speciated emission changes for the three retrofit measures.
//!
//! All three measures share the coal-borne release term
//! `coal × A × (1 − Q·ω) × R`, in grams of mercury for coal in metric tons
//! and `A` in g Hg per ton of coal. They differ in which coal quantity and
//! which removal efficiency multiply it:
//!
//! * small unit shutdown: `C_t1 × … × (1 − η_t1)`, the whole avoided emission
//!   of a decommissioned unit;
//! * new APCDs: `C_t2 × … × ((1 − η_t1) − (1 − η_t2))`, speciated per epoch so a
//!   species can increase while the total falls;
//! * generation efficiency: `P_t2 × (CCR_t1 − CCR_t2) × … × (1 − η_t2)`, the
//!   coal saved at post-retrofit removal efficiency.
//!
//! Every delta is reported as a reduction: positive means less mercury emitted.

use crate::ids::{ComboKey, Company, PlantId, ProvinceId};
use crate::mass::SpeciatedMass;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Grams of coal per metric ton.
pub const GRAMS_PER_TON: f64 = 1.0e6;

/// Tolerance on speciation shares summing to one.
pub const SPECIATION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InventoryError {
    #[error("plant {plant} references province {province} which has no parameters")]
    UnknownProvince { plant: PlantId, province: ProvinceId },
    #[error("plant {plant} belongs to {expected} but was given parameters for {given}")]
    ProvinceMismatch { plant: PlantId, expected: ProvinceId, given: ProvinceId },
    #[error("plant {plant} is not eligible for {measure}: {reason}")]
    NotEligible { plant: PlantId, measure: Measure, reason: &'static str },
    #[error("{entity}: {field} = {value} {reason}")]
    InvalidParameter { entity: String, field: &'static str, value: f64, reason: &'static str },
    #[error("duplicate plant id {0}")]
    DuplicatePlant(PlantId),
}

/// Provincial coal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceParams {
    pub id: ProvinceId,
    /// Mean mercury content of consumed coal, g Hg per ton coal.
    pub coal_hg: f64,
    /// Fraction of coal that is washed.
    pub washed_fraction: f64,
    /// Mercury removal efficiency of coal washing.
    pub washing_removal: f64,
    /// Release ratio used when a plant does not carry its own.
    pub release_ratio: f64,
}

impl ProvinceParams {
    /// `1 − Q·ω`
    pub fn washing_factor(&self) -> f64 {
        1.0 - self.washed_fraction * self.washing_removal
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let entity = format!("province {}", self.id);
        check_nonneg(&entity, "coal_hg", self.coal_hg)?;
        check_unit(&entity, "washed_fraction", self.washed_fraction)?;
        check_unit(&entity, "washing_removal", self.washing_removal)?;
        check_unit(&entity, "release_ratio", self.release_ratio)
    }
}

/// Emitted-share triple of an APCD combination. Shares sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speciation {
    pub hg0: f64,
    pub hg2: f64,
    pub hgp: f64,
}

impl Speciation {
    pub fn new(hg0: f64, hg2: f64, hgp: f64) -> Self {
        Self { hg0, hg2, hgp }
    }

    pub fn split(&self, thg: f64) -> SpeciatedMass {
        SpeciatedMass::new(thg * self.hg0, thg * self.hg2, thg * self.hgp)
    }

    pub fn validate(&self, entity: &str) -> Result<(), InventoryError> {
        for (field, v) in [("share_hg0", self.hg0), ("share_hg2", self.hg2), ("share_hgp", self.hgp)] {
            check_nonneg(entity, field, v)?;
        }
        let sum = self.hg0 + self.hg2 + self.hgp;
        if (sum - 1.0).abs() > SPECIATION_SUM_TOL {
            return Err(InventoryError::InvalidParameter {
                entity: entity.to_owned(),
                field: "speciation sum",
                value: sum,
                reason: "must equal 1 within 1e-12",
            });
        }
        Ok(())
    }
}

/// Removal efficiency and emitted speciation of one device combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApcdConfig {
    pub combo: ComboKey,
    /// Total mercury removal efficiency η.
    pub removal_efficiency: f64,
    pub speciation: Speciation,
}

impl ApcdConfig {
    pub fn new(combo: impl Into<ComboKey>, removal_efficiency: f64, speciation: Speciation) -> Self {
        Self { combo: combo.into(), removal_efficiency, speciation }
    }

    /// `1 − η`
    pub fn penetration(&self) -> f64 {
        1.0 - self.removal_efficiency
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let entity = format!("apcd {}", self.combo);
        check_unit(&entity, "removal_efficiency", self.removal_efficiency)?;
        self.speciation.validate(&entity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantStatus {
    Active,
    Decommissioned,
}

/// One coal-fired generating unit described at two epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub id: PlantId,
    pub province: ProvinceId,
    pub company: Company,
    pub capacity_mw: f64,
    pub lat: f64,
    pub lon: f64,
    /// Annual coal consumption at t1, tons.
    pub coal_t1: f64,
    /// Annual coal consumption at t2, tons.
    pub coal_t2: f64,
    /// Electricity generated at t2, kWh.
    pub power_t2: f64,
    /// Coal consumption rate at t1, g coal per kWh.
    pub ccr_t1: f64,
    pub ccr_t2: f64,
    pub apcd_t1: ApcdConfig,
    pub apcd_t2: ApcdConfig,
    /// Plant-specific release ratio; falls back to the province default.
    pub release_ratio: Option<f64>,
    pub status: PlantStatus,
}

impl Plant {
    pub fn capacity_class(&self) -> CapacityClass {
        CapacityClass::of(self.capacity_mw)
    }

    pub fn validate(&self) -> Result<(), InventoryError> {
        let entity = format!("plant {}", self.id);
        if !(self.capacity_mw > 0.0 && self.capacity_mw.is_finite()) {
            return Err(invalid(&entity, "capacity_mw", self.capacity_mw, "must be > 0"));
        }
        for (field, v) in [("ccr_t1", self.ccr_t1), ("ccr_t2", self.ccr_t2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(&entity, field, v, "must be > 0"));
            }
        }
        check_nonneg(&entity, "coal_t1", self.coal_t1)?;
        check_nonneg(&entity, "coal_t2", self.coal_t2)?;
        check_nonneg(&entity, "power_t2", self.power_t2)?;
        if let Some(r) = self.release_ratio {
            check_unit(&entity, "release_ratio", r)?;
        }
        self.apcd_t1.validate()?;
        self.apcd_t2.validate()
    }

    /// Mercury released to flue gas per ton of coal, before APCDs.
    fn released_per_ton(&self, prov: &ProvinceParams) -> Result<f64, InventoryError> {
        if prov.id != self.province {
            return Err(InventoryError::ProvinceMismatch {
                plant: self.id.clone(),
                expected: self.province.clone(),
                given: prov.id.clone(),
            });
        }
        let r = self.release_ratio.unwrap_or(prov.release_ratio);
        let per_ton = prov.coal_hg * prov.washing_factor() * r;
        if !per_ton.is_finite() {
            return Err(invalid(&format!("plant {}", self.id), "release term", per_ton, "is not finite"));
        }
        Ok(per_ton)
    }

    /// Coal saved at t2 output by the drop in coal consumption rate, tons.
    pub fn coal_saved(&self) -> f64 {
        self.power_t2 * (self.ccr_t1 - self.ccr_t2) / GRAMS_PER_TON
    }

    /// Coal the t2 output would have needed at the t1 consumption rate, tons.
    pub fn counterfactual_coal_t2(&self) -> f64 {
        self.power_t2 * self.ccr_t1 / GRAMS_PER_TON
    }

    pub fn eligibility(&self, measure: Measure) -> Result<(), &'static str> {
        match measure {
            Measure::Sus => match self.status {
                PlantStatus::Decommissioned => Ok(()),
                PlantStatus::Active => Err("unit was not decommissioned"),
            },
            Measure::Apcd => {
                if self.status != PlantStatus::Active {
                    Err("unit is decommissioned")
                } else if self.apcd_t1.combo == self.apcd_t2.combo {
                    Err("APCD combination unchanged between epochs")
                } else {
                    Ok(())
                }
            }
            Measure::Pge => {
                if self.status != PlantStatus::Active {
                    Err("unit is decommissioned")
                } else if self.ccr_t1 == self.ccr_t2 {
                    Err("coal consumption rate unchanged between epochs")
                } else if self.power_t2 == 0.0 {
                    Err("no generation at t2")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Retrofit measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    /// Small unit shutdown.
    #[serde(rename = "SUS")]
    Sus,
    /// Newly installed air pollution control devices.
    #[serde(rename = "APCD")]
    Apcd,
    /// Power generation efficiency improvement.
    #[serde(rename = "PGE")]
    Pge,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Sus, Measure::Apcd, Measure::Pge];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Sus => "SUS",
            Measure::Apcd => "APCD",
            Measure::Pge => "PGE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUS" => Some(Measure::Sus),
            "APCD" => Some(Measure::Apcd),
            "PGE" => Some(Measure::Pge),
            _ => None,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Installed-capacity class, boundaries 100/300/1200 MW, lower-inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CapacityClass {
    #[serde(rename = "<100")]
    Below100,
    #[serde(rename = "100-300")]
    From100To300,
    #[serde(rename = "300-1200")]
    From300To1200,
    #[serde(rename = ">=1200")]
    Above1200,
}

impl CapacityClass {
    pub const ALL: [CapacityClass; 4] = [
        CapacityClass::Below100,
        CapacityClass::From100To300,
        CapacityClass::From300To1200,
        CapacityClass::Above1200,
    ];

    pub fn of(capacity_mw: f64) -> Self {
        if capacity_mw < 100.0 {
            CapacityClass::Below100
        } else if capacity_mw < 300.0 {
            CapacityClass::From100To300
        } else if capacity_mw < 1200.0 {
            CapacityClass::From300To1200
        } else {
            CapacityClass::Above1200
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CapacityClass::Below100 => "<100",
            CapacityClass::From100To300 => "100-300",
            CapacityClass::From300To1200 => "300-1200",
            CapacityClass::Above1200 => ">=1200",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s.trim())
    }
}

impl fmt::Display for CapacityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Avoided emission of a decommissioned unit.
pub fn emission_sus(plant: &Plant, prov: &ProvinceParams) -> Result<SpeciatedMass, InventoryError> {
    plant.eligibility(Measure::Sus).map_err(|reason| InventoryError::NotEligible {
        plant: plant.id.clone(),
        measure: Measure::Sus,
        reason,
    })?;
    let per_ton = plant.released_per_ton(prov)?;
    let thg = plant.coal_t1 * per_ton * plant.apcd_t1.penetration();
    Ok(plant.apcd_t1.speciation.split(thg))
}

/// Emission change from swapping `apcd_t1` for `apcd_t2` at t2 coal use.
///
/// Each epoch's emission is speciated with its own profile before
/// subtracting, so e.g. an SCR retrofit yields a negative Hg²⁺ component.
pub fn emission_delta_apcd(plant: &Plant, prov: &ProvinceParams) -> Result<SpeciatedMass, InventoryError> {
    let released = plant.coal_t2 * plant.released_per_ton(prov)?;
    let before = plant.apcd_t1.speciation.split(released * plant.apcd_t1.penetration());
    let after = plant.apcd_t2.speciation.split(released * plant.apcd_t2.penetration());
    Ok(before - after)
}

/// Emission change from the lower coal consumption rate at t2 output.
pub fn emission_delta_pge(plant: &Plant, prov: &ProvinceParams) -> Result<SpeciatedMass, InventoryError> {
    let per_ton = plant.released_per_ton(prov)?;
    let thg = plant.coal_saved() * per_ton * plant.apcd_t2.penetration();
    Ok(plant.apcd_t2.speciation.split(thg))
}

pub fn emission_delta(measure: Measure, plant: &Plant, prov: &ProvinceParams) -> Result<SpeciatedMass, InventoryError> {
    match measure {
        Measure::Sus => emission_sus(plant, prov),
        Measure::Apcd => emission_delta_apcd(plant, prov),
        Measure::Pge => emission_delta_pge(plant, prov),
    }
}

/// A plant whose computed THg delta is negative (emissions went up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryWarning {
    pub plant: PlantId,
    pub measure: Measure,
    pub thg: f64,
}

impl fmt::Display for InventoryWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: negative THg reduction {} g", self.measure, self.plant, self.thg)
    }
}

/// Per-plant deltas for one measure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub deltas: BTreeMap<PlantId, SpeciatedMass>,
    pub warnings: Vec<InventoryWarning>,
}

impl Inventory {
    pub fn total(&self) -> SpeciatedMass {
        self.deltas.values().sum()
    }
}

/// Applies the measure's formula to every eligible plant.
pub fn build_inventory(
    plants: &[Plant],
    provinces: &BTreeMap<ProvinceId, ProvinceParams>,
    measure: Measure,
) -> Result<Inventory, InventoryError> {
    let mut seen = BTreeSet::new();
    let mut inv = Inventory::default();
    for plant in plants {
        if !seen.insert(&plant.id) {
            return Err(InventoryError::DuplicatePlant(plant.id.clone()));
        }
        let prov = provinces.get(&plant.province).ok_or_else(|| InventoryError::UnknownProvince {
            plant: plant.id.clone(),
            province: plant.province.clone(),
        })?;
        if plant.eligibility(measure).is_err() {
            continue;
        }
        let delta = emission_delta(measure, plant, prov)?;
        if delta.total() < 0.0 {
            let warning = InventoryWarning { plant: plant.id.clone(), measure, thg: delta.total() };
            log::warn!("{warning}");
            inv.warnings.push(warning);
        }
        inv.deltas.insert(plant.id.clone(), delta);
    }
    Ok(inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKey {
    Province,
    Company,
    CapacityClass,
}

/// Label used for inventory entries whose plant is not in the registry.
pub const UNREGISTERED: &str = "UNREGISTERED";

/// Sums per-plant deltas by province, company or capacity class.
pub fn group_totals(
    deltas: &BTreeMap<PlantId, SpeciatedMass>,
    plants: &[Plant],
    key: GroupKey,
) -> BTreeMap<String, SpeciatedMass> {
    let registry: BTreeMap<&PlantId, &Plant> = plants.iter().map(|p| (&p.id, p)).collect();
    let mut out: BTreeMap<String, SpeciatedMass> = BTreeMap::new();
    for (id, mass) in deltas {
        let label = match registry.get(id) {
            Some(p) => match key {
                GroupKey::Province => p.province.to_string(),
                GroupKey::Company => p.company.to_string(),
                GroupKey::CapacityClass => p.capacity_class().label().to_owned(),
            },
            None => UNREGISTERED.to_owned(),
        };
        *out.entry(label).or_default() += *mass;
    }
    out
}

fn invalid(entity: &str, field: &'static str, value: f64, reason: &'static str) -> InventoryError {
    InventoryError::InvalidParameter { entity: entity.to_owned(), field, value, reason }
}

fn check_nonneg(entity: &str, field: &'static str, v: f64) -> Result<(), InventoryError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(entity, field, v, "must be finite and >= 0"))
    }
}

fn check_unit(entity: &str, field: &'static str, v: f64) -> Result<(), InventoryError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(entity, field, v, "must lie in [0, 1]"))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn province(coal_hg: f64, q: f64, omega: f64) -> ProvinceParams {
        ProvinceParams {
            id: "P01".into(),
            coal_hg,
            washed_fraction: q,
            washing_removal: omega,
            release_ratio: 1.0,
        }
    }

    pub fn apcd(combo: &str, eta: f64, s: (f64, f64, f64)) -> ApcdConfig {
        ApcdConfig::new(combo, eta, Speciation::new(s.0, s.1, s.2))
    }

    pub fn plant(id: &str) -> Plant {
        Plant {
            id: id.into(),
            province: "P01".into(),
            company: "Huaneng".into(),
            capacity_mw: 200.0,
            lat: 30.0,
            lon: 110.0,
            coal_t1: 0.0,
            coal_t2: 0.0,
            power_t2: 0.0,
            ccr_t1: 312.0,
            ccr_t2: 312.0,
            apcd_t1: apcd("ESP", 0.3, (1.0, 0.0, 0.0)),
            apcd_t2: apcd("ESP", 0.3, (1.0, 0.0, 0.0)),
            release_ratio: None,
            status: PlantStatus::Active,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn sus_worked_example() {
        let prov = province(0.2, 0.5, 0.3);
        let mut p = plant("A");
        p.status = PlantStatus::Decommissioned;
        p.coal_t1 = 1.0e6;
        p.apcd_t1 = apcd("ESP", 0.9, (0.8, 0.15, 0.05));
        let m = emission_sus(&p, &prov).unwrap();
        assert!(rel(m.total(), 17_000.0) < 1e-12);
        assert!(rel(m.hg0, 13_600.0) < 1e-12);
        assert!(rel(m.hg2, 2_550.0) < 1e-12);
        assert!(rel(m.hgp, 850.0) < 1e-12);
    }

    #[test]
    fn sus_perfect_removal_and_unwashed_coal() {
        let mut p = plant("A");
        p.status = PlantStatus::Decommissioned;
        p.coal_t1 = 5.0e5;
        p.apcd_t1 = apcd("FF", 1.0, (0.5, 0.5, 0.0));
        assert_eq!(emission_sus(&p, &province(0.3, 0.4, 0.2)).unwrap(), SpeciatedMass::ZERO);

        p.apcd_t1 = apcd("FF", 0.5, (0.5, 0.5, 0.0));
        let a = emission_sus(&p, &province(0.3, 0.0, 0.9)).unwrap();
        let b = emission_sus(&p, &province(0.3, 0.0, 0.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sus_rejects_active_units() {
        let p = plant("A");
        assert!(matches!(
            emission_sus(&p, &province(0.2, 0.0, 0.0)),
            Err(InventoryError::NotEligible { measure: Measure::Sus, .. })
        ));
    }

    #[test]
    fn apcd_worked_example() {
        let mut p = plant("A");
        p.coal_t2 = 5.0e5;
        p.apcd_t1 = apcd("ESP", 0.3, (1.0, 0.0, 0.0));
        p.apcd_t2 = apcd("ESP+WFGD", 0.7, (1.0, 0.0, 0.0));
        let m = emission_delta_apcd(&p, &province(0.15, 0.0, 0.5)).unwrap();
        assert!(rel(m.total(), 30_000.0) < 1e-12);
        assert_eq!(m.hg2, 0.0);
    }

    #[test]
    fn apcd_equal_efficiency_is_zero() {
        let mut p = plant("A");
        p.coal_t2 = 5.0e5;
        p.apcd_t1 = apcd("ESP", 0.4, (0.7, 0.3, 0.0));
        p.apcd_t2 = apcd("FF", 0.4, (0.7, 0.3, 0.0));
        assert_eq!(emission_delta_apcd(&p, &province(0.15, 0.0, 0.0)).unwrap(), SpeciatedMass::ZERO);
    }

    #[test]
    fn scr_retrofit_raises_divalent_emission() {
        let mut p = plant("A");
        p.coal_t2 = 1.0e6;
        p.apcd_t1 = apcd("ESP", 0.3, (0.9, 0.1, 0.0));
        p.apcd_t2 = apcd("SCR+ESP", 0.5, (0.6, 0.4, 0.0));
        let m = emission_delta_apcd(&p, &province(0.2, 0.0, 0.0)).unwrap();
        // before: 0.7 × (0.9, 0.1); after: 0.5 × (0.6, 0.4); per 2e5 g released
        assert!(rel(m.total(), 2.0e5 * 0.2) < 1e-12);
        assert!(rel(m.hg0, 2.0e5 * 0.33) < 1e-12);
        assert!(rel(m.hg2, -2.0e5 * 0.13) < 1e-12);
        assert!(m.total() > 0.0 && m.hg2 < 0.0);
    }

    #[test]
    fn pge_worked_example() {
        let mut p = plant("A");
        p.power_t2 = 1.0e9;
        p.ccr_t1 = 312.0;
        p.ccr_t2 = 297.0;
        p.apcd_t2 = apcd("ESP+WFGD", 0.8, (0.7, 0.25, 0.05));
        assert!(rel(p.coal_saved(), 15_000.0) < 1e-12);
        let m = emission_delta_pge(&p, &province(0.2, 0.0, 0.0)).unwrap();
        assert!(rel(m.total(), 600.0) < 1e-12);
        assert!(rel(m.hg0, 420.0) < 1e-12);
    }

    #[test]
    fn pge_degenerate_inputs() {
        let mut p = plant("A");
        p.power_t2 = 1.0e9;
        assert_eq!(emission_delta_pge(&p, &province(0.2, 0.0, 0.0)).unwrap(), SpeciatedMass::ZERO);
        p.ccr_t2 = 300.0;
        p.power_t2 = 0.0;
        assert_eq!(emission_delta_pge(&p, &province(0.2, 0.0, 0.0)).unwrap(), SpeciatedMass::ZERO);
    }

    #[test]
    fn province_mismatch_is_reported() {
        let mut prov = province(0.2, 0.0, 0.0);
        prov.id = "P99".into();
        let mut p = plant("A");
        p.power_t2 = 1.0;
        assert!(matches!(emission_delta_pge(&p, &prov), Err(InventoryError::ProvinceMismatch { .. })));
    }

    #[test]
    fn plant_release_ratio_overrides_province_default() {
        let mut prov = province(0.2, 0.0, 0.0);
        prov.release_ratio = 0.5;
        let mut p = plant("A");
        p.status = PlantStatus::Decommissioned;
        p.coal_t1 = 1000.0;
        p.apcd_t1 = apcd("none", 0.0, (1.0, 0.0, 0.0));
        assert_eq!(emission_sus(&p, &prov).unwrap().total(), 100.0);
        p.release_ratio = Some(1.0);
        assert_eq!(emission_sus(&p, &prov).unwrap().total(), 200.0);
    }

    fn registry() -> (Vec<Plant>, BTreeMap<ProvinceId, ProvinceParams>) {
        let mut a = plant("A");
        a.status = PlantStatus::Decommissioned;
        a.coal_t1 = 1.0e5;
        let mut b = plant("B");
        b.coal_t2 = 2.0e5;
        b.apcd_t2 = apcd("ESP+WFGD", 0.6, (0.8, 0.2, 0.0));
        b.company = "Datang".into();
        b.capacity_mw = 600.0;
        let mut c = plant("C");
        c.power_t2 = 2.0e9;
        c.ccr_t2 = 300.0;
        c.capacity_mw = 1200.0;
        let provs = BTreeMap::from([("P01".into(), province(0.2, 0.3, 0.3))]);
        (vec![a, b, c], provs)
    }

    #[test]
    fn build_inventory_filters_by_eligibility() {
        let (plants, provs) = registry();
        assert!(build_inventory(&[], &provs, Measure::Sus).unwrap().deltas.is_empty());
        for (measure, id) in [(Measure::Sus, "A"), (Measure::Apcd, "B"), (Measure::Pge, "C")] {
            let inv = build_inventory(&plants, &provs, measure).unwrap();
            assert_eq!(inv.deltas.len(), 1, "{measure}");
            let p = plants.iter().find(|p| p.id.as_str() == id).unwrap();
            assert_eq!(inv.deltas[&p.id], emission_delta(measure, p, &provs[&p.province]).unwrap());
        }
    }

    #[test]
    fn build_inventory_errors() {
        let (mut plants, provs) = registry();
        plants.push(plants[0].clone());
        assert_eq!(
            build_inventory(&plants, &provs, Measure::Sus).unwrap_err(),
            InventoryError::DuplicatePlant("A".into())
        );
        plants.pop();
        plants[1].province = "P77".into();
        assert!(matches!(
            build_inventory(&plants, &provs, Measure::Apcd).unwrap_err(),
            InventoryError::UnknownProvince { province, .. } if province.as_str() == "P77"
        ));
    }

    #[test]
    fn negative_thg_delta_warns() {
        let (mut plants, provs) = registry();
        plants[2].ccr_t2 = 320.0;
        let inv = build_inventory(&plants, &provs, Measure::Pge).unwrap();
        assert_eq!(inv.warnings.len(), 1);
        assert!(inv.warnings[0].thg < 0.0);
    }

    #[test]
    fn capacity_classes_are_lower_inclusive() {
        assert_eq!(CapacityClass::of(99.9), CapacityClass::Below100);
        assert_eq!(CapacityClass::of(100.0), CapacityClass::From100To300);
        assert_eq!(CapacityClass::of(300.0), CapacityClass::From300To1200);
        assert_eq!(CapacityClass::of(1200.0), CapacityClass::Above1200);
        for c in CapacityClass::ALL {
            assert_eq!(CapacityClass::parse(c.label()), Some(c));
        }
    }

    #[test]
    fn group_totals_singleton_and_partition() {
        let (plants, _) = registry();
        let single = BTreeMap::from([(PlantId::from("B"), SpeciatedMass::new(1.0, 2.0, 3.0))]);
        let g = group_totals(&single, &plants, GroupKey::Company);
        assert_eq!(g.len(), 1);
        assert_eq!(g["Datang"], SpeciatedMass::new(1.0, 2.0, 3.0));

        let all: BTreeMap<PlantId, SpeciatedMass> = plants
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), SpeciatedMass::new(i as f64 + 0.5, 1.25, 0.125)))
            .collect();
        let total: SpeciatedMass = all.values().sum();
        for key in [GroupKey::Province, GroupKey::Company, GroupKey::CapacityClass] {
            let t: SpeciatedMass = group_totals(&all, &plants, key).values().sum();
            assert_eq!(t, total, "{key:?}");
        }
        let classes = group_totals(&all, &plants, GroupKey::CapacityClass);
        assert_eq!(classes.keys().cloned().collect::<Vec<_>>(), vec!["100-300", "300-1200", ">=1200"]);
    }

    #[test]
    fn speciation_must_sum_to_one() {
        assert!(apcd("X", 0.5, (0.5, 0.5, 0.0)).validate().is_ok());
        assert!(apcd("X", 0.5, (0.5, 0.5, 1e-9)).validate().is_err());
        assert!(apcd("X", 1.5, (1.0, 0.0, 0.0)).validate().is_err());
        assert!(apcd("X", 0.5, (1.2, -0.2, 0.0)).validate().is_err());
    }
}
