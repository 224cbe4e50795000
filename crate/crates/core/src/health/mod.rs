//! Health endpoints from intake changes, and source attribution of benefits.
//!
//! Intake change maps to hair mercury through `k`; hair mercury maps to foetal
//! IQ through `γ` and to fatal heart attacks through `β`. All coefficients
//! are configuration. Positive values are avoided harm.

mod attribution;

pub use attribution::{
    attribute, group_by_source, rank_report, AttributionEntry, AttributionKey, AttributionTensor, GroupedInventory,
    Impact, ImpactModel, MeasureShare, RankReport, Ranked, SourceGroup,
};

use crate::config::{ConfigError, KeyValueConfig};
use crate::exposure::{ExposureError, IntakeProfile};
use crate::ids::ProvinceId;
use crate::transport::TransportError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HealthError {
    #[error("unknown cardiovascular dose-response form '{0}' (expected linear or log-linear)")]
    UnknownForm(String),
    #[error("no {what} configured for province {province}")]
    MissingBaseline { province: ProvinceId, what: &'static str },
    #[error("coefficient {name} = {value} must be finite and >= 0")]
    InvalidCoefficient { name: String, value: f64 },
    #[error("source groups do not partition the inventory: {0}")]
    Partition(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvdForm {
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "log-linear")]
    LogLinear,
}

impl CvdForm {
    pub fn parse(s: &str) -> Result<Self, HealthError> {
        match s.trim() {
            "linear" => Ok(CvdForm::Linear),
            "log-linear" => Ok(CvdForm::LogLinear),
            other => Err(HealthError::UnknownForm(other.to_owned())),
        }
    }
}

impl fmt::Display for CvdForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvdForm::Linear => "linear",
            CvdForm::LogLinear => "log-linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponse {
    /// Hair mercury per unit intake, (µg/g hair) per (µg/kg-bw/day).
    pub hair_per_intake: f64,
    /// IQ points per µg/g hair.
    pub iq_slope: f64,
    pub cvd_form: CvdForm,
    /// Fatal heart attack risk slope per µg/g hair.
    pub cvd_beta: f64,
    /// Fatal heart attacks per year.
    pub baseline_mortality: BTreeMap<ProvinceId, f64>,
    /// Baseline hair mercury, µg/g.
    pub baseline_hair: BTreeMap<ProvinceId, f64>,
}

impl DoseResponse {
    /// Reads `hair_per_intake`, `iq_slope`, `cvd_form`, `cvd_beta` and
    /// per-province `baseline_mortality.<id>` / `baseline_hair.<id>` keys.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self, HealthError> {
        let per_province = |prefix: &str| -> Result<BTreeMap<ProvinceId, f64>, HealthError> {
            cfg.with_prefix(prefix)
                .map(|(p, v, line)| {
                    v.parse::<f64>()
                        .map(|x| (ProvinceId::from(p), x))
                        .map_err(|e| ConfigError { line, message: format!("{prefix}.{p}: {e}") }.into())
                })
                .collect()
        };
        let dr = Self {
            baseline_mortality: per_province("baseline_mortality")?,
            baseline_hair: per_province("baseline_hair")?,
            hair_per_intake: cfg.number("hair_per_intake")?,
            iq_slope: cfg.number("iq_slope")?,
            cvd_form: CvdForm::parse(cfg.raw("cvd_form").ok_or(ConfigError { line: 0, message: "missing key 'cvd_form'".into() })?)?,
            cvd_beta: cfg.number("cvd_beta")?,
        };
        dr.validate()?;
        Ok(dr)
    }

    pub fn validate(&self) -> Result<(), HealthError> {
        let check = |name: String, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(HealthError::InvalidCoefficient { name, value })
            }
        };
        check("hair_per_intake".into(), self.hair_per_intake)?;
        check("iq_slope".into(), self.iq_slope)?;
        check("cvd_beta".into(), self.cvd_beta)?;
        for (p, v) in &self.baseline_mortality {
            check(format!("baseline_mortality.{p}"), *v)?;
        }
        for (p, v) in &self.baseline_hair {
            check(format!("baseline_hair.{p}"), *v)?;
        }
        Ok(())
    }

    /// Checks that every province has the baselines its form needs.
    pub fn covers(&self, provinces: &[ProvinceId]) -> Result<(), HealthError> {
        for p in provinces {
            if !self.baseline_mortality.contains_key(p) {
                return Err(HealthError::MissingBaseline { province: p.clone(), what: "baseline_mortality" });
            }
            if self.cvd_form == CvdForm::LogLinear && !self.baseline_hair.contains_key(p) {
                return Err(HealthError::MissingBaseline { province: p.clone(), what: "baseline_hair" });
            }
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        let mut out = String::from("# dose-response coefficients\n");
        out += &format!("hair_per_intake = {}  # (ug/g hair) per (ug/kg-bw/day)\n", self.hair_per_intake);
        out += &format!("iq_slope = {}  # IQ points per ug/g hair\n", self.iq_slope);
        out += &format!("cvd_form = {}  # linear | log-linear\n", self.cvd_form);
        out += &format!("cvd_beta = {}  # per ug/g hair\n", self.cvd_beta);
        for (p, v) in &self.baseline_mortality {
            out += &format!("baseline_mortality.{p} = {v}  # deaths/yr\n");
        }
        for (p, v) in &self.baseline_hair {
            out += &format!("baseline_hair.{p} = {v}  # ug/g\n");
        }
        out
    }

    fn mortality(&self, p: &ProvinceId) -> Result<f64, HealthError> {
        self.baseline_mortality
            .get(p)
            .copied()
            .ok_or_else(|| HealthError::MissingBaseline { province: p.clone(), what: "baseline_mortality" })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IqOutcome {
    /// IQ points per foetus.
    pub per_foetus: f64,
    /// IQ points summed over a year's births.
    pub total: f64,
}

/// `ΔIQ_per_foetus = γ k ΔEDI`, `ΔIQ_total = ΔIQ_per_foetus × births`.
pub fn iq_endpoint(
    delta_edi: &BTreeMap<ProvinceId, f64>,
    dr: &DoseResponse,
    intake: &IntakeProfile,
) -> Result<BTreeMap<ProvinceId, IqOutcome>, HealthError> {
    delta_edi
        .iter()
        .map(|(p, &e)| {
            let births = intake
                .births_of(p)
                .ok_or_else(|| HealthError::MissingBaseline { province: p.clone(), what: "births" })?;
            let per_foetus = dr.iq_slope * dr.hair_per_intake * e;
            Ok((p.clone(), IqOutcome { per_foetus, total: per_foetus * births }))
        })
        .collect()
}

/// Avoided fatal heart attacks per year.
///
/// Linear: `M β k ΔEDI`. Log-linear: `M (1 − exp(−β k ΔEDI))`, which never
/// exceeds the linear value for positive intake changes and stays within
/// `[0, M]`.
pub fn cvd_endpoint(delta_edi: &BTreeMap<ProvinceId, f64>, dr: &DoseResponse) -> Result<BTreeMap<ProvinceId, f64>, HealthError> {
    delta_edi
        .iter()
        .map(|(p, &e)| {
            let m = dr.mortality(p)?;
            let x = dr.cvd_beta * dr.hair_per_intake * e;
            let deaths = match dr.cvd_form {
                CvdForm::Linear => x * m,
                CvdForm::LogLinear => {
                    if !dr.baseline_hair.contains_key(p) {
                        return Err(HealthError::MissingBaseline { province: p.clone(), what: "baseline_hair" });
                    }
                    -m * (-x).exp_m1()
                }
            };
            Ok((p.clone(), deaths))
        })
        .collect()
}

/// Derivative of [`cvd_endpoint`] at zero intake change, applied to `delta_edi`.
/// Identical to the linear form; used for marginal attribution.
pub fn cvd_marginal(delta_edi: &BTreeMap<ProvinceId, f64>, dr: &DoseResponse) -> Result<BTreeMap<ProvinceId, f64>, HealthError> {
    delta_edi
        .iter()
        .map(|(p, &e)| Ok((p.clone(), dr.mortality(p)? * dr.cvd_beta * dr.hair_per_intake * e)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvinceOutcome {
    pub iq_per_foetus: f64,
    pub iq_total: f64,
    /// Avoided fatal heart attacks per year.
    pub deaths: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HealthOutcome {
    pub by_province: BTreeMap<ProvinceId, ProvinceOutcome>,
    /// Births-weighted mean of provincial per-foetus values.
    pub national_iq_per_foetus: f64,
}

impl HealthOutcome {
    pub fn evaluate(delta_edi: &BTreeMap<ProvinceId, f64>, dr: &DoseResponse, intake: &IntakeProfile) -> Result<Self, HealthError> {
        let iq = iq_endpoint(delta_edi, dr, intake)?;
        let deaths = cvd_endpoint(delta_edi, dr)?;
        let mut births = 0.0;
        let mut iq_total = 0.0;
        let mut by_province = BTreeMap::new();
        for (p, q) in &iq {
            births += intake.births_of(p).unwrap_or(0.0);
            iq_total += q.total;
            by_province.insert(
                p.clone(),
                ProvinceOutcome { iq_per_foetus: q.per_foetus, iq_total: q.total, deaths: deaths[p] },
            );
        }
        let national_iq_per_foetus = if births > 0.0 { iq_total / births } else { 0.0 };
        Ok(Self { by_province, national_iq_per_foetus })
    }

    pub fn total_deaths(&self) -> f64 {
        self.by_province.values().map(|o| o.deaths).sum()
    }

    pub fn total_iq(&self) -> f64 {
        self.by_province.values().map(|o| o.iq_total).sum()
    }
}
