//! Deposition change → food MeHg change → trade mixing → daily intake.
//!
//! Every stage is linear, so the whole chain is a province × province matrix
//! ([`ExposureChain::operator_matrix`]) that the staged functions must agree
//! with.

use crate::ids::{Category, ProvinceId};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Tolerance on producer shares summing to one per consumer and category.
pub const SHARE_SUM_TOL: f64 = 1e-9;

/// Producer label for imports from outside the modelled provinces.
pub const FOREIGN: &str = "FOREIGN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExposureError {
    #[error("province {0} has a deposition change but zero baseline deposition")]
    ZeroBaseline(ProvinceId),
    #[error("province {0} is not part of the exposure tables")]
    UnknownProvince(ProvinceId),
    #[error("category {category}, consumer {consumer}: producer shares sum to {sum}")]
    ShareSum { category: Category, consumer: ProvinceId, sum: f64 },
    #[error("category {category}, consumer {consumer}: negative share {share} from {producer}")]
    NegativeShare { category: Category, consumer: ProvinceId, producer: String, share: f64 },
    #[error("province {0}: body weight must be > 0")]
    BodyWeight(ProvinceId),
    #[error("{0}")]
    Misaligned(String),
    #[error("{what} for {province}/{category} must be finite and >= 0, got {value}")]
    InvalidValue { what: &'static str, province: ProvinceId, category: Category, value: f64 },
}

/// Dense province × category table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub provinces: Vec<ProvinceId>,
    pub categories: Vec<Category>,
    /// Row-major by province.
    pub values: Vec<f64>,
}

impl CategoryTable {
    pub fn zeros(provinces: &[ProvinceId], categories: &[Category]) -> Self {
        Self {
            provinces: provinces.to_vec(),
            categories: categories.to_vec(),
            values: vec![0.0; provinces.len() * categories.len()],
        }
    }

    pub fn get(&self, p: usize, f: usize) -> f64 {
        self.values[p * self.categories.len() + f]
    }

    pub fn set(&mut self, p: usize, f: usize, v: f64) {
        let nf = self.categories.len();
        self.values[p * nf + f] = v;
    }

    pub fn lookup(&self, province: &ProvinceId, category: &Category) -> Option<f64> {
        let p = self.provinces.binary_search(province).ok()?;
        let f = self.categories.iter().position(|c| c == category)?;
        Some(self.get(p, f))
    }

    fn same_axes(&self, other: &CategoryTable) -> bool {
        self.provinces == other.provinces && self.categories == other.categories
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ProvinceId, &Category, f64)> + '_ {
        self.provinces.iter().enumerate().flat_map(move |(p, pid)| {
            self.categories.iter().enumerate().map(move |(f, c)| (pid, c, self.get(p, f)))
        })
    }
}

/// Baseline food MeHg and baseline THg deposition per province.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodBaseline {
    /// MeHg concentration, µg/kg.
    pub concentration: CategoryTable,
    /// Baseline THg deposition aligned with `concentration.provinces`, g/yr.
    pub deposition: Vec<f64>,
}

/// Interprovincial trade: for each category, the share of consumer `i`'s
/// supply produced in province `j`; the last producer column is foreign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeShares {
    pub provinces: Vec<ProvinceId>,
    pub categories: Vec<Category>,
    /// `shares[f][(i, j)]`, `j == provinces.len()` being foreign supply.
    pub shares: Vec<DMatrix<f64>>,
}

impl TradeShares {
    /// Every consumer eats only its own production.
    pub fn local(provinces: &[ProvinceId], categories: &[Category]) -> Self {
        let n = provinces.len();
        let shares = categories
            .iter()
            .map(|_| DMatrix::from_fn(n, n + 1, |i, j| if i == j { 1.0 } else { 0.0 }))
            .collect();
        Self { provinces: provinces.to_vec(), categories: categories.to_vec(), shares }
    }

    pub fn validate(&self) -> Result<(), ExposureError> {
        let n = self.provinces.len();
        if self.shares.len() != self.categories.len() {
            return Err(ExposureError::Misaligned("one share matrix per category required".into()));
        }
        for (f, m) in self.shares.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n + 1 {
                return Err(ExposureError::Misaligned(format!("share matrix for {} must be {n}x{}", self.categories[f], n + 1)));
            }
            for i in 0..n {
                for j in 0..=n {
                    let s = m[(i, j)];
                    if !(s >= 0.0 && s.is_finite()) {
                        return Err(ExposureError::NegativeShare {
                            category: self.categories[f].clone(),
                            consumer: self.provinces[i].clone(),
                            producer: self.provinces.get(j).map_or(FOREIGN.to_owned(), ToString::to_string),
                            share: s,
                        });
                    }
                }
                let sum: f64 = m.row(i).iter().sum();
                if (sum - 1.0).abs() > SHARE_SUM_TOL {
                    return Err(ExposureError::ShareSum {
                        category: self.categories[f].clone(),
                        consumer: self.provinces[i].clone(),
                        sum,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Diet and demography per province.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeProfile {
    /// Intake rate, kg per person per day.
    pub intake: CategoryTable,
    /// Body weight, kg, aligned with `intake.provinces`.
    pub body_weight: Vec<f64>,
    pub population: Vec<f64>,
    /// Births per year.
    pub births: Vec<f64>,
}

impl IntakeProfile {
    pub fn births_of(&self, province: &ProvinceId) -> Option<f64> {
        self.intake.provinces.binary_search(province).ok().map(|p| self.births[p])
    }
}

/// Food concentration change proportional to the provincial deposition change:
/// `ΔC(p, f) = C_base(p, f) × ΔD(p) / D_base(p)`.
///
/// Provinces absent from `dep_delta` have no change.
pub fn food_delta(dep_delta: &BTreeMap<ProvinceId, f64>, baseline: &FoodBaseline) -> Result<CategoryTable, ExposureError> {
    let base = &baseline.concentration;
    let mut out = CategoryTable::zeros(&base.provinces, &base.categories);
    for (pid, &dd) in dep_delta {
        let p = base.provinces.binary_search(pid).map_err(|_| ExposureError::UnknownProvince(pid.clone()))?;
        if dd == 0.0 {
            continue;
        }
        let d0 = baseline.deposition[p];
        if d0 == 0.0 {
            return Err(ExposureError::ZeroBaseline(pid.clone()));
        }
        let ratio = dd / d0;
        for f in 0..base.categories.len() {
            out.set(p, f, base.get(p, f) * ratio);
        }
    }
    Ok(out)
}

/// `ΔC_cons(i, f) = Σ_j share(j → i, f) × ΔC_prod(j, f)`; foreign supply
/// carries no change.
pub fn trade_mix(producer: &CategoryTable, trade: &TradeShares) -> Result<CategoryTable, ExposureError> {
    if producer.provinces != trade.provinces || producer.categories != trade.categories {
        return Err(ExposureError::Misaligned("trade shares and concentration table disagree on axes".into()));
    }
    let n = producer.provinces.len();
    let mut out = CategoryTable::zeros(&producer.provinces, &producer.categories);
    for (f, m) in trade.shares.iter().enumerate() {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m[(i, j)] * producer.get(j, f);
            }
            out.set(i, f, acc);
        }
    }
    Ok(out)
}

/// `ΔEDI(i) = Σ_f ΔC_cons(i, f) × IR(i, f) / BW(i)`, µg per kg body weight per day.
pub fn edi(consumer: &CategoryTable, intake: &IntakeProfile) -> Result<BTreeMap<ProvinceId, f64>, ExposureError> {
    if !consumer.same_axes(&intake.intake) {
        return Err(ExposureError::Misaligned("intake table and concentration table disagree on axes".into()));
    }
    let nf = consumer.categories.len();
    let mut out = BTreeMap::new();
    for (p, pid) in consumer.provinces.iter().enumerate() {
        let bw = intake.body_weight[p];
        if !(bw > 0.0) {
            return Err(ExposureError::BodyWeight(pid.clone()));
        }
        let mut acc = 0.0;
        for f in 0..nf {
            acc += consumer.get(p, f) * intake.intake.get(p, f);
        }
        out.insert(pid.clone(), acc / bw);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureState {
    pub producer_delta: CategoryTable,
    pub consumer_delta: CategoryTable,
    pub delta_edi: BTreeMap<ProvinceId, f64>,
}

/// Validated, axis-aligned exposure inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureChain {
    pub baseline: FoodBaseline,
    pub trade: TradeShares,
    pub intake: IntakeProfile,
}

impl ExposureChain {
    pub fn new(baseline: FoodBaseline, trade: TradeShares, intake: IntakeProfile) -> Result<Self, ExposureError> {
        let axes = &baseline.concentration;
        if axes.provinces.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExposureError::Misaligned("provinces must be sorted and unique".into()));
        }
        if trade.provinces != axes.provinces || trade.categories != axes.categories || !axes.same_axes(&intake.intake) {
            return Err(ExposureError::Misaligned("baseline, trade and intake tables must share provinces and categories".into()));
        }
        let n = axes.provinces.len();
        if baseline.deposition.len() != n || intake.body_weight.len() != n || intake.population.len() != n || intake.births.len() != n {
            return Err(ExposureError::Misaligned("per-province vectors must match the province list".into()));
        }
        for (what, table) in [("baseline concentration", axes), ("intake rate", &intake.intake)] {
            if let Some((p, c, v)) = table.iter().find(|(_, _, v)| !(v.is_finite() && *v >= 0.0)) {
                return Err(ExposureError::InvalidValue { what, province: p.clone(), category: c.clone(), value: v });
            }
        }
        for (p, &bw) in intake.body_weight.iter().enumerate() {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(ExposureError::BodyWeight(axes.provinces[p].clone()));
            }
        }
        trade.validate()?;
        Ok(Self { baseline, trade, intake })
    }

    pub fn provinces(&self) -> &[ProvinceId] {
        &self.baseline.concentration.provinces
    }

    pub fn categories(&self) -> &[Category] {
        &self.baseline.concentration.categories
    }

    pub fn propagate(&self, dep_delta: &BTreeMap<ProvinceId, f64>) -> Result<ExposureState, ExposureError> {
        let producer_delta = food_delta(dep_delta, &self.baseline)?;
        let consumer_delta = trade_mix(&producer_delta, &self.trade)?;
        let delta_edi = edi(&consumer_delta, &self.intake)?;
        Ok(ExposureState { producer_delta, consumer_delta, delta_edi })
    }

    /// ΔEDI = M · ΔD composed from the three stage matrices.
    ///
    /// Provinces with zero baseline deposition get a zero column.
    pub fn operator_matrix(&self) -> DMatrix<f64> {
        let n = self.provinces().len();
        let nf = self.categories().len();
        let base = &self.baseline.concentration;
        let food = DMatrix::from_fn(n * nf, n, |row, p| {
            let (q, f) = (row / nf, row % nf);
            let d0 = self.baseline.deposition[p];
            if q == p && d0 != 0.0 {
                base.get(p, f) / d0
            } else {
                0.0
            }
        });
        let trade = DMatrix::from_fn(n * nf, n * nf, |row, col| {
            let (i, f) = (row / nf, row % nf);
            let (j, g) = (col / nf, col % nf);
            if f == g {
                self.trade.shares[f][(i, j)]
            } else {
                0.0
            }
        });
        let intake = DMatrix::from_fn(n, n * nf, |i, col| {
            let (j, f) = (col / nf, col % nf);
            if i == j {
                self.intake.intake.get(i, f) / self.intake.body_weight[i]
            } else {
                0.0
            }
        });
        intake * trade * food
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn provinces(n: usize) -> Vec<ProvinceId> {
        (1..=n).map(|k| ProvinceId::new(format!("P{k:02}"))).collect()
    }

    pub fn categories(n: usize) -> Vec<Category> {
        (1..=n).map(|k| Category::new(format!("food{k:02}"))).collect()
    }

    /// Deterministic but irregular exposure chain.
    pub fn chain(np: usize, nf: usize) -> ExposureChain {
        let ps = provinces(np);
        let cs = categories(nf);
        let mut conc = CategoryTable::zeros(&ps, &cs);
        let mut intake = CategoryTable::zeros(&ps, &cs);
        for p in 0..np {
            for f in 0..nf {
                conc.set(p, f, 1.0 + ((p * 7 + f * 3) % 11) as f64);
                intake.set(p, f, 0.01 * (1 + (p + 2 * f) % 5) as f64);
            }
        }
        let mut trade = TradeShares::local(&ps, &cs);
        for (f, m) in trade.shares.iter_mut().enumerate() {
            for i in 0..np {
                let local = 0.5 + 0.05 * ((i + f) % 5) as f64;
                m.row_mut(i).fill(0.0);
                m[(i, i)] = local;
                m[(i, (i + 1) % np)] += 0.6 * (1.0 - local);
                m[(i, np)] = 0.4 * (1.0 - local);
            }
        }
        ExposureChain::new(
            FoodBaseline { concentration: conc, deposition: (0..np).map(|p| 1.0e5 * (p + 1) as f64).collect() },
            trade,
            IntakeProfile {
                intake,
                body_weight: (0..np).map(|p| 55.0 + p as f64).collect(),
                population: vec![1.0e7; np],
                births: vec![1.0e5; np],
            },
        )
        .unwrap()
    }
}
