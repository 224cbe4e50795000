//! Speciated mercury masses.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// The three airborne mercury species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Species {
    /// Elemental Hg⁰.
    Hg0,
    /// Divalent Hg²⁺.
    Hg2,
    /// Particulate-bound Hg_p.
    HgP,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Hg0, Species::Hg2, Species::HgP];

    pub fn label(self) -> &'static str {
        match self {
            Species::Hg0 => "hg0",
            Species::Hg2 => "hg2",
            Species::HgP => "hgp",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A (Hg⁰, Hg²⁺, Hg_p) triple in grams.
///
/// Components are nonnegative for absolute emissions; a delta may carry
/// negative components (an SCR retrofit raises Hg²⁺ while lowering THg).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeciatedMass {
    pub hg0: f64,
    pub hg2: f64,
    pub hgp: f64,
}

impl SpeciatedMass {
    pub const ZERO: SpeciatedMass = SpeciatedMass { hg0: 0.0, hg2: 0.0, hgp: 0.0 };

    pub fn new(hg0: f64, hg2: f64, hgp: f64) -> Self {
        Self { hg0, hg2, hgp }
    }

    /// Total mercury.
    pub fn total(&self) -> f64 {
        self.hg0 + self.hg2 + self.hgp
    }

    pub fn get(&self, species: Species) -> f64 {
        match species {
            Species::Hg0 => self.hg0,
            Species::Hg2 => self.hg2,
            Species::HgP => self.hgp,
        }
    }

    pub fn get_mut(&mut self, species: Species) -> &mut f64 {
        match species {
            Species::Hg0 => &mut self.hg0,
            Species::Hg2 => &mut self.hg2,
            Species::HgP => &mut self.hgp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hg0.is_finite() && self.hg2.is_finite() && self.hgp.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.hg0 == 0.0 && self.hg2 == 0.0 && self.hgp == 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        *self * factor
    }
}

impl Add for SpeciatedMass {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.hg0 + rhs.hg0, self.hg2 + rhs.hg2, self.hgp + rhs.hgp)
    }
}

impl AddAssign for SpeciatedMass {
    fn add_assign(&mut self, rhs: Self) {
        self.hg0 += rhs.hg0;
        self.hg2 += rhs.hg2;
        self.hgp += rhs.hgp;
    }
}

impl Sub for SpeciatedMass {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.hg0 - rhs.hg0, self.hg2 - rhs.hg2, self.hgp - rhs.hgp)
    }
}

impl SubAssign for SpeciatedMass {
    fn sub_assign(&mut self, rhs: Self) {
        self.hg0 -= rhs.hg0;
        self.hg2 -= rhs.hg2;
        self.hgp -= rhs.hgp;
    }
}

impl Neg for SpeciatedMass {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.hg0, -self.hg2, -self.hgp)
    }
}

impl Mul<f64> for SpeciatedMass {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.hg0 * rhs, self.hg2 * rhs, self.hgp * rhs)
    }
}

impl Sum for SpeciatedMass {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, m| acc + m)
    }
}

impl<'a> Sum<&'a SpeciatedMass> for SpeciatedMass {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, m| acc + *m)
    }
}
