//! Ironed scoring rules.
//!
//! A rule with ironing level `z` scores a type with the weighted virtual cost
//! below the tie band `[θ^S_η(z), θ^B_η(z)]`, with `z` on the band, and with
//! the weighted virtual value above it.

use crate::dist::{Side, TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson_pieces, breakpoints};

/// Absolute tolerance of the critical-type quadrature.
pub const CRITICAL_TYPE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ScoringRule {
    vf: WeightedVirtual,
    z: f64,
    band: (f64, f64),
}

impl ScoringRule {
    pub fn new(dist: TypeDistribution, eta: WelfareWeight, z: f64) -> Result<Self> {
        Self::from_virtual(WeightedVirtual::new(dist, eta), z)
    }

    pub fn from_virtual(vf: WeightedVirtual, z: f64) -> Result<Self> {
        let (lo, hi) = (vf.z_min(), vf.z_max());
        if !(z >= lo - 1e-12 && z <= hi + 1e-12) || z.is_nan() {
            return Err(Error::invalid(
                "z",
                format!("ironing level {z} outside [{lo}, {hi}]"),
            ));
        }
        let z = z.clamp(lo, hi);
        let band = (
            vf.inverse_clamped(Side::Seller, z),
            vf.inverse_clamped(Side::Buyer, z),
        );
        Ok(Self { vf, z, band })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn virtual_fns(&self) -> &WeightedVirtual {
        &self.vf
    }

    pub fn dist(&self) -> &TypeDistribution {
        self.vf.dist()
    }

    pub fn eta(&self) -> WelfareWeight {
        self.vf.eta()
    }

    /// The ironed score `g(θ)`.
    pub fn score(&self, t: f64) -> f64 {
        if t < self.band.0 {
            self.vf.value(Side::Seller, t)
        } else if t <= self.band.1 {
            self.z
        } else {
            self.vf.value(Side::Buyer, t)
        }
    }

    /// `(θ^S_η(z), θ^B_η(z))`, clamped to [0, 1].
    pub fn tie_interval(&self) -> (f64, f64) {
        self.band
    }

    /// Score times density; finite even where the score diverges.
    pub fn score_density(&self, t: f64) -> f64 {
        if t < self.band.0 {
            self.vf.value_density(Side::Seller, t)
        } else if t <= self.band.1 {
            self.z * self.dist().pdf(t)
        } else {
            self.vf.value_density(Side::Buyer, t)
        }
    }

    /// `θ̂(z) = E[g(θ) − η_w − η_v θ] / η_r`, clamped to [0, 1].
    pub fn critical_type(&self) -> f64 {
        let eta = self.eta();
        let breaks = breakpoints(0.0, 1.0, [self.band.0, self.band.1]);
        let eg = adaptive_simpson_pieces(|t| self.score_density(t), &breaks, CRITICAL_TYPE_TOL);
        let v = (eg - eta.eta_w - eta.eta_v * self.dist().mean()) / eta.eta_r;
        v.clamp(0.0, 1.0)
    }

    /// `(P^S_η(z), P^B_η(z))` for this rule's type law.
    pub fn band_prob(&self, z: f64) -> (f64, f64) {
        (
            self.vf.band_cdf(Side::Seller, z),
            self.vf.band_cdf(Side::Buyer, z),
        )
    }

    /// `Pr(g(θ) < u)`.
    pub fn prob_score_below(&self, u: f64) -> f64 {
        if u <= self.z {
            self.vf.band_cdf(Side::Seller, u)
        } else {
            self.vf.band_cdf(Side::Buyer, u)
        }
    }

    /// `Pr(g(θ) ≤ u)`.
    pub fn prob_score_at_most(&self, u: f64) -> f64 {
        if u < self.z {
            self.vf.band_cdf(Side::Seller, u)
        } else {
            self.vf.band_cdf(Side::Buyer, u)
        }
    }

    /// Types whose score equals `u` at a single point, if any: the inverse of
    /// the strictly increasing part of the score.
    pub fn type_at_score(&self, u: f64) -> Option<f64> {
        let (lo_s, _) = self.vf.range(Side::Seller);
        let (_, hi_b) = self.vf.range(Side::Buyer);
        if u < self.z && u >= lo_s {
            Some(self.vf.inverse_clamped(Side::Seller, u).min(self.band.0))
        } else if u > self.z && u <= hi_b {
            Some(self.vf.inverse_clamped(Side::Buyer, u).max(self.band.1))
        } else {
            None
        }
    }
}

/// `(P^S_η(z), P^B_η(z))` for the opponent's rule.
pub fn band_prob(opponent: &ScoringRule, z: f64) -> (f64, f64) {
    opponent.band_prob(z)
}
