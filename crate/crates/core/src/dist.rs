//! Regular type laws on [0, 1] and their weighted virtual type functions.
//!
//! For a law `F` with density `f`, the virtual value is `φ^B = θ − (1−F)/f`
//! and the virtual cost is `φ^S = θ + F/f`. Given designer weights `η`, the
//! weighted versions are `η_w + η_v θ + η_r φ^k(θ)`.

use rand::Rng;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::quad::bisect;

/// Grid size used by the regularity check.
pub const REGULARITY_GRID: usize = 1001;
/// Absolute tolerance of every inverse.
pub const INVERSE_TOL: f64 = 1e-10;
/// Iteration cap of every inverse.
pub const INVERSE_MAX_ITER: usize = 200;

/// Buyer (virtual value) or seller (virtual cost) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Buyer,
    Seller,
}

#[derive(Debug, Clone)]
enum Kind {
    Uniform,
    Beta { a: f64, b: f64, law: Beta },
    Piecewise { theta: Vec<f64>, cdf: Vec<f64> },
}

/// A regular type law supported on [0, 1].
#[derive(Debug, Clone)]
pub struct TypeDistribution {
    kind: Kind,
}

impl TypeDistribution {
    pub fn uniform() -> Self {
        Self {
            kind: Kind::Uniform,
        }
    }

    /// Beta(a, b) with `a, b >= 1`, so the density is bounded.
    ///
    /// When a shape exceeds 1 the density vanishes at that end and the outer
    /// virtual function diverges there (`φ^B(0) = −∞` or `φ^S(1) = +∞`).
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(
                "beta shape",
                format!("need a, b >= 1, got ({a}, {b})"),
            ));
        }
        let law = Beta::new(a, b).map_err(|e| Error::invalid("beta shape", e.to_string()))?;
        Self::checked(Kind::Beta { a, b, law })
    }

    /// Piecewise-linear cdf through `(θ_k, F_k)` knots.
    ///
    /// Knots must start at (0, 0), end at (1, 1) and have strictly increasing
    /// `θ` and `F`; the density on each segment is its slope.
    pub fn piecewise_cdf(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("knots", "need at least two knots"));
        }
        let (t0, f0) = knots[0];
        let (t1, f1) = knots[knots.len() - 1];
        if t0 != 0.0 || f0 != 0.0 || t1 != 1.0 || f1 != 1.0 {
            return Err(Error::invalid("knots", "must run from (0,0) to (1,1)"));
        }
        for (k, w) in knots.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    format!("knots[{}].theta", k + 1),
                    "must be strictly increasing",
                ));
            }
            if !(w[1].1 > w[0].1) {
                return Err(Error::invalid(
                    format!("knots[{}].cdf", k + 1),
                    "density must be strictly positive",
                ));
            }
        }
        Self::checked(Kind::Piecewise {
            theta: knots.iter().map(|k| k.0).collect(),
            cdf: knots.iter().map(|k| k.1).collect(),
        })
    }

    fn checked(kind: Kind) -> Result<Self> {
        let d = Self { kind };
        d.check_regular()?;
        Ok(d)
    }

    fn check_regular(&self) -> Result<()> {
        let n = REGULARITY_GRID - 1;
        for side in [Side::Buyer, Side::Seller] {
            let mut prev = self.phi(side, 0.0);
            for k in 1..=n {
                let t = k as f64 / n as f64;
                let v = self.phi(side, t);
                if !(v > prev) {
                    let name = match side {
                        Side::Buyer => "virtual value",
                        Side::Seller => "virtual cost",
                    };
                    return Err(Error::invalid(
                        "distribution",
                        format!("not regular: {name} fails to increase at θ = {t}"),
                    ));
                }
                prev = v;
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, Kind::Uniform)
    }

    /// Structural equality of two laws.
    pub fn same_law(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (Kind::Uniform, Kind::Uniform) => true,
            (Kind::Beta { a, b, .. }, Kind::Beta { a: a2, b: b2, .. }) => a == a2 && b == b2,
            (
                Kind::Piecewise { theta, cdf },
                Kind::Piecewise {
                    theta: t2,
                    cdf: c2,
                },
            ) => theta == t2 && cdf == c2,
            _ => false,
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            Kind::Uniform => t,
            Kind::Beta { law, .. } => law.cdf(t),
            Kind::Piecewise { theta, cdf } => {
                let k = segment(theta, t);
                let s = (cdf[k + 1] - cdf[k]) / (theta[k + 1] - theta[k]);
                cdf[k] + s * (t - theta[k])
            }
        }
    }

    /// `1 − F(t)` without cancellation near the top.
    pub fn sf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            Kind::Uniform => 1.0 - t,
            Kind::Beta { law, .. } => law.sf(t),
            Kind::Piecewise { .. } => 1.0 - self.cdf(t),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            Kind::Uniform => 1.0,
            Kind::Beta { law, .. } => law.pdf(t),
            Kind::Piecewise { theta, cdf } => {
                let k = segment(theta, t);
                (cdf[k + 1] - cdf[k]) / (theta[k + 1] - theta[k])
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            Kind::Uniform => 0.5,
            Kind::Beta { a, b, .. } => a / (a + b),
            Kind::Piecewise { theta, cdf } => {
                // E[θ] = ∫ (1 − F)
                theta
                    .windows(2)
                    .zip(cdf.windows(2))
                    .map(|(t, c)| (t[1] - t[0]) * (1.0 - 0.5 * (c[0] + c[1])))
                    .sum()
            }
        }
    }

    /// Quantile function.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            Kind::Uniform => u,
            Kind::Piecewise { theta, cdf } => {
                let k = segment(cdf, u);
                let s = (theta[k + 1] - theta[k]) / (cdf[k + 1] - cdf[k]);
                theta[k] + s * (u - cdf[k])
            }
            Kind::Beta { .. } => bisect(|t| self.cdf(t) - u, 0.0, 1.0, 1e-13, 200),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Unweighted virtual value (`Buyer`) or virtual cost (`Seller`).
    ///
    /// Where the density vanishes at an end the function takes its limit,
    /// which is `θ` itself when the numerator vanishes and `∓∞` otherwise.
    pub fn phi(&self, side: Side, t: f64) -> f64 {
        let f = self.pdf(t);
        match side {
            Side::Buyer => {
                let s = self.sf(t);
                if s <= 0.0 {
                    t
                } else if f <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    t - s / f
                }
            }
            Side::Seller => {
                let c = self.cdf(t);
                if c <= 0.0 {
                    t
                } else if f <= 0.0 {
                    f64::INFINITY
                } else {
                    t + c / f
                }
            }
        }
    }

    /// `φ^k(θ)·f(θ)`, finite even where `φ^k` diverges.
    pub fn phi_density(&self, side: Side, t: f64) -> f64 {
        let f = self.pdf(t);
        match side {
            Side::Buyer => t * f - self.sf(t),
            Side::Seller => t * f + self.cdf(t),
        }
    }
}

fn segment(knots: &[f64], x: f64) -> usize {
    let k = knots.partition_point(|&v| v <= x);
    k.saturating_sub(1).min(knots.len() - 2)
}

/// Designer objective weights `(η_v, η_w, η_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareWeight {
    pub eta_v: f64,
    pub eta_w: f64,
    pub eta_r: f64,
}

impl WelfareWeight {
    pub fn new(eta_v: f64, eta_w: f64, eta_r: f64) -> Result<Self> {
        for (name, v) in [("eta_v", eta_v), ("eta_w", eta_w), ("eta_r", eta_r)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        let sum = eta_v + eta_w + eta_r;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "eta_v+eta_w+eta_r",
                format!("weights must sum to 1, got {sum}"),
            ));
        }
        if eta_r <= 0.0 {
            return Err(Error::invalid("eta_r", "must be strictly positive"));
        }
        Ok(Self {
            eta_v,
            eta_w,
            eta_r,
        })
    }

    /// Pure revenue maximization, `η = (0, 0, 1)`.
    pub fn revenue() -> Self {
        Self {
            eta_v: 0.0,
            eta_w: 0.0,
            eta_r: 1.0,
        }
    }
}

/// A type law paired with designer weights.
#[derive(Debug, Clone)]
pub struct WeightedVirtual {
    dist: TypeDistribution,
    eta: WelfareWeight,
}

impl WeightedVirtual {
    pub fn new(dist: TypeDistribution, eta: WelfareWeight) -> Self {
        Self { dist, eta }
    }

    pub fn dist(&self) -> &TypeDistribution {
        &self.dist
    }

    pub fn eta(&self) -> WelfareWeight {
        self.eta
    }

    /// `η_w + η_v θ + η_r φ^side(θ)`.
    pub fn value(&self, side: Side, t: f64) -> f64 {
        let e = &self.eta;
        if self.dist.is_uniform() {
            let phi = match side {
                Side::Buyer => 2.0 * t - 1.0,
                Side::Seller => 2.0 * t,
            };
            return e.eta_w + e.eta_v * t + e.eta_r * phi;
        }
        e.eta_w + e.eta_v * t + e.eta_r * self.dist.phi(side, t)
    }

    /// Weighted virtual function times the density.
    pub fn value_density(&self, side: Side, t: f64) -> f64 {
        let e = &self.eta;
        let f = self.dist.pdf(t);
        (e.eta_w + e.eta_v * t) * f + e.eta_r * self.dist.phi_density(side, t)
    }

    pub fn range(&self, side: Side) -> (f64, f64) {
        (self.value(side, 0.0), self.value(side, 1.0))
    }

    /// `θ^side(y)`, the type whose weighted virtual function equals `y`.
    pub fn inverse(&self, side: Side, y: f64) -> Result<f64> {
        let (lo, hi) = self.range(side);
        if !(y >= lo && y <= hi) {
            return Err(Error::Range { y, lo, hi });
        }
        Ok(self.solve(side, y))
    }

    /// Inverse with range clamping: 0 below the range, 1 above it.
    pub fn inverse_clamped(&self, side: Side, y: f64) -> f64 {
        let (lo, hi) = self.range(side);
        if y <= lo {
            0.0
        } else if y >= hi {
            1.0
        } else {
            self.solve(side, y)
        }
    }

    fn solve(&self, side: Side, y: f64) -> f64 {
        if self.dist.is_uniform() {
            // linear: η_w + η_v θ + η_r(2θ − [B])
            let e = &self.eta;
            let shift = match side {
                Side::Buyer => -e.eta_r,
                Side::Seller => 0.0,
            };
            let t = (y - e.eta_w - shift) / (e.eta_v + 2.0 * e.eta_r);
            return t.clamp(0.0, 1.0);
        }
        bisect(
            |t| self.value(side, t) - y,
            0.0,
            1.0,
            INVERSE_TOL,
            INVERSE_MAX_ITER,
        )
    }

    /// `P^side(z) = F(θ^side(z))` with clamping, i.e. `Pr(φ^side_η(θ) ≤ z)`.
    pub fn band_cdf(&self, side: Side, z: f64) -> f64 {
        let (lo, hi) = self.range(side);
        if z < lo {
            0.0
        } else if z >= hi {
            1.0
        } else {
            self.dist.cdf(self.solve(side, z))
        }
    }

    /// Lower end of the ironing bracket, `max(0, φ^B_η(0))`.
    pub fn z_min(&self) -> f64 {
        self.value(Side::Buyer, 0.0).max(0.0)
    }

    /// Upper end of the ironing bracket, `φ^S_η(1)` (may be infinite).
    pub fn z_max(&self) -> f64 {
        self.value(Side::Seller, 1.0)
    }
}

fn check_type(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "type",
            value: t,
        })
    }
}

/// `φ^B(θ)`.
pub fn virtual_value(d: &TypeDistribution, t: f64) -> Result<f64> {
    check_type(t)?;
    Ok(d.phi(Side::Buyer, t))
}

/// `φ^S(θ)`.
pub fn virtual_cost(d: &TypeDistribution, t: f64) -> Result<f64> {
    check_type(t)?;
    Ok(d.phi(Side::Seller, t))
}

/// `η_w + η_v θ + η_r φ^side(θ)`.
pub fn weighted_virtual(d: &TypeDistribution, eta: WelfareWeight, t: f64, side: Side) -> Result<f64> {
    check_type(t)?;
    Ok(WeightedVirtual::new(d.clone(), eta).value(side, t))
}

/// `(φ^side_η)^{-1}(y)`.
pub fn inverse_weighted(d: &TypeDistribution, eta: WelfareWeight, y: f64, side: Side) -> Result<f64> {
    WeightedVirtual::new(d.clone(), eta).inverse(side, y)
}
