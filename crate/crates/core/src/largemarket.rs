//! Large-market limit: selling, exchange and buying markets.
//!
//! As `N → ∞` in the symmetric i.i.d. model, merchants with `θ < p_S` sell
//! their data at the posted price `p_S = (φ^S_η)^{-1}(1)` per unit of CTR,
//! the rest swap their data for CTR-1 ads worth their outside option, and
//! the residual customers go to top types at `p_B = 1`.

use rayon::prelude::*;

use crate::continuum::{solve_symmetric, symmetric_clicks, symmetric_resolution, CtrLaw};
use crate::dist::{Side, TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::interim::{uniform_grid, worst_off_type, InterimCurve, MerchantInterim};
use crate::quad::{adaptive_simpson, breakpoints, composite, gl16};
use crate::scoring::ScoringRule;

/// Smallest revenue weight accepted.
pub const MIN_ETA_R: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LargeMarketConfig {
    pub dist: TypeDistribution,
    pub eta: WelfareWeight,
    /// Surplus weights `(ζ_w, ζ_v)`.
    pub zeta: (f64, f64),
    /// `μ̄ = E_{μ_i}[ω_i]`.
    pub mean_ctr: f64,
}

impl LargeMarketConfig {
    pub fn new(dist: TypeDistribution, eta: WelfareWeight, zeta: (f64, f64), mean_ctr: f64) -> Result<Self> {
        if eta.eta_r < MIN_ETA_R {
            return Err(Error::invalid(
                "eta_r",
                format!("must be at least {MIN_ETA_R}, got {}", eta.eta_r),
            ));
        }
        if !(zeta.0 >= 0.0 && zeta.1 >= 0.0 && zeta.0 + zeta.1 > 0.0) {
            return Err(Error::invalid("zeta", "weights must be nonnegative and not both zero"));
        }
        if !(0.0..=1.0).contains(&mean_ctr) {
            return Err(Error::Domain {
                what: "mean CTR",
                value: mean_ctr,
            });
        }
        Ok(Self {
            dist,
            eta,
            zeta,
            mean_ctr,
        })
    }

    /// Uniform types, `η = (1 − η_r, 0, η_r)`, `ζ = (0, 1)`.
    pub fn uniform(eta_r: f64, mean_ctr: f64) -> Result<Self> {
        let eta = WelfareWeight::new(1.0 - eta_r, 0.0, eta_r)?;
        Self::new(TypeDistribution::uniform(), eta, (0.0, 1.0), mean_ctr)
    }

    fn virtuals(&self) -> WeightedVirtual {
        WeightedVirtual::new(self.dist.clone(), self.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeMarketDesign {
    /// Selling-market posted price.
    pub p_s: f64,
    /// Buying-market price.
    pub p_b: f64,
    /// Bid-ask benchmark price; `None` when `μ̄ = 0`.
    pub p_tilde: Option<f64>,
    /// `1/μ̄` exceeds the range of `φ^S_η` and `p̃` was set to 1.
    pub saturated: bool,
}

/// Posted prices of the three-market design.
///
/// `p̃` inverts the same weighted virtual cost as `p_S`, at `1/μ̄`.
pub fn design(cfg: &LargeMarketConfig) -> Result<ThreeMarketDesign> {
    let vf = cfg.virtuals();
    let p_s = vf.inverse(Side::Seller, 1.0)?;
    let (p_tilde, saturated) = if cfg.mean_ctr <= 0.0 {
        (None, false)
    } else {
        let y = 1.0 / cfg.mean_ctr;
        let (_, hi) = vf.range(Side::Seller);
        if y > hi {
            (Some(1.0), true)
        } else {
            (Some(vf.inverse_clamped(Side::Seller, y)), false)
        }
    };
    Ok(ThreeMarketDesign {
        p_s,
        p_b: 1.0,
        p_tilde,
        saturated,
    })
}

/// `π^{B,S}(p) = (1 − p μ̄) F(p)`.
pub fn profit_selling(cfg: &LargeMarketConfig, p: f64) -> f64 {
    (1.0 - p * cfg.mean_ctr) * cfg.dist.cdf(p)
}

/// `π^{B,E}(p) = (1 − μ̄)(1 − F(p))`.
pub fn profit_exchange(cfg: &LargeMarketConfig, p: f64) -> f64 {
    (1.0 - cfg.mean_ctr) * cfg.dist.sf(p)
}

/// `π^{B,ES}(p) = π^{B,S}(p) + π^{B,E}(p)`.
pub fn profit_combined(cfg: &LargeMarketConfig, p: f64) -> f64 {
    profit_selling(cfg, p) + profit_exchange(cfg, p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profits {
    /// `π^{B,S}(p̃)`; `None` when `p̃` is undefined.
    pub selling_only: Option<f64>,
    /// `π^{B,E}(p_S)`.
    pub exchange: f64,
    /// `π^{B,ES}(p_S)`.
    pub combined: f64,
}

pub fn profits(cfg: &LargeMarketConfig, dsn: &ThreeMarketDesign) -> Profits {
    Profits {
        selling_only: dsn.p_tilde.map(|p| profit_selling(cfg, p)),
        exchange: profit_exchange(cfg, dsn.p_s),
        combined: profit_combined(cfg, dsn.p_s),
    }
}

/// Pieces of the asymptotic relative efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreComponents {
    pub w_inf: f64,
    pub w_max: f64,
    pub v_inf: f64,
    pub v_max: f64,
    pub r_inf: f64,
    /// `Π^∞ = η_w W^∞ + η_v V^∞ + η_r R^∞`.
    pub value: f64,
    /// `TS^∞ = ζ_w W^max + ζ_v V^max`.
    pub total_surplus: f64,
    pub are: f64,
}

/// `E[(p − θ)_+] = ∫_0^p F`.
fn expected_shortfall(d: &TypeDistribution, p: f64) -> f64 {
    if d.is_uniform() {
        return 0.5 * p * p;
    }
    adaptive_simpson(|t| d.cdf(t), 0.0, p, 1e-12)
}

pub fn are(cfg: &LargeMarketConfig) -> Result<AreComponents> {
    let dsn = design(cfg)?;
    let mu = cfg.mean_ctr;
    let w = 1.0 - mu;
    let v_max = 1.0 - mu * cfg.dist.mean();
    let v_inf = mu * expected_shortfall(&cfg.dist, dsn.p_s);
    let r_inf = profit_combined(cfg, dsn.p_s);
    let e = cfg.eta;
    let value = e.eta_w * w + e.eta_v * v_inf + e.eta_r * r_inf;
    let total_surplus = cfg.zeta.0 * w + cfg.zeta.1 * v_max;
    if !(total_surplus > 0.0) {
        return Err(Error::invalid("zeta", "total surplus is zero"));
    }
    Ok(AreComponents {
        w_inf: w,
        w_max: w,
        v_inf,
        v_max,
        r_inf,
        value,
        total_surplus,
        are: value / total_surplus,
    })
}

/// Limit of `N S^N(θ)`: 0 below `p_S`, `μ̄` on `[p_S, 1)`.
pub fn limit_clicks(p_s: f64, mean_ctr: f64, t: f64) -> f64 {
    if t < p_s {
        0.0
    } else {
        mean_ctr
    }
}

/// Finite-`N` approximation of the three markets in the symmetric model.
#[derive(Debug, Clone)]
pub struct FiniteNRow {
    pub n: usize,
    pub z: f64,
    /// Grid types.
    pub theta: Vec<f64>,
    /// `N S^N(θ)` on the grid.
    pub scaled_clicks: Vec<f64>,
    /// `N T^N(θ)` on the grid.
    pub scaled_transfers: Vec<f64>,
    /// `E_F[N T^N(θ) 1{θ < p_S}]`.
    pub selling_transfer: f64,
    /// `E_F[N T^N(θ)]`.
    pub total_transfer: f64,
    /// `sup |N S^N − limit|` outside the `δ`-windows at `p_S` and 1.
    pub step_error: f64,
    /// `sup |N U^N(θ) − μ̄ (p_S − θ)_+|` over grid types up to `1 − δ`.
    pub payoff_error: f64,
}

/// Target of the selling-market cost, `−p_S μ̄ F(p_S)`.
pub fn selling_cost_limit(dist: &TypeDistribution, p_s: f64, mean_ctr: f64) -> f64 {
    -p_s * mean_ctr * dist.cdf(p_s)
}

/// Scaled clicks and transfers at each `N`, with distances to the limit.
///
/// `delta` is the half-width of the window around `p_S` (and the width of
/// the window below 1) excluded from the step comparison.
pub fn finite_n_transfer_limit(
    law: &CtrLaw,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    ns: &[usize],
    grid: usize,
    delta: f64,
) -> Result<Vec<FiniteNRow>> {
    let vf = WeightedVirtual::new(dist.clone(), eta);
    let p_s = vf.inverse(Side::Seller, 1.0)?;
    let mu = law.mean();
    ns.iter()
        .map(|&n| {
            let sol = solve_symmetric(law, dist, eta, n)?;
            let rule = ScoringRule::from_virtual(vf.clone(), sol.z)?;
            let res = symmetric_resolution(n);
            let scaled = |t: f64| n as f64 * symmetric_clicks(&rule, law, n, rule.score(t), res);
            let (lo, hi) = rule.tie_interval();
            let mut nodes = uniform_grid(grid);
            nodes.extend([lo, hi, p_s]);
            nodes.sort_by(f64::total_cmp);
            nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            let clicks: Vec<f64> = nodes.par_iter().map(|&t| scaled(t)).collect();
            let curve = InterimCurve::new(nodes.clone(), clicks.clone());
            let w = worst_off_type(&curve, mu, Some(rule.critical_type()), 1e-6);
            let m = MerchantInterim::new(curve, mu, w);
            let breaks = breakpoints(0.0, 1.0, nodes.iter().copied());
            let below = breakpoints(0.0, p_s, nodes.iter().copied());
            let density_t = |t: f64| m.transfer_at(t) * dist.pdf(t);
            let total_transfer = composite(gl16(), &breaks, 1, density_t);
            let selling_transfer = composite(gl16(), &below, 1, density_t);
            let step_error = nodes
                .iter()
                .zip(&clicks)
                .filter(|(t, _)| (**t - p_s).abs() >= delta && **t <= 1.0 - delta)
                .map(|(&t, &s)| (s - limit_clicks(p_s, mu, t)).abs())
                .fold(0.0, f64::max);
            let payoff_error = nodes
                .iter()
                .filter(|t| **t <= 1.0 - delta)
                .map(|&t| (m.payoff_at(t) - mu * (p_s - t).max(0.0)).abs())
                .fold(0.0, f64::max);
            Ok(FiniteNRow {
                n,
                z: sol.z,
                scaled_transfers: nodes.iter().map(|&t| m.transfer_at(t)).collect(),
                theta: nodes,
                scaled_clicks: clicks,
                selling_transfer,
                total_transfer,
                step_error,
                payoff_error,
            })
        })
        .collect()
}
