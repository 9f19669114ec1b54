//! Interim quantities on a per-merchant type grid: clicks, worst-off types,
//! transfers, payoffs and the objective decomposition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::{Side, WeightedVirtual};
use crate::quad::GaussLegendre;

/// Default grid size.
pub const DEFAULT_GRID: usize = 201;
/// Offset used to sample one-sided limits at a jump.
const JUMP_OFFSET: f64 = 1e-7;

/// Interim clicks `S_i(θ)` tabulated on a sorted grid.
///
/// A jump at `b` is stored as two consecutive nodes at the same abscissa:
/// the left limit first, then the right limit. Evaluation is linear between
/// nodes and right-continuous at jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct InterimCurve {
    theta: Vec<f64>,
    clicks: Vec<f64>,
    stderr: Option<Vec<f64>>,
}

impl InterimCurve {
    pub fn new(theta: Vec<f64>, clicks: Vec<f64>) -> Self {
        assert_eq!(theta.len(), clicks.len(), "grid and values differ in length");
        assert!(theta.len() >= 2, "need at least two grid points");
        assert!(theta.windows(2).all(|w| w[0] <= w[1]), "grid must be sorted");
        Self {
            theta,
            clicks,
            stderr: None,
        }
    }

    pub fn with_stderr(mut self, stderr: Vec<f64>) -> Self {
        assert_eq!(stderr.len(), self.theta.len());
        self.stderr = Some(stderr);
        self
    }

    /// Constant curve on `[0, 1]`.
    pub fn constant(value: f64, grid: usize) -> Self {
        let theta = uniform_grid(grid);
        let clicks = vec![value; theta.len()];
        Self::new(theta, clicks)
    }

    /// Tabulate `f` on a uniform grid of `grid` points plus the given jump
    /// locations, evaluated in parallel.
    pub fn tabulate<F>(grid: usize, jumps: &[f64], f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let (theta, probes) = grid_with_jumps(grid, jumps);
        let clicks: Vec<f64> = probes.par_iter().map(|&t| f(t)).collect();
        Self::new(theta, clicks)
    }

    /// Like [`InterimCurve::tabulate`] for estimators that also report a
    /// standard error.
    pub fn tabulate_noisy<F>(grid: usize, jumps: &[f64], f: F) -> Self
    where
        F: Fn(usize, f64) -> (f64, f64) + Sync,
    {
        let (theta, probes) = grid_with_jumps(grid, jumps);
        let pairs: Vec<(f64, f64)> = probes
            .par_iter()
            .enumerate()
            .map(|(k, &t)| f(k, t))
            .collect();
        let (clicks, se) = pairs.into_iter().unzip();
        Self::new(theta, clicks).with_stderr(se)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn clicks(&self) -> &[f64] {
        &self.clicks
    }

    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn locate(&self, t: f64) -> usize {
        let k = self.theta.partition_point(|&v| v <= t);
        k.saturating_sub(1).min(self.theta.len() - 2)
    }

    /// Linear interpolation, right-continuous at jumps.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.locate(t);
        lerp(&self.theta, &self.clicks, k, t)
    }

    /// `∫_0^{θ_k} S` at every node (trapezoid, exact for the interpolant).
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..self.theta.len() {
            acc += 0.5 * (self.theta[k] - self.theta[k - 1]) * (self.clicks[k] + self.clicks[k - 1]);
            out.push(acc);
        }
        out
    }

    /// `∫_0^t S` for the interpolant.
    pub fn integral_to(&self, t: f64, cumulative: &[f64]) -> f64 {
        let k = self.locate(t);
        let s = lerp(&self.theta, &self.clicks, k, t);
        cumulative[k] + 0.5 * (t - self.theta[k]) * (self.clicks[k] + s)
    }

    /// Integrate `g(θ, S(θ))` segment by segment with Gauss–Legendre,
    /// splitting at `extra` points.
    pub fn integrate<G: FnMut(f64, f64) -> f64>(&self, extra: &[f64], mut g: G) -> f64 {
        let rule = gl4();
        let mut total = 0.0;
        for k in 0..self.theta.len() - 1 {
            let (a, b) = (self.theta[k], self.theta[k + 1]);
            if b <= a {
                continue;
            }
            let mut cuts = vec![a];
            cuts.extend(extra.iter().copied().filter(|&x| x > a && x < b));
            cuts.push(b);
            for w in cuts.windows(2) {
                for (t, wt) in rule.points(w[0], w[1]) {
                    total += wt * g(t, lerp(&self.theta, &self.clicks, k, t));
                }
            }
        }
        total
    }
}

fn gl4() -> &'static GaussLegendre {
    static RULE: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(4))
}

fn lerp(x: &[f64], y: &[f64], k: usize, t: f64) -> f64 {
    let dx = x[k + 1] - x[k];
    if dx <= 0.0 {
        return y[k + 1];
    }
    let w = ((t - x[k]) / dx).clamp(0.0, 1.0);
    y[k] + w * (y[k + 1] - y[k])
}

/// `n` equally spaced points on [0, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

/// Grid abscissae and the probe points at which to evaluate the curve.
/// The end nodes take the one-sided limits from inside [0, 1].
fn grid_with_jumps(grid: usize, jumps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut js: Vec<f64> = jumps
        .iter()
        .copied()
        .filter(|&b| b.is_finite() && b > JUMP_OFFSET && b < 1.0 - JUMP_OFFSET)
        .collect();
    js.sort_by(f64::total_cmp);
    js.dedup_by(|a, b| (*a - *b).abs() < 4.0 * JUMP_OFFSET);
    let mut nodes: Vec<(f64, f64)> = uniform_grid(grid)
        .into_iter()
        .filter(|t| js.iter().all(|b| (t - b).abs() > 2.0 * JUMP_OFFSET))
        .map(|t| (t, t.clamp(JUMP_OFFSET, 1.0 - JUMP_OFFSET)))
        .collect();
    for &b in &js {
        nodes.push((b, b - JUMP_OFFSET));
        nodes.push((b, b + JUMP_OFFSET));
    }
    nodes.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    nodes.into_iter().unzip()
}

/// Worst-off type of one merchant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstOff {
    /// Representative `θ̂` used for transfers.
    pub theta: f64,
    /// Whether `S(θ) = a` holds somewhere.
    pub attained: bool,
    /// The interval on which `S = a`, when attained.
    pub band: Option<(f64, f64)>,
}

/// Locate the worst-off type from interim clicks.
///
/// When `S = a` on a set, the representative is `preferred` clamped into that
/// set (or the set's midpoint without a preference). Otherwise it is the point
/// where the interpolant crosses `a`, or the boundary type 1 (S below a
/// everywhere) or 0 (S above a everywhere).
pub fn worst_off_type(curve: &InterimCurve, a: f64, preferred: Option<f64>, tol: f64) -> WorstOff {
    let th = curve.theta();
    let s = curve.clicks();
    let hits: Vec<usize> = (0..th.len()).filter(|&k| (s[k] - a).abs() <= tol).collect();
    if let (Some(&first), Some(&last)) = (hits.first(), hits.last()) {
        let (lo, hi) = (th[first], th[last]);
        let theta = preferred.map_or(0.5 * (lo + hi), |p| p.clamp(lo, hi));
        return WorstOff {
            theta,
            attained: true,
            band: Some((lo, hi)),
        };
    }
    let theta = match s.iter().position(|&v| v > a) {
        None => 1.0,
        Some(0) => 0.0,
        Some(k) => {
            let dx = th[k] - th[k - 1];
            if dx <= 0.0 {
                th[k]
            } else {
                th[k - 1] + (a - s[k - 1]) / (s[k] - s[k - 1]) * dx
            }
        }
    };
    WorstOff {
        theta,
        attained: false,
        band: None,
    }
}

/// Interim clicks of one merchant together with the implied transfers.
#[derive(Debug, Clone)]
pub struct MerchantInterim {
    pub outside: f64,
    pub curve: InterimCurve,
    pub worst_off: WorstOff,
    cumulative: Vec<f64>,
    anchor: f64,
    /// `T_i` at each grid node.
    pub transfers: Vec<f64>,
    /// `U_i` at each grid node.
    pub payoffs: Vec<f64>,
}

impl MerchantInterim {
    /// Transfers `T(θ) = θ(S(θ) − a) − ∫_{θ̂}^{θ} (S − a)`.
    pub fn new(curve: InterimCurve, outside: f64, worst_off: WorstOff) -> Self {
        let cumulative: Vec<f64> = curve
            .cumulative()
            .iter()
            .zip(curve.theta())
            .map(|(c, t)| c - outside * t)
            .collect();
        let anchor = integral_excess(&curve, outside, &cumulative, worst_off.theta);
        let payoffs: Vec<f64> = cumulative.iter().map(|c| c - anchor).collect();
        let transfers = curve
            .theta()
            .iter()
            .zip(curve.clicks())
            .zip(&payoffs)
            .map(|((t, s), u)| t * (s - outside) - u)
            .collect();
        Self {
            outside,
            curve,
            worst_off,
            cumulative,
            anchor,
            transfers,
            payoffs,
        }
    }

    /// Replace transfers (for constructing mutants); payoffs follow
    /// `U = θ(S − a) − T`.
    pub fn with_transfers(mut self, transfers: Vec<f64>) -> Self {
        assert_eq!(transfers.len(), self.curve.len());
        self.payoffs = self
            .curve
            .theta()
            .iter()
            .zip(self.curve.clicks())
            .zip(&transfers)
            .map(|((t, s), tr)| t * (s - self.outside) - tr)
            .collect();
        self.transfers = transfers;
        self
    }

    pub fn clicks_at(&self, t: f64) -> f64 {
        self.curve.eval(t)
    }

    /// `U(θ) = ∫_{θ̂}^{θ} (S − a)`.
    pub fn payoff_at(&self, t: f64) -> f64 {
        integral_excess(&self.curve, self.outside, &self.cumulative, t) - self.anchor
    }

    pub fn transfer_at(&self, t: f64) -> f64 {
        t * (self.clicks_at(t) - self.outside) - self.payoff_at(t)
    }
}

fn integral_excess(curve: &InterimCurve, a: f64, cumulative_excess: &[f64], t: f64) -> f64 {
    // cumulative_excess already has a·θ removed at the nodes
    let th = curve.theta();
    let k = th.partition_point(|&v| v <= t).saturating_sub(1).min(th.len() - 2);
    let s0 = curve.clicks()[k];
    let s = curve.eval(t);
    cumulative_excess[k] + 0.5 * (t - th[k]) * (s0 + s) - a * (t - th[k])
}

/// Objective decomposition of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// Net value created, `Σ E[θ_i (S_i − a_i)]`.
    pub v: f64,
    /// Net clicks, `Σ E[S_i − a_i]`.
    pub w: f64,
    /// Revenue, `Σ E[T_i]`.
    pub r: f64,
    /// `η_v V + η_w W + η_r R`.
    pub value: f64,
}

/// Interim curves, transfers and objective for every merchant.
#[derive(Debug, Clone)]
pub struct MechanismOutcome {
    pub merchants: Vec<MerchantInterim>,
    pub parts: ObjectiveParts,
    virtuals: Vec<WeightedVirtual>,
}

impl MechanismOutcome {
    pub fn new(merchants: Vec<MerchantInterim>, virtuals: Vec<WeightedVirtual>) -> Self {
        assert_eq!(merchants.len(), virtuals.len());
        let eta = virtuals[0].eta();
        let mut parts = ObjectiveParts {
            v: 0.0,
            w: 0.0,
            r: 0.0,
            value: 0.0,
        };
        for (m, vf) in merchants.iter().zip(&virtuals) {
            let d = vf.dist();
            let a = m.outside;
            let extra = [m.worst_off.theta];
            parts.v += m.curve.integrate(&[], |t, s| t * (s - a) * d.pdf(t));
            parts.w += m.curve.integrate(&[], |t, s| (s - a) * d.pdf(t));
            parts.r += m.curve.integrate(&extra, |t, _| m.transfer_at(t) * d.pdf(t));
        }
        parts.value = eta.eta_v * parts.v + eta.eta_w * parts.w + eta.eta_r * parts.r;
        Self {
            merchants,
            parts,
            virtuals,
        }
    }

    pub fn virtuals(&self) -> &[WeightedVirtual] {
        &self.virtuals
    }

    /// Per-merchant term of `ψ_η(x, θ′)`:
    /// `∫ (S − a) φ_η(θ, θ′) f`, with the virtual cost below `θ′` and the
    /// virtual value above.
    pub fn virtual_term(&self, i: usize, theta_prime: f64) -> f64 {
        let m = &self.merchants[i];
        let vf = &self.virtuals[i];
        let a = m.outside;
        m.curve.integrate(&[theta_prime], |t, s| {
            let side = if t < theta_prime { Side::Seller } else { Side::Buyer };
            (s - a) * vf.value_density(side, t)
        })
    }

    /// Virtual objective `ψ_η(x, θ′)`.
    pub fn virtual_objective(&self, theta_prime: &[f64]) -> f64 {
        assert_eq!(theta_prime.len(), self.merchants.len());
        theta_prime
            .iter()
            .enumerate()
            .map(|(i, &t)| self.virtual_term(i, t))
            .sum()
    }

    /// `ψ_η(x, θ′) − η_r Σ U_i(θ′_i)`, which equals the objective for any θ′.
    pub fn objective_via(&self, theta_prime: &[f64]) -> f64 {
        let eta_r = self.virtuals[0].eta().eta_r;
        let u: f64 = theta_prime
            .iter()
            .zip(&self.merchants)
            .map(|(&t, m)| m.payoff_at(t))
            .sum();
        self.virtual_objective(theta_prime) - eta_r * u
    }

    /// Worst-off profile.
    pub fn worst_off_profile(&self) -> Vec<f64> {
        self.merchants.iter().map(|m| m.worst_off.theta).collect()
    }

    /// Monte Carlo estimate of revenue with its standard error.
    pub fn revenue_mc(&self, draws: usize, seed: u64) -> (f64, f64) {
        let chunk = 4096;
        let chunks = draws.div_ceil(chunk);
        let sums: Vec<(f64, f64, usize)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let n = chunk.min(draws - c * chunk);
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..n {
                    let mut x = 0.0;
                    for (m, vf) in self.merchants.iter().zip(&self.virtuals) {
                        x += m.transfer_at(vf.dist().sample(&mut rng));
                    }
                    s1 += x;
                    s2 += x * x;
                }
                (s1, s2, n)
            })
            .collect();
        let (s1, s2, n) = sums
            .into_iter()
            .fold((0.0, 0.0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2));
        let nf = n as f64;
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0);
        (mean, (var / nf).sqrt())
    }
}
