//! Continuum-CTR model.
//!
//! Customers carry a CTR vector `ω ∈ [0,1]^N`. Merchant `i` owns a mass
//! `λ(i)` of customers drawn from a product law `μ_i`, and the platform pools
//! `α = Σ λ(i) μ_i`. Under the targeted ads rule a customer goes to the
//! merchant with the strictly highest `ω_i g_i(θ_i)`.
//!
//! Expected winning clicks factor through the product structure: for a
//! component `μ_k = ⊗_c ν_{k,c}` and own score `u`,
//!
//! `E_{μ_k}[ω_i ∏_j P(ω_i u > ω_j g_j)] = ∫ ω_i ∏_j x_{k,j}(ω_i u) dν_{k,i}(ω_i)`
//!
//! with `x_{k,j}(v) = ∫ P(g_j < v/ω_j) dν_{k,j}(ω_j)`. Both integrals are
//! one-dimensional and are done by composite Gauss–Legendre between the
//! kinks of the integrand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use crate::dist::{TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::interim::{worst_off_type, InterimCurve, MechanismOutcome, MerchantInterim, DEFAULT_GRID};
use crate::quad::{bisect, breakpoints, composite, gl16};
use crate::scoring::ScoringRule;

/// Residual tolerance of the Opt-z solvers.
pub const OPTZ_TOL: f64 = 1e-6;
/// Damping of the best-response iteration.
pub const DAMPING: f64 = 0.5;
/// Iteration cap of the best-response iteration.
pub const MAX_ITER: usize = 200;
/// Default outer Monte Carlo draws.
pub const DEFAULT_DRAWS: usize = 100_000;

const CHUNK: usize = 4096;

#[derive(Debug, Clone)]
enum LawKind {
    Uniform { lo: f64, hi: f64 },
    Beta { a: f64, b: f64, law: Beta },
    Piecewise { x: Vec<f64>, cdf: Vec<f64> },
}

/// Law of one CTR coordinate.
#[derive(Debug, Clone)]
pub struct CtrLaw {
    kind: LawKind,
}

impl CtrLaw {
    /// Uniform on `[lo, hi] ⊆ [0, 1]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(
                "ctr law",
                format!("uniform support [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"),
            ));
        }
        Ok(Self {
            kind: LawKind::Uniform { lo, hi },
        })
    }

    /// Beta(a, b) with `a, b >= 1`.
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(
                "ctr law",
                format!("beta shapes must be >= 1, got ({a}, {b})"),
            ));
        }
        let law = Beta::new(a, b).map_err(|e| Error::invalid("ctr law", e.to_string()))?;
        Ok(Self {
            kind: LawKind::Beta { a, b, law },
        })
    }

    /// Piecewise-linear cdf through `(ω_k, F_k)` knots inside [0, 1], from
    /// cdf 0 to cdf 1.
    pub fn piecewise_cdf(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("ctr knots", "need at least two knots"));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first.1 != 0.0 || last.1 != 1.0 || first.0 < 0.0 || last.0 > 1.0 {
            return Err(Error::invalid(
                "ctr knots",
                "cdf must run from 0 to 1 inside [0, 1]",
            ));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) || !(w[1].1 >= w[0].1) {
                return Err(Error::invalid(
                    "ctr knots",
                    "abscissae must increase and the cdf must not decrease",
                ));
            }
        }
        Ok(Self {
            kind: LawKind::Piecewise {
                x: knots.iter().map(|k| k.0).collect(),
                cdf: knots.iter().map(|k| k.1).collect(),
            },
        })
    }

    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            LawKind::Uniform { lo, hi } => (*lo, *hi),
            LawKind::Beta { .. } => (0.0, 1.0),
            LawKind::Piecewise { x, .. } => (x[0], x[x.len() - 1]),
        }
    }

    pub fn pdf(&self, w: f64) -> f64 {
        let (lo, hi) = self.support();
        if w < lo || w > hi {
            return 0.0;
        }
        match &self.kind {
            LawKind::Uniform { lo, hi } => 1.0 / (hi - lo),
            LawKind::Beta { law, .. } => law.pdf(w),
            LawKind::Piecewise { x, cdf } => {
                let k = segment(x, w);
                (cdf[k + 1] - cdf[k]) / (x[k + 1] - x[k])
            }
        }
    }

    pub fn cdf(&self, w: f64) -> f64 {
        let (lo, hi) = self.support();
        if w <= lo {
            return 0.0;
        }
        if w >= hi {
            return 1.0;
        }
        match &self.kind {
            LawKind::Uniform { lo, hi } => (w - lo) / (hi - lo),
            LawKind::Beta { law, .. } => law.cdf(w),
            LawKind::Piecewise { x, cdf } => {
                let k = segment(x, w);
                cdf[k] + (cdf[k + 1] - cdf[k]) * (w - x[k]) / (x[k + 1] - x[k])
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            LawKind::Uniform { lo, hi } => 0.5 * (lo + hi),
            LawKind::Beta { a, b, .. } => a / (a + b),
            LawKind::Piecewise { x, cdf } => {
                x[0] + x
                    .windows(2)
                    .zip(cdf.windows(2))
                    .map(|(t, c)| (t[1] - t[0]) * (1.0 - 0.5 * (c[0] + c[1])))
                    .sum::<f64>()
            }
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            LawKind::Uniform { lo, hi } => lo + (hi - lo) * u,
            LawKind::Beta { .. } => bisect(|w| self.cdf(w) - u, 0.0, 1.0, 1e-13, 200),
            LawKind::Piecewise { x, cdf } => {
                let k = segment(cdf, u).min(x.len() - 2);
                if cdf[k + 1] <= cdf[k] {
                    return x[k];
                }
                x[k] + (x[k + 1] - x[k]) * (u - cdf[k]) / (cdf[k + 1] - cdf[k])
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Support ends and interior kinks of the density.
    pub fn knots(&self) -> Vec<f64> {
        match &self.kind {
            LawKind::Piecewise { x, .. } => x.clone(),
            _ => {
                let (lo, hi) = self.support();
                vec![lo, hi]
            }
        }
    }

    fn same_as(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (LawKind::Uniform { lo, hi }, LawKind::Uniform { lo: l2, hi: h2 }) => lo == l2 && hi == h2,
            (LawKind::Beta { a, b, .. }, LawKind::Beta { a: a2, b: b2, .. }) => a == a2 && b == b2,
            (LawKind::Piecewise { x, cdf }, LawKind::Piecewise { x: x2, cdf: c2 }) => x == x2 && cdf == c2,
            _ => false,
        }
    }

    /// `∫ f dν` by composite Gauss–Legendre between the law's knots and
    /// `extra` breakpoints.
    fn expect<F: FnMut(f64) -> f64>(&self, extra: &[f64], panels: usize, mut f: F) -> f64 {
        let (lo, hi) = self.support();
        let breaks = breakpoints(lo, hi, self.knots().into_iter().chain(extra.iter().copied()));
        composite(gl16(), &breaks, panels, |w| f(w) * self.pdf(w))
    }
}

fn segment(knots: &[f64], x: f64) -> usize {
    let k = knots.partition_point(|&v| v <= x);
    k.saturating_sub(1).min(knots.len() - 2)
}

/// Merchant masses `λ` and per-merchant product laws `μ_i = ⊗_c laws[i][c]`.
#[derive(Debug, Clone)]
pub struct ContinuumDataset {
    lambda: Vec<f64>,
    laws: Vec<Vec<CtrLaw>>,
}

impl ContinuumDataset {
    pub fn new(lambda: Vec<f64>, laws: Vec<Vec<CtrLaw>>) -> Result<Self> {
        let n = lambda.len();
        if n < 2 {
            return Err(Error::invalid("lambda", "need at least two merchants"));
        }
        if let Some(k) = lambda.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::invalid(format!("lambda[{k}]"), "must be strictly positive"));
        }
        let total: f64 = lambda.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("lambda", format!("masses sum to {total}, not 1")));
        }
        if laws.len() != n || laws.iter().any(|l| l.len() != n) {
            return Err(Error::invalid("laws", format!("need an {n}x{n} table of coordinate laws")));
        }
        for (i, row) in laws.iter().enumerate() {
            if !(row[i].mean() > 0.0) {
                return Err(Error::invalid(
                    format!("laws[{i}][{i}]"),
                    "own-coordinate mean must be positive",
                ));
            }
        }
        Ok(Self { lambda, laws })
    }

    /// `N` merchants with `λ = 1/N` and i.i.d. coordinates.
    pub fn iid(n: usize, law: CtrLaw) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n], vec![vec![law; n]; n])
    }

    /// Same coordinate law everywhere, arbitrary masses.
    pub fn homogeneous(lambda: Vec<f64>, law: CtrLaw) -> Result<Self> {
        let n = lambda.len();
        Self::new(lambda, vec![vec![law; n]; n])
    }

    pub fn merchants(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn laws(&self) -> &[Vec<CtrLaw>] {
        &self.laws
    }

    /// `a_i = λ(i) E_{μ_i}[ω_i]`.
    pub fn outside(&self, i: usize) -> f64 {
        self.lambda[i] * self.laws[i][i].mean()
    }

    pub fn outside_options(&self) -> Vec<f64> {
        (0..self.merchants()).map(|i| self.outside(i)).collect()
    }

    /// Whether every merchant carries the same product law.
    pub fn components_identical(&self) -> bool {
        self.laws
            .iter()
            .all(|row| row.iter().zip(&self.laws[0]).all(|(a, b)| a.same_as(b)))
    }

    /// `α(E)` for a rectangle `E = ∏_c [lo_c, hi_c]`.
    pub fn aggregate_prob(&self, rect: &[(f64, f64)]) -> f64 {
        self.lambda
            .iter()
            .zip(&self.laws)
            .map(|(l, row)| {
                l * row
                    .iter()
                    .zip(rect)
                    .map(|(law, &(lo, hi))| (law.cdf(hi) - law.cdf(lo)).max(0.0))
                    .product::<f64>()
            })
            .sum()
    }

    fn component_density(&self, k: usize, w: &[f64]) -> f64 {
        self.laws[k].iter().zip(w).map(|(law, &x)| law.pdf(x)).product()
    }

    /// Radon–Nikodym weight `h_i(ω) = dμ_i/dα (ω)`.
    pub fn rn_weight(&self, i: usize, w: &[f64]) -> f64 {
        let denom: f64 = (0..self.merchants())
            .map(|k| self.lambda[k] * self.component_density(k, w))
            .sum();
        if denom <= 0.0 {
            return 0.0;
        }
        self.component_density(i, w) / denom
    }

    /// One customer drawn from `α`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.merchants() - 1;
        for (j, l) in self.lambda.iter().enumerate() {
            acc += l;
            if u < acc {
                k = j;
                break;
            }
        }
        for (c, law) in self.laws[k].iter().enumerate() {
            out[c] = law.sample(rng);
        }
    }
}

/// Quadrature resolution of the nested integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    /// Panels per piece in the opponent integral.
    pub inner: usize,
    /// Panels per piece in the own-CTR integral.
    pub outer: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { inner: 2, outer: 4 }
    }
}

/// Score levels at which `t ↦ Pr(g(θ) < t)` has kinks or jumps.
fn score_levels(rule: &ScoringRule) -> [f64; 3] {
    [rule.score(0.0), rule.z(), rule.score(1.0)]
}

/// `x(v) = ∫ Pr(g(θ) < v/ω) dν(ω)`: chance that an opponent with CTR law `ν`
/// and rule `rule` is strictly beaten by a quality score `v`.
pub fn win_prob(rule: &ScoringRule, law: &CtrLaw, v: f64, panels: usize) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let levels = score_levels(rule);
    let kinks: Vec<f64> = levels.iter().filter(|c| **c > 0.0).map(|c| v / c).collect();
    law.expect(&kinks, panels, |w| {
        if w <= 0.0 {
            1.0
        } else {
            rule.prob_score_below(v / w)
        }
    })
}

/// Own-CTR breakpoints of `ω ↦ ∏_j x_j(ω u)`.
fn outer_kinks(rules: &[ScoringRule], laws: &[CtrLaw], i: usize, u: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if u <= 0.0 {
        return out;
    }
    for (j, (rule, law)) in rules.iter().zip(laws).enumerate() {
        if j == i {
            continue;
        }
        for c in score_levels(rule) {
            if c > 0.0 && c.is_finite() {
                for e in law.knots() {
                    out.push(c * e / u);
                }
            }
        }
    }
    out
}

/// Expected winning clicks of merchant `i` with quality-score multiplier `u`
/// against `rules`, under the dataset's aggregate law.
pub fn clicks_at_score(
    data: &ContinuumDataset,
    rules: &[ScoringRule],
    i: usize,
    u: f64,
    res: Resolution,
) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    (0..data.merchants())
        .map(|k| {
            let laws = &data.laws[k];
            let kinks = outer_kinks(rules, laws, i, u);
            let e = laws[i].expect(&kinks, res.outer, |w| {
                let mut p = w;
                for (j, (rule, law)) in rules.iter().zip(laws).enumerate() {
                    if j != i && p > 0.0 {
                        p *= win_prob(rule, law, w * u, res.inner);
                    }
                }
                p
            });
            data.lambda[k] * e
        })
        .sum()
}

/// Per-merchant type laws and welfare weight for the continuum model.
#[derive(Debug, Clone)]
pub struct ContinuumModel {
    data: ContinuumDataset,
    virtuals: Vec<WeightedVirtual>,
    res: Resolution,
}

/// Solution of the Opt-z system.
#[derive(Debug, Clone, PartialEq)]
pub struct IroningSolution {
    pub z: Vec<f64>,
    /// `z_i = φ^S_η(1)` with the left side still below `a_i`.
    pub corner: Vec<bool>,
    /// Left side minus `a_i`.
    pub residual: Vec<f64>,
    pub iterations: usize,
}

impl IroningSolution {
    /// Largest residual among non-corner merchants.
    pub fn max_residual(&self) -> f64 {
        max_free(&self.residual, &self.corner)
    }
}

impl ContinuumModel {
    pub fn new(data: ContinuumDataset, dists: Vec<TypeDistribution>, eta: WelfareWeight) -> Result<Self> {
        if dists.len() != data.merchants() {
            return Err(Error::invalid(
                "distributions",
                format!("need {} type laws, got {}", data.merchants(), dists.len()),
            ));
        }
        let virtuals = dists.into_iter().map(|d| WeightedVirtual::new(d, eta)).collect();
        Ok(Self {
            data,
            virtuals,
            res: Resolution::default(),
        })
    }

    /// Same type law for every merchant.
    pub fn symmetric(data: ContinuumDataset, dist: TypeDistribution, eta: WelfareWeight) -> Result<Self> {
        let n = data.merchants();
        Self::new(data, vec![dist; n], eta)
    }

    pub fn with_resolution(mut self, res: Resolution) -> Self {
        self.res = res;
        self
    }

    pub fn data(&self) -> &ContinuumDataset {
        &self.data
    }

    pub fn virtuals(&self) -> &[WeightedVirtual] {
        &self.virtuals
    }

    /// Scoring rules with ironing levels `z`.
    pub fn rules(&self, z: &[f64]) -> Result<Vec<ScoringRule>> {
        if z.len() != self.virtuals.len() {
            return Err(Error::invalid("z", "one level per merchant"));
        }
        self.virtuals
            .iter()
            .zip(z)
            .map(|(vf, &zi)| ScoringRule::from_virtual(vf.clone(), zi))
            .collect()
    }

    /// Left side of Opt-z for merchant `i`.
    fn lhs(&self, rules: &[ScoringRule], i: usize) -> f64 {
        clicks_at_score(&self.data, rules, i, rules[i].z(), self.res)
    }

    /// Opt-z left sides minus outside options.
    pub fn optz_residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let rules = self.rules(z)?;
        Ok((0..z.len())
            .map(|i| self.lhs(&rules, i) - self.data.outside(i))
            .collect())
    }

    /// Upper search limit for `z_i`: `φ^S_η(1)`, or the first power of two
    /// clearing the outside option when that is infinite.
    fn upper(&self, rules: &mut [ScoringRule], i: usize) -> Result<(f64, bool)> {
        let vf = &self.virtuals[i];
        let a = self.data.outside(i);
        let top = vf.z_max();
        if top.is_finite() {
            rules[i] = ScoringRule::from_virtual(vf.clone(), top)?;
            return Ok((top, self.lhs(rules, i) < a));
        }
        let mut hi = 1.0_f64.max(vf.z_min());
        for _ in 0..60 {
            rules[i] = ScoringRule::from_virtual(vf.clone(), hi)?;
            if self.lhs(rules, i) >= a {
                return Ok((hi, false));
            }
            hi *= 2.0;
        }
        Ok((hi, true))
    }

    /// `z_i` solving merchant `i`'s equation with the others held fixed.
    fn best_response(&self, z: &[f64], i: usize) -> Result<(f64, bool)> {
        let mut rules = self.rules(z)?;
        let a = self.data.outside(i);
        let lo = self.virtuals[i].z_min();
        let (hi, corner) = self.upper(&mut rules, i)?;
        if corner {
            return Ok((hi, true));
        }
        let vf = self.virtuals[i].clone();
        let root = bisect(
            |zi| {
                rules[i] = ScoringRule::from_virtual(vf.clone(), zi).expect("inside bracket");
                self.lhs(&rules, i) - a
            },
            lo,
            hi,
            1e-10,
            200,
        );
        Ok((root, false))
    }

    /// Solve the Opt-z system.
    ///
    /// Each iteration tries a Newton step with a forward-difference Jacobian
    /// on the non-corner merchants and keeps it if the largest residual
    /// drops. Otherwise every merchant moves halfway towards its best
    /// response, found by bisection on its own increasing left side.
    pub fn solve_optz(&self) -> Result<IroningSolution> {
        let n = self.data.merchants();
        let lo: Vec<f64> = self.virtuals.iter().map(|vf| vf.z_min()).collect();
        let mut z: Vec<f64> = self
            .virtuals
            .iter()
            .map(|vf| {
                let top = vf.z_max();
                let guess = if top.is_finite() { 0.5 * (vf.z_min() + top) } else { 1.0 };
                guess.max(vf.z_min())
            })
            .collect();
        let mut hi: Vec<f64> = self.virtuals.iter().map(|vf| vf.z_max()).collect();
        let mut trace = Vec::new();
        let mut residual = self.optz_residual(&z)?;
        for it in 0..MAX_ITER {
            let corner: Vec<bool> = (0..n).map(|i| z[i] >= hi[i] && residual[i] < 0.0).collect();
            let worst = max_free(&residual, &corner);
            trace.push(worst);
            if worst <= OPTZ_TOL {
                return Ok(IroningSolution {
                    z,
                    corner,
                    residual,
                    iterations: it,
                });
            }
            if let Some((zn, rn)) = self.newton_step(&z, &residual, &corner, &lo, &hi)? {
                let cn: Vec<bool> = (0..n).map(|i| zn[i] >= hi[i] && rn[i] < 0.0).collect();
                if max_free(&rn, &cn) < worst {
                    z = zn;
                    residual = rn;
                    continue;
                }
            }
            let br: Vec<(f64, bool)> = (0..n)
                .into_par_iter()
                .map(|i| self.best_response(&z, i))
                .collect::<Result<_>>()?;
            for i in 0..n {
                if br[i].1 {
                    hi[i] = br[i].0;
                    z[i] = br[i].0;
                } else {
                    z[i] = (1.0 - DAMPING) * z[i] + DAMPING * br[i].0;
                }
            }
            residual = self.optz_residual(&z)?;
        }
        Err(Error::NonConvergence {
            solver: "solve_optz",
            iterations: MAX_ITER,
            residual: trace.last().copied().unwrap_or(f64::NAN),
            trace,
        })
    }

    fn newton_step(
        &self,
        z: &[f64],
        r: &[f64],
        corner: &[bool],
        lo: &[f64],
        hi: &[f64],
    ) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let free: Vec<usize> = (0..z.len()).filter(|&i| !corner[i]).collect();
        let m = free.len();
        if m == 0 {
            return Ok(None);
        }
        let h = 1e-6;
        let mut jac = vec![vec![0.0; m]; m];
        for (c, &j) in free.iter().enumerate() {
            let mut zp = z.to_vec();
            let step = if z[j] + h <= hi[j] { h } else { -h };
            zp[j] += step;
            let rp = self.optz_residual(&zp)?;
            for (row, &i) in free.iter().enumerate() {
                jac[row][c] = (rp[i] - r[i]) / step;
            }
        }
        let rhs: Vec<f64> = free.iter().map(|&i| -r[i]).collect();
        let Some(d) = solve_linear(jac, rhs) else {
            return Ok(None);
        };
        let mut zn = z.to_vec();
        for (c, &i) in free.iter().enumerate() {
            zn[i] = (z[i] + d[c]).clamp(lo[i], hi[i]);
        }
        let rn = self.optz_residual(&zn)?;
        Ok(Some((zn, rn)))
    }

    /// Own-score scan of the left side, to confirm it increases in `z_i`.
    pub fn lhs_scan(&self, z: &[f64], i: usize, points: usize) -> Result<Vec<(f64, f64)>> {
        let mut rules = self.rules(z)?;
        let vf = &self.virtuals[i];
        let lo = vf.z_min();
        let hi = if vf.z_max().is_finite() { vf.z_max() } else { 4.0 };
        (0..points)
            .map(|k| {
                let zi = lo + (hi - lo) * k as f64 / (points - 1) as f64;
                rules[i] = ScoringRule::from_virtual(vf.clone(), zi)?;
                Ok((zi, self.lhs(&rules, i)))
            })
            .collect()
    }

    /// Interim clicks `S_i(θ)` under rules `rules`.
    pub fn interim_clicks(&self, rules: &[ScoringRule], i: usize, t: f64) -> f64 {
        clicks_at_score(&self.data, rules, i, rules[i].score(t), self.res)
    }

    /// Interim curves, worst-off types and transfers of the targeted ads
    /// rule for `N <= 3`.
    pub fn outcome(&self, sol: &IroningSolution) -> Result<MechanismOutcome> {
        let n = self.data.merchants();
        if n > 3 {
            return Err(Error::Unsupported(format!(
                "interim transfers are produced for N <= 3, got N = {n}"
            )));
        }
        let rules = self.rules(&sol.z)?;
        let merchants = (0..n)
            .map(|i| {
                let (lo, hi) = rules[i].tie_interval();
                let curve = InterimCurve::tabulate(DEFAULT_GRID, &[], |t| {
                    self.interim_clicks(&rules, i, t)
                });
                let curve = with_band_edges(curve, lo, hi, |t| self.interim_clicks(&rules, i, t));
                let a = self.data.outside(i);
                let w = worst_off_type(&curve, a, Some(rules[i].critical_type()), 10.0 * OPTZ_TOL);
                MerchantInterim::new(curve, a, w)
            })
            .collect();
        Ok(MechanismOutcome::new(merchants, self.virtuals.clone()))
    }

    /// Monte Carlo simulation of merchant `i`'s clicks at type `t` under the
    /// partition rule: `(mean, stderr, tie share)`. Ties go to the designer.
    pub fn simulate_clicks(
        &self,
        rules: &[ScoringRule],
        i: usize,
        t: f64,
        draws: usize,
        seed: u64,
    ) -> (f64, f64, f64) {
        let n = self.data.merchants();
        let chunks = draws.div_ceil(CHUNK);
        let sums: Vec<(f64, f64, usize, usize)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let m = CHUNK.min(draws - c * CHUNK);
                let mut w = vec![0.0; n];
                let (mut s1, mut s2, mut ties) = (0.0, 0.0, 0);
                for _ in 0..m {
                    self.data.sample(&mut rng, &mut w);
                    let mut best = f64::NEG_INFINITY;
                    let mut winner = None;
                    let mut tied = false;
                    for j in 0..n {
                        let th = if j == i { t } else { self.virtuals[j].dist().sample(&mut rng) };
                        let q = w[j] * rules[j].score(th);
                        if q > best {
                            best = q;
                            winner = Some(j);
                            tied = false;
                        } else if q == best {
                            tied = true;
                        }
                    }
                    if tied {
                        ties += 1;
                    } else if winner == Some(i) && best > 0.0 {
                        s1 += w[i];
                        s2 += w[i] * w[i];
                    }
                }
                (s1, s2, ties, m)
            })
            .collect();
        let (s1, s2, ties, m) = sums
            .into_iter()
            .fold((0.0, 0.0, 0, 0), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2, a.3 + v.3));
        let nf = m as f64;
        let mean = s1 / nf;
        let se = ((s2 / nf - mean * mean).max(0.0) / nf).sqrt();
        (mean, se, ties as f64 / nf)
    }
}

fn max_free(residual: &[f64], corner: &[bool]) -> f64 {
    residual
        .iter()
        .zip(corner)
        .filter(|(_, c)| !**c)
        .map(|(r, _)| r.abs())
        .fold(0.0, f64::max)
}

/// Gaussian elimination with partial pivoting; `None` if singular.
#[allow(clippy::needless_range_loop)]
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Add the band edges of a rule as ordinary nodes.
fn with_band_edges<F: Fn(f64) -> f64>(curve: InterimCurve, lo: f64, hi: f64, f: F) -> InterimCurve {
    let mut pts: Vec<(f64, f64)> = curve
        .theta()
        .iter()
        .copied()
        .zip(curve.clicks().iter().copied())
        .collect();
    for e in [lo, hi] {
        if pts.iter().all(|p| (p.0 - e).abs() > 1e-12) {
            pts.push((e, f(e)));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t, s) = pts.into_iter().unzip();
    InterimCurve::new(t, s)
}

/// Solution of the symmetric single equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricSolution {
    pub n: usize,
    pub z: f64,
    pub residual: f64,
    pub corner: bool,
}

/// `E[ω x(ω u)^{N−1}]` for i.i.d. coordinates, opponents on `rule`.
pub fn symmetric_clicks(rule: &ScoringRule, law: &CtrLaw, n: usize, u: f64, res: Resolution) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let mut kinks = Vec::new();
    for c in score_levels(rule) {
        if c > 0.0 && c.is_finite() {
            for e in law.knots() {
                kinks.push(c * e / u);
            }
        }
    }
    let power = (n - 1) as i32;
    law.expect(&kinks, res.outer, |w| {
        w * win_prob(rule, law, w * u, res.inner).powi(power)
    })
}

/// Resolution that resolves the peak of `x^{N−1}` for large `N`.
pub fn symmetric_resolution(n: usize) -> Resolution {
    Resolution {
        inner: 4,
        outer: (n / 4).clamp(8, 64),
    }
}

/// `h(z) = E[ω x(z ω)^{N−1}] − E[ω]/N`.
pub fn symmetric_residual(law: &CtrLaw, vf: &WeightedVirtual, n: usize, z: f64) -> Result<f64> {
    let rule = ScoringRule::from_virtual(vf.clone(), z)?;
    Ok(symmetric_clicks(&rule, law, n, z, symmetric_resolution(n)) - law.mean() / n as f64)
}

/// Common ironing level `z_N` of the symmetric i.i.d. model with `N`
/// merchants, by bisection on the increasing `h(z)`.
pub fn solve_symmetric(law: &CtrLaw, dist: &TypeDistribution, eta: WelfareWeight, n: usize) -> Result<SymmetricSolution> {
    if n < 2 {
        return Err(Error::invalid("N", "need at least two merchants"));
    }
    let vf = WeightedVirtual::new(dist.clone(), eta);
    let lo = vf.z_min();
    let mut hi = vf.z_max();
    if !hi.is_finite() {
        hi = 1.0_f64.max(lo);
        while symmetric_residual(law, &vf, n, hi)? < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::NonConvergence {
                    solver: "solve_symmetric",
                    iterations: 0,
                    residual: f64::NAN,
                    trace: vec![],
                });
            }
        }
    }
    let top = symmetric_residual(law, &vf, n, hi)?;
    if top < 0.0 {
        return Ok(SymmetricSolution {
            n,
            z: hi,
            residual: top,
            corner: true,
        });
    }
    let z = bisect(
        |z| symmetric_residual(law, &vf, n, z).expect("inside bracket"),
        lo,
        hi,
        1e-11,
        200,
    );
    Ok(SymmetricSolution {
        n,
        z,
        residual: symmetric_residual(law, &vf, n, z)?,
        corner: false,
    })
}

/// Clicks under the outside-option guarantee rule `x_i = λ(i) dμ_i/dα`, by
/// Monte Carlo over `α`: `(mean, stderr)` per merchant.
pub fn rn_continuum_baseline(data: &ContinuumDataset, draws: usize, seed: u64) -> Vec<(f64, f64)> {
    let n = data.merchants();
    let chunks = draws.div_ceil(CHUNK);
    let sums: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let m = CHUNK.min(draws - c * CHUNK);
            let mut w = vec![0.0; n];
            let (mut s1, mut s2) = (vec![0.0; n], vec![0.0; n]);
            for _ in 0..m {
                data.sample(&mut rng, &mut w);
                for i in 0..n {
                    let v = w[i] * data.lambda[i] * data.rn_weight(i, &w);
                    s1[i] += v;
                    s2[i] += v * v;
                }
            }
            (s1, s2, m)
        })
        .collect();
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let mut m = 0;
    for (a, b, k) in sums {
        for i in 0..n {
            s1[i] += a[i];
            s2[i] += b[i];
        }
        m += k;
    }
    let nf = m as f64;
    (0..n)
        .map(|i| {
            let mean = s1[i] / nf;
            (mean, ((s2[i] / nf - mean * mean).max(0.0) / nf).sqrt())
        })
        .collect()
}

/// Marginal feasibility of the guarantee rule on rectangles: for each
/// rectangle `(α(E), estimate of E_α[Σ_i x_i 1_E], stderr)`.
pub fn rn_marg_check(
    data: &ContinuumDataset,
    rects: &[Vec<(f64, f64)>],
    draws: usize,
    seed: u64,
) -> Vec<(f64, f64, f64)> {
    let n = data.merchants();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; n];
    let mut s1 = vec![0.0; rects.len()];
    let mut s2 = vec![0.0; rects.len()];
    for _ in 0..draws {
        data.sample(&mut rng, &mut w);
        let total: f64 = (0..n).map(|i| data.lambda[i] * data.rn_weight(i, &w)).sum();
        for (r, rect) in rects.iter().enumerate() {
            let inside = rect.iter().zip(&w).all(|(&(lo, hi), &x)| x >= lo && x <= hi);
            let v = if inside { total } else { 0.0 };
            s1[r] += v;
            s2[r] += v * v;
        }
    }
    let nf = draws as f64;
    rects
        .iter()
        .enumerate()
        .map(|(r, rect)| {
            let mean = s1[r] / nf;
            let se = ((s2[r] / nf - mean * mean).max(0.0) / nf).sqrt();
            (data.aggregate_prob(rect), mean, se)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd_eta() -> WelfareWeight {
        WelfareWeight::revenue()
    }

    #[test]
    fn ctr_law_moments() {
        let u = CtrLaw::uniform(0.2, 1.0).unwrap();
        assert!((u.mean() - 0.6).abs() < 1e-15);
        let p = CtrLaw::piecewise_cdf(&[(0.2, 0.0), (1.0, 1.0)]).unwrap();
        assert!((p.mean() - 0.6).abs() < 1e-12);
        assert!((p.quantile(0.5) - 0.6).abs() < 1e-12);
        let b = CtrLaw::beta(2.0, 3.0).unwrap();
        let m = b.expect(&[], 8, |w| w);
        assert!((m - 0.4).abs() < 1e-12);
        assert!(CtrLaw::uniform(0.5, 0.5).is_err());
    }

    #[test]
    fn zero_level_gives_zero_clicks() {
        let data = ContinuumDataset::iid(2, CtrLaw::uniform(0.0, 1.0).unwrap()).unwrap();
        let m = ContinuumModel::symmetric(data, TypeDistribution::uniform(), pd_eta()).unwrap();
        let r = m.optz_residual(&[0.0, 0.5]).unwrap();
        assert!((r[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_ctrs_recover_partnership_dissolution() {
        // With ω ≈ 1 the left side at z = ½ is Pr(g_2 < ½) + ½ Pr(g_2 = ½) = ½,
        // the outside option of a merchant with half the customers.
        let data = ContinuumDataset::iid(2, CtrLaw::uniform(0.999_999, 1.0).unwrap()).unwrap();
        let m = ContinuumModel::symmetric(data, TypeDistribution::uniform(), pd_eta()).unwrap();
        let r = m.optz_residual(&[0.5, 0.5]).unwrap();
        assert!(r[0].abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn symmetric_and_general_solvers_agree() {
        let law = CtrLaw::uniform(0.3, 1.0).unwrap();
        let s = solve_symmetric(&law, &TypeDistribution::uniform(), pd_eta(), 2).unwrap();
        let data = ContinuumDataset::iid(2, law).unwrap();
        let m = ContinuumModel::symmetric(data, TypeDistribution::uniform(), pd_eta()).unwrap();
        let sol = m.solve_optz().unwrap();
        assert!((sol.z[0] - s.z).abs() < 1e-5, "{:?} vs {}", sol.z, s.z);
        assert!((sol.z[0] - sol.z[1]).abs() < 1e-6);
    }

    #[test]
    fn rn_weight_is_one_for_identical_laws() {
        let data = ContinuumDataset::iid(3, CtrLaw::beta(2.0, 2.0).unwrap()).unwrap();
        assert!((data.rn_weight(1, &[0.2, 0.5, 0.9]) - 1.0).abs() < 1e-12);
    }
}
