//! Finite-profile scoring mechanisms.
//!
//! Customers come in finitely many CTR profiles `ω`. Each profile's mass goes
//! to the merchant with the highest quality score `ω_i g_i(θ_i)`; the designer
//! competes with score 0 and takes untargeted customers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::interim::{
    worst_off_type, InterimCurve, MechanismOutcome, MerchantInterim, DEFAULT_GRID,
};
use crate::quad::gl64;
use crate::scoring::ScoringRule;

/// Scores within this distance are tied.
pub const TIE_TOL: f64 = 1e-9;

/// Customer profiles with per-merchant masses.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDataset {
    n: usize,
    profiles: Vec<Vec<f64>>,
    masses: Vec<Vec<f64>>,
}

impl FiniteDataset {
    /// `profiles[k]` is a CTR vector; `masses[k][i]` is merchant i's mass of it.
    pub fn new(profiles: Vec<Vec<f64>>, masses: Vec<Vec<f64>>) -> Result<Self> {
        let n = profiles.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::invalid("profiles", "need at least two merchants"));
        }
        if profiles.len() != masses.len() {
            return Err(Error::invalid("masses", "one mass vector per profile"));
        }
        let mut total = 0.0;
        for (k, (w, m)) in profiles.iter().zip(&masses).enumerate() {
            if w.len() != n || m.len() != n {
                return Err(Error::invalid(format!("profiles[{k}]"), format!("expected {n} entries")));
            }
            if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("profiles[{k}]"), "CTRs must lie in [0, 1]"));
            }
            if m.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("masses[{k}]"), "masses must be nonnegative"));
            }
            total += m.iter().sum::<f64>();
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("masses", format!("total mass must be 1, got {total}")));
        }
        Ok(Self { n, profiles, masses })
    }

    pub fn merchants(&self) -> usize {
        self.n
    }

    pub fn profiles(&self) -> &[Vec<f64>] {
        &self.profiles
    }

    pub fn masses(&self) -> &[Vec<f64>] {
        &self.masses
    }

    /// `α(ω)` for profile `k`.
    pub fn profile_mass(&self, k: usize) -> f64 {
        self.masses[k].iter().sum()
    }

    /// Outside option `a_i = Σ_ω ω_i α_i^ω`.
    pub fn outside(&self, i: usize) -> f64 {
        self.profiles
            .iter()
            .zip(&self.masses)
            .map(|(w, m)| w[i] * m[i])
            .sum()
    }

    pub fn outside_options(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.outside(i)).collect()
    }
}

/// How ties on one profile are split.
#[derive(Debug, Clone, PartialEq)]
pub enum TieBreak {
    /// Even split among tied merchants; ties with the designer go to the designer.
    Even,
    /// Merchant weights. With the designer tied, merchant `i` in the tie gets
    /// `w_i` (rescaled if the tied weights exceed 1) and the designer the rest;
    /// otherwise the tied merchants split in proportion to their weights.
    Weights(Vec<f64>),
}

/// One [`TieBreak`] per customer profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TieBreakRule {
    per_profile: Vec<TieBreak>,
}

impl TieBreakRule {
    pub fn even(profiles: usize) -> Self {
        Self {
            per_profile: vec![TieBreak::Even; profiles],
        }
    }

    pub fn new(per_profile: Vec<TieBreak>) -> Result<Self> {
        for (k, t) in per_profile.iter().enumerate() {
            if let TieBreak::Weights(w) = t {
                if w.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::invalid(format!("tie_break[{k}]"), "weights must be nonnegative"));
                }
            }
        }
        Ok(Self { per_profile })
    }

    pub fn set(&mut self, k: usize, t: TieBreak) {
        self.per_profile[k] = t;
    }

    pub fn get(&self, k: usize) -> &TieBreak {
        &self.per_profile[k]
    }

    /// Share of merchant `i` when `tied` merchants (including `i`) hold the top
    /// score, with or without the designer in the tie.
    pub fn share(&self, k: usize, i: usize, tied: &[usize], designer: bool) -> f64 {
        match &self.per_profile[k] {
            TieBreak::Even => {
                if designer {
                    0.0
                } else {
                    1.0 / tied.len() as f64
                }
            }
            TieBreak::Weights(w) => {
                let sum: f64 = tied.iter().map(|&j| w[j]).sum();
                if designer {
                    w[i] / sum.max(1.0)
                } else if sum > 0.0 {
                    w[i] / sum
                } else {
                    1.0 / tied.len() as f64
                }
            }
        }
    }
}

/// How interim clicks integrate over opponents' types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integration {
    /// Exact: opponents' scores enter through their distribution functions.
    Exact,
    /// Tensor Gauss–Legendre with 64 nodes per opponent (N ≤ 3).
    GaussLegendre,
    /// Seeded Monte Carlo.
    MonteCarlo { draws: usize, seed: u64 },
}

/// Per-profile allocation; entry 0 of each row is the designer.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FiniteMechanism {
    data: FiniteDataset,
    rules: Vec<ScoringRule>,
    ties: TieBreakRule,
    grid: usize,
    integration: Integration,
    attain_tol: f64,
}

impl FiniteMechanism {
    pub fn new(data: FiniteDataset, rules: Vec<ScoringRule>, ties: TieBreakRule) -> Result<Self> {
        if rules.len() != data.merchants() {
            return Err(Error::invalid("rules", "one scoring rule per merchant"));
        }
        if ties.per_profile.len() != data.profiles().len() {
            return Err(Error::invalid("tie_break", "one tie-break entry per profile"));
        }
        for (k, t) in ties.per_profile.iter().enumerate() {
            if let TieBreak::Weights(w) = t {
                if w.len() != data.merchants() {
                    return Err(Error::invalid(format!("tie_break[{k}]"), "one weight per merchant"));
                }
            }
        }
        let eta = rules[0].eta();
        if rules.iter().any(|r| r.eta() != eta) {
            return Err(Error::invalid("rules", "all rules must share the welfare weights"));
        }
        Ok(Self {
            data,
            rules,
            ties,
            grid: DEFAULT_GRID,
            integration: Integration::Exact,
            attain_tol: 1e-7,
        })
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid.max(3);
        self
    }

    pub fn with_integration(mut self, integration: Integration) -> Self {
        self.integration = integration;
        if let Integration::GaussLegendre = integration {
            self.attain_tol = self.attain_tol.max(1e-3);
        }
        self
    }

    /// Tolerance for declaring `S_i = a_i` attained.
    pub fn with_attain_tol(mut self, tol: f64) -> Self {
        self.attain_tol = tol;
        self
    }

    pub fn data(&self) -> &FiniteDataset {
        &self.data
    }

    pub fn rules(&self) -> &[ScoringRule] {
        &self.rules
    }

    pub fn ties(&self) -> &TieBreakRule {
        &self.ties
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn eta(&self) -> WelfareWeight {
        self.rules[0].eta()
    }

    pub fn virtuals(&self) -> Vec<WeightedVirtual> {
        self.rules.iter().map(|r| r.virtual_fns().clone()).collect()
    }

    /// Split every profile's mass at the type profile `theta`.
    pub fn allocate(&self, theta: &[f64]) -> Allocation {
        let n = self.data.merchants();
        let scores: Vec<f64> = self.rules.iter().zip(theta).map(|(r, &t)| r.score(t)).collect();
        let mut x = Vec::with_capacity(self.data.profiles().len());
        let mut tied = Vec::with_capacity(n);
        for (k, w) in self.data.profiles().iter().enumerate() {
            let mass = self.data.profile_mass(k);
            let q: Vec<f64> = (0..n).map(|i| w[i] * scores[i]).collect();
            let top = q.iter().copied().fold(0.0, f64::max);
            let designer = top <= TIE_TOL;
            tied.clear();
            tied.extend((0..n).filter(|&i| q[i] >= top - TIE_TOL));
            let mut row = vec![0.0; n + 1];
            let mut given = 0.0;
            for &i in &tied {
                let s = self.ties.share(k, i, &tied, designer) * mass;
                row[i + 1] = s;
                given += s;
            }
            row[0] = (mass - given).max(0.0);
            x.push(row);
        }
        Allocation { x }
    }

    /// Clicks of merchant `i` at a type profile.
    pub fn clicks(&self, i: usize, theta: &[f64]) -> f64 {
        let alloc = self.allocate(theta);
        self.data
            .profiles()
            .iter()
            .zip(&alloc.x)
            .map(|(w, row)| w[i] * row[i + 1])
            .sum()
    }

    /// Interim clicks `S_i(θ_i)` integrated exactly over opponents.
    pub fn interim_clicks(&self, i: usize, t: f64) -> f64 {
        let n = self.data.merchants();
        let s_own = self.rules[i].score(t);
        let mut total = 0.0;
        let mut lt = vec![0.0; n];
        let mut eq = vec![0.0; n];
        for (k, w) in self.data.profiles().iter().enumerate() {
            let mass = self.data.profile_mass(k);
            if w[i] == 0.0 || mass == 0.0 {
                continue;
            }
            let s = w[i] * s_own;
            let designer = s <= TIE_TOL;
            let mut dead = false;
            for j in (0..n).filter(|&j| j != i) {
                if w[j] == 0.0 {
                    let tie = designer;
                    lt[j] = if tie { 0.0 } else { 1.0 };
                    eq[j] = if tie { 1.0 } else { 0.0 };
                } else {
                    let below = self.rules[j].prob_score_below((s - TIE_TOL) / w[j]);
                    let at_most = self.rules[j].prob_score_at_most((s + TIE_TOL) / w[j]);
                    lt[j] = below;
                    eq[j] = (at_most - below).max(0.0);
                }
                if lt[j] + eq[j] <= 0.0 {
                    dead = true;
                }
            }
            if dead {
                continue;
            }
            let tiers: Vec<usize> = (0..n).filter(|&j| j != i && eq[j] > 0.0).collect();
            let sure: f64 = (0..n)
                .filter(|&j| j != i && eq[j] <= 0.0)
                .map(|j| lt[j])
                .product();
            let mut win = 0.0;
            let mut tied = Vec::with_capacity(n);
            for mask in 0u64..(1u64 << tiers.len()) {
                let mut p = sure;
                tied.clear();
                tied.push(i);
                for (b, &j) in tiers.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        p *= eq[j];
                        tied.push(j);
                    } else {
                        p *= lt[j];
                    }
                }
                if p <= 0.0 {
                    continue;
                }
                tied.sort_unstable();
                win += p * self.ties.share(k, i, &tied, designer);
            }
            total += w[i] * mass * win;
        }
        total
    }

    /// Interim clicks by tensor Gauss–Legendre over opponents' types.
    pub fn interim_clicks_gl(&self, i: usize, t: f64) -> f64 {
        let n = self.data.merchants();
        let rule = gl64();
        let nodes: Vec<(f64, f64)> = rule.points(0.0, 1.0).collect();
        let opp: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut idx = vec![0usize; opp.len()];
        let mut theta = vec![0.0; n];
        theta[i] = t;
        let mut total = 0.0;
        loop {
            let mut wt = 1.0;
            for (slot, &j) in opp.iter().enumerate() {
                let (x, w) = nodes[idx[slot]];
                theta[j] = x;
                wt *= w * self.rules[j].dist().pdf(x);
            }
            total += wt * self.clicks(i, &theta);
            let mut slot = 0;
            loop {
                if slot == opp.len() {
                    return total;
                }
                idx[slot] += 1;
                if idx[slot] < nodes.len() {
                    break;
                }
                idx[slot] = 0;
                slot += 1;
            }
        }
    }

    /// Interim clicks by Monte Carlo, with standard error.
    pub fn interim_clicks_mc(&self, i: usize, t: f64, draws: usize, seed: u64, stream: u64) -> (f64, f64) {
        let n = self.data.merchants();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut theta = vec![0.0; n];
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            for (j, th) in theta.iter_mut().enumerate() {
                *th = if j == i {
                    t
                } else {
                    self.rules[j].dist().quantile(rng.gen::<f64>())
                };
            }
            let c = self.clicks(i, &theta);
            s1 += c;
            s2 += c * c;
        }
        let nf = draws as f64;
        let mean = s1 / nf;
        (mean, ((s2 / nf - mean * mean).max(0.0) / nf).sqrt())
    }

    /// Types at which `S_i` may jump: band edges and points where merchant
    /// i's score meets an opponent's band level.
    pub fn jump_points(&self, i: usize) -> Vec<f64> {
        let r = &self.rules[i];
        let (lo, hi) = r.tie_interval();
        let mut pts = vec![lo, hi];
        for w in self.data.profiles() {
            if w[i] == 0.0 {
                continue;
            }
            let mut levels = vec![0.0];
            for (j, rj) in self.rules.iter().enumerate() {
                if j != i && w[j] > 0.0 {
                    levels.push(w[j] * rj.z() / w[i]);
                }
            }
            pts.extend(levels.into_iter().filter_map(|l| r.type_at_score(l)));
        }
        pts
    }

    /// Interim clicks of merchant `i` on the grid.
    pub fn interim_curve(&self, i: usize) -> InterimCurve {
        let jumps = self.jump_points(i);
        match self.integration {
            Integration::Exact => InterimCurve::tabulate(self.grid, &jumps, |t| self.interim_clicks(i, t)),
            Integration::GaussLegendre => {
                InterimCurve::tabulate(self.grid, &jumps, |t| self.interim_clicks_gl(i, t))
            }
            Integration::MonteCarlo { draws, seed } => {
                let base = (i as u64) << 32;
                InterimCurve::tabulate_noisy(self.grid, &jumps, |k, t| {
                    self.interim_clicks_mc(i, t, draws, seed, base + k as u64)
                })
            }
        }
    }

    /// Interim curves, worst-off types, transfers and objective.
    pub fn outcome(&self) -> MechanismOutcome {
        let merchants = (0..self.data.merchants())
            .map(|i| {
                let curve = self.interim_curve(i);
                let a = self.data.outside(i);
                let tol = match curve.stderr() {
                    Some(se) => self.attain_tol.max(3.0 * se.iter().copied().fold(0.0, f64::max)),
                    None => self.attain_tol,
                };
                let w = worst_off_type(&curve, a, Some(self.rules[i].critical_type()), tol);
                MerchantInterim::new(curve, a, w)
            })
            .collect();
        MechanismOutcome::new(merchants, self.virtuals())
    }
}

/// The no-trade allocation `x = α`, `t = 0`.
#[derive(Debug, Clone)]
pub struct Baseline {
    data: FiniteDataset,
}

impl Baseline {
    pub fn allocate(&self) -> Allocation {
        let x = self
            .data
            .masses()
            .iter()
            .map(|m| {
                let mut row = vec![0.0];
                row.extend_from_slice(m);
                row
            })
            .collect();
        Allocation { x }
    }

    /// Interim clicks, identical for every type.
    pub fn interim_clicks(&self, i: usize) -> f64 {
        let alloc = self.allocate();
        self.data
            .profiles()
            .iter()
            .zip(&alloc.x)
            .map(|(w, row)| w[i] * row[i + 1])
            .sum()
    }

    /// Outcome with zero transfers.
    pub fn outcome(&self, dists: &[TypeDistribution], eta: WelfareWeight, grid: usize) -> MechanismOutcome {
        let merchants = (0..self.data.merchants())
            .map(|i| {
                let curve = InterimCurve::constant(self.interim_clicks(i), grid);
                let a = self.data.outside(i);
                let w = worst_off_type(&curve, a, None, 1e-12);
                MerchantInterim::new(curve, a, w)
            })
            .collect();
        let virtuals = dists
            .iter()
            .map(|d| WeightedVirtual::new(d.clone(), eta))
            .collect();
        MechanismOutcome::new(merchants, virtuals)
    }
}

/// Outside-option guarantee: every merchant keeps its own customers.
pub fn rn_baseline(data: &FiniteDataset) -> Baseline {
    Baseline { data: data.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd() -> FiniteMechanism {
        let data = FiniteDataset::new(vec![vec![1.0, 1.0]], vec![vec![0.5, 0.5]]).unwrap();
        let r = ScoringRule::new(TypeDistribution::uniform(), WelfareWeight::revenue(), 0.5).unwrap();
        FiniteMechanism::new(data, vec![r.clone(), r], TieBreakRule::even(1)).unwrap()
    }

    #[test]
    fn allocation_follows_scores() {
        let m = pd();
        assert_eq!(m.allocate(&[0.9, 0.2]).x[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(m.allocate(&[0.5, 0.5]).x[0], vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn dataset_validation() {
        assert!(FiniteDataset::new(vec![vec![1.0]], vec![vec![1.0]]).is_err());
        assert!(FiniteDataset::new(vec![vec![1.0, 1.0]], vec![vec![0.5, 0.4]]).is_err());
        assert!(FiniteDataset::new(vec![vec![1.0, 1.2]], vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn weighted_ties_with_designer() {
        let t = TieBreakRule::new(vec![TieBreak::Weights(vec![0.4, 0.2])]).unwrap();
        assert_eq!(t.share(0, 0, &[0, 1], true), 0.4);
        assert!((t.share(0, 0, &[0, 1], false) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(TieBreakRule::even(1).share(0, 0, &[0], true), 0.0);
    }

    #[test]
    fn pd_band_clicks_equal_the_share() {
        let m = pd();
        for t in [0.25, 0.4, 0.5, 0.75] {
            assert!((m.interim_clicks(0, t) - 0.5).abs() < 1e-9);
        }
        assert!((m.interim_clicks(0, 0.1) - 0.1).abs() < 1e-9);
    }
}
