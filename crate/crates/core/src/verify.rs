//! Numerical verification of finite mechanisms.
//!
//! Every check returns a [`CheckEntry`] with its tolerance, the worst
//! violation found (in payoff or objective units, positive means violated)
//! and a witness when it fails.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::{TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::finite::{FiniteDataset, FiniteMechanism, TieBreak, TieBreakRule};
use crate::interim::{uniform_grid, MechanismOutcome};
use crate::quad::adaptive_simpson;
use crate::scoring::ScoringRule;

/// Where a check failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    /// A single type of one merchant.
    Type { merchant: usize, theta: f64 },
    /// A type and the report it prefers.
    Deviation { merchant: usize, theta: f64, report: f64 },
    /// A type profile and customer profile.
    State { theta: Vec<f64>, profile: usize },
    /// A full report profile `θ′`.
    Profile { theta: Vec<f64> },
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Type { merchant, theta } => write!(f, "merchant={merchant} theta={theta}"),
            Witness::Deviation {
                merchant,
                theta,
                report,
            } => write!(f, "merchant={merchant} theta={theta} report={report}"),
            Witness::State { theta, profile } => write!(f, "theta={theta:?} profile={profile}"),
            Witness::Profile { theta } => write!(f, "theta={theta:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    /// Largest violation found; `<= tolerance` when passed.
    pub worst: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
}

impl CheckEntry {
    fn new(name: &str, worst: f64, tolerance: f64, witness: Option<Witness>) -> Self {
        let passed = worst <= tolerance;
        Self {
            name: name.to_string(),
            passed,
            worst,
            tolerance,
            witness: if passed { None } else { witness },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// `check.key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}.passed={}\n", e.name, e.passed));
            out.push_str(&format!("{}.worst={:e}\n", e.name, e.worst));
            out.push_str(&format!("{}.tolerance={:e}\n", e.name, e.tolerance));
            if let Some(w) = &e.witness {
                out.push_str(&format!("{}.witness={}\n", e.name, w));
            }
        }
        out.push_str(&format!("all.passed={}\n", self.passed()));
        out
    }
}

/// Tolerances and sampling budget of [`verify_finite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub ic_eps: f64,
    pub ir_eps: f64,
    pub envelope_tol: f64,
    pub saddle_tol: f64,
    pub identity_tol: f64,
    /// Sampled type profiles for the pointwise and feasibility checks.
    pub samples: usize,
    /// Points in the per-coordinate `θ′` scan.
    pub scan: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            ic_eps: 1e-4,
            ir_eps: 1e-4,
            envelope_tol: 1e-4,
            saddle_tol: 1e-7,
            identity_tol: 1e-6,
            samples: 2000,
            scan: 201,
            seed: 0,
        }
    }
}

/// Grid IC: no node type gains more than `eps` by reporting another node.
pub fn check_ic(outcome: &MechanismOutcome, eps: f64) -> CheckEntry {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for (i, m) in outcome.merchants.iter().enumerate() {
        let th = m.curve.theta();
        let s = m.curve.clicks();
        for k in 0..th.len() {
            for j in 0..th.len() {
                let dev = th[k] * (s[j] - m.outside) - m.transfers[j];
                let gain = dev - m.payoffs[k];
                if gain > worst {
                    worst = gain;
                    witness = Some(Witness::Deviation {
                        merchant: i,
                        theta: th[k],
                        report: th[j],
                    });
                }
            }
        }
    }
    CheckEntry::new("ic", worst.max(0.0), eps, witness)
}

/// IR: `U_i >= −eps` everywhere, and `min U_i <= eps` where the worst-off
/// type is attained.
pub fn check_ir(outcome: &MechanismOutcome, eps: f64) -> CheckEntry {
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for (i, m) in outcome.merchants.iter().enumerate() {
        let th = m.curve.theta();
        let (k_min, u_min) = m
            .payoffs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, u)| if u < acc.1 { (k, u) } else { acc });
        if -u_min > worst {
            worst = -u_min;
            witness = Some(Witness::Type {
                merchant: i,
                theta: th[k_min],
            });
        }
        if m.worst_off.attained && u_min > worst {
            worst = u_min;
            witness = Some(Witness::Type {
                merchant: i,
                theta: m.worst_off.theta,
            });
        }
    }
    CheckEntry::new("ir", worst, eps, witness)
}

/// `S_i` nondecreasing on the grid, up to three standard errors.
pub fn check_monotonicity(outcome: &MechanismOutcome) -> CheckEntry {
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for (i, m) in outcome.merchants.iter().enumerate() {
        let th = m.curve.theta();
        let s = m.curve.clicks();
        let se = m.curve.stderr();
        for k in 0..s.len() - 1 {
            let noise = se.map_or(0.0, |e| 3.0 * (e[k] * e[k] + e[k + 1] * e[k + 1]).sqrt());
            let drop = s[k] - s[k + 1] - noise;
            if drop > worst {
                worst = drop;
                witness = Some(Witness::Type {
                    merchant: i,
                    theta: th[k + 1],
                });
            }
        }
    }
    CheckEntry::new("monotonicity", worst, 1e-12, witness)
}

/// Envelope: `U_i(θ) − U_i(θ̂_i)` against an adaptive quadrature of the exact
/// interim clicks `∫_{θ̂}^{θ} (S_i − a_i)`.
pub fn check_envelope(mech: &FiniteMechanism, outcome: &MechanismOutcome, tol: f64) -> CheckEntry {
    let results: Vec<(f64, Option<Witness>)> = outcome
        .merchants
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let a = m.outside;
            let hat = m.worst_off.theta;
            let u_hat = m.payoff_at(hat);
            let mut breaks = mech.jump_points(i);
            breaks.extend(m.curve.theta().iter().copied());
            breaks.push(hat);
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let mut cum = vec![0.0; breaks.len()];
            for k in 1..breaks.len() {
                let piece = adaptive_simpson(
                    |t| mech.interim_clicks(i, t) - a,
                    breaks[k - 1],
                    breaks[k],
                    1e-10,
                );
                cum[k] = cum[k - 1] + piece;
            }
            let k_hat = breaks.iter().position(|&b| b == hat).expect("θ̂ is a breakpoint");
            let mut worst: f64 = 0.0;
            let mut witness = None;
            for (k, &t) in breaks.iter().enumerate() {
                let exact = cum[k] - cum[k_hat];
                let err = (m.payoff_at(t) - u_hat - exact).abs();
                if err > worst {
                    worst = err;
                    witness = Some(Witness::Type { merchant: i, theta: t });
                }
            }
            (worst, witness)
        })
        .collect();
    let (worst, witness) = results
        .into_iter()
        .fold((0.0, None), |acc, r| if r.0 > acc.0 { r } else { acc });
    CheckEntry::new("envelope", worst, tol, witness)
}

fn sample_profile(mech: &FiniteMechanism, rng: &mut ChaCha8Rng) -> Vec<f64> {
    mech.rules().iter().map(|r| r.dist().sample(rng)).collect()
}

/// Allocation rows are nonnegative and exhaust each profile's mass.
pub fn check_feasibility(mech: &FiniteMechanism, samples: usize, seed: u64) -> CheckEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for _ in 0..samples {
        let theta = sample_profile(mech, &mut rng);
        let alloc = mech.allocate(&theta);
        for (k, row) in alloc.x.iter().enumerate() {
            let mass = mech.data().profile_mass(k);
            let total: f64 = row.iter().sum();
            let neg = row.iter().copied().fold(0.0, |m: f64, v| m.max(-v));
            let err = (total - mass).abs().max(neg);
            if err > worst {
                worst = err;
                witness = Some(Witness::State {
                    theta: theta.clone(),
                    profile: k,
                });
            }
        }
    }
    CheckEntry::new("feasibility", worst, 1e-12, witness)
}

/// Saddle-point checks at the candidate worst-off profile `theta_hat`.
///
/// `saddle.pointwise`: for sampled types each customer profile goes to a
/// maximizer of `Σ_i x_i ω_i g_i(θ_i)` over mass splits (a vertex: the best
/// merchant or the designer at 0). `saddle.min`: `θ′_i ↦ ψ_i(θ′_i)` is
/// minimized at `θ̂_i` on a grid scan. `saddle.identity`: `ψ(x, θ′) −
/// η_r Σ U_i(θ′_i)` equals the objective at random `θ′`.
pub fn check_saddle(
    mech: &FiniteMechanism,
    outcome: &MechanismOutcome,
    theta_hat: &[f64],
    opts: &VerifyOptions,
) -> Vec<CheckEntry> {
    let data = mech.data();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for _ in 0..opts.samples {
        let theta = sample_profile(mech, &mut rng);
        let g: Vec<f64> = mech.rules().iter().zip(&theta).map(|(r, &t)| r.score(t)).collect();
        let alloc = mech.allocate(&theta);
        for (k, (w, row)) in data.profiles().iter().zip(&alloc.x).enumerate() {
            let mass = data.profile_mass(k);
            let vertex = g.iter().zip(w).map(|(gi, wi)| wi * gi).fold(0.0, f64::max) * mass;
            let got: f64 = (0..g.len()).map(|i| row[i + 1] * w[i] * g[i]).sum();
            let gap = vertex - got;
            if gap > worst {
                worst = gap;
                witness = Some(Witness::State {
                    theta: theta.clone(),
                    profile: k,
                });
            }
        }
    }
    let pointwise = CheckEntry::new("saddle.pointwise", worst, 1e-9, witness);

    let grid = uniform_grid(opts.scan);
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for (i, &hat) in theta_hat.iter().enumerate() {
        let at_hat = outcome.virtual_term(i, hat);
        let (arg, min) = grid
            .par_iter()
            .map(|&t| (t, outcome.virtual_term(i, t)))
            .collect::<Vec<_>>()
            .into_iter()
            .fold((hat, at_hat), |acc, p| if p.1 < acc.1 { p } else { acc });
        let gap = at_hat - min;
        if gap > worst {
            worst = gap;
            witness = Some(Witness::Type {
                merchant: i,
                theta: arg,
            });
        }
    }
    let min_check = CheckEntry::new("saddle.min", worst, opts.saddle_tol, witness);

    let mut worst: f64 = 0.0;
    let mut witness = None;
    for _ in 0..5 {
        let tp = sample_profile(mech, &mut rng);
        let err = (outcome.objective_via(&tp) - outcome.parts.value).abs();
        if err > worst {
            worst = err;
            witness = Some(Witness::Profile { theta: tp });
        }
    }
    let identity = CheckEntry::new("saddle.identity", worst, opts.identity_tol, witness);
    vec![pointwise, min_check, identity]
}

/// Every check on a finite scoring mechanism, with `θ̂` taken to be the
/// rules' critical types.
pub fn verify_finite(mech: &FiniteMechanism, opts: &VerifyOptions) -> VerificationReport {
    let outcome = mech.outcome();
    let theta_hat: Vec<f64> = mech.rules().iter().map(|r| r.critical_type()).collect();
    let mut entries = vec![
        check_feasibility(mech, opts.samples, opts.seed),
        check_ic(&outcome, opts.ic_eps),
        check_ir(&outcome, opts.ir_eps),
        check_monotonicity(&outcome),
        check_envelope(mech, &outcome, opts.envelope_tol),
    ];
    entries.extend(check_saddle(mech, &outcome, &theta_hat, opts));
    VerificationReport { entries }
}

/// The outcome with merchant `i`'s transfers raised by a Gaussian bump of
/// height `height` centered at `center`.
pub fn corrupt_transfers(
    outcome: &MechanismOutcome,
    i: usize,
    center: f64,
    height: f64,
    width: f64,
) -> MechanismOutcome {
    let mut merchants = outcome.merchants.clone();
    let m = merchants[i].clone();
    let bumped: Vec<f64> = m
        .curve
        .theta()
        .iter()
        .zip(&m.transfers)
        .map(|(t, tr)| tr + height * (-((t - center) / width).powi(2)).exp())
        .collect();
    merchants[i] = m.with_transfers(bumped);
    MechanismOutcome::new(merchants, outcome.virtuals().to_vec())
}

/// Largest brute-force instance: merchants, profiles and type-grid points.
pub const BRUTE_MAX: (usize, usize, usize) = (2, 3, 21);

/// Absolute slack added to the brute-force tolerance.
pub const BRUTE_FLOOR: f64 = 1e-9;

/// Result of the exhaustive max-min search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    /// `max_x min_{θ′ ∈ grid} ψ_η(x, θ′)` over the searched family.
    pub value: f64,
    /// Ironing levels of the best candidate.
    pub z: Vec<f64>,
    /// Candidates evaluated.
    pub candidates: usize,
    /// Type-grid step.
    pub step: f64,
    /// Grid error bound at the best candidate. The slope of `ψ_i` in `θ′_i`
    /// is `η_r (S_i − a_i)`, which vanishes at the worst-off type `θ̂_i`, so
    /// the grid minimum exceeds the true one by at most
    /// `2 · step · η_r Σ_i max_{|θ − θ̂_i| ≤ 2·step} |S_i(θ) − a_i|`, plus
    /// [`BRUTE_FLOOR`] for quadrature noise.
    pub tolerance: f64,
}

/// Brute-force max-min value over score-threshold allocations.
///
/// The family is every pair of ironing levels on a `z_grid`-point grid of
/// each merchant's bracket, plus `extra_z`, crossed with per-profile tie
/// rules (even split, or weights `(w, 1 − w)` for `w ∈ {0, ¼, ½, ¾, 1}`),
/// plus `extra_ties`. For each candidate the inner minimum over `θ′` runs
/// on a `type_grid`-point grid per merchant (the objective is separable in
/// `θ′`).
#[allow(clippy::too_many_arguments)]
pub fn brute_force_value(
    data: &FiniteDataset,
    dists: &[TypeDistribution],
    eta: WelfareWeight,
    type_grid: usize,
    z_grid: usize,
    extra_z: &[Vec<f64>],
    extra_ties: &[TieBreakRule],
) -> Result<BruteForce> {
    let n = data.merchants();
    let k = data.profiles().len();
    if n != BRUTE_MAX.0 || k > BRUTE_MAX.1 || type_grid > BRUTE_MAX.2 || type_grid < 2 {
        return Err(Error::TooLarge(format!(
            "brute force supports N = {}, |Ω| <= {}, 2 <= grid <= {}; got N = {n}, |Ω| = {k}, grid = {type_grid}",
            BRUTE_MAX.0, BRUTE_MAX.1, BRUTE_MAX.2
        )));
    }
    if dists.len() != n {
        return Err(Error::invalid("distributions", "one type law per merchant"));
    }
    let levels: Vec<Vec<f64>> = dists
        .iter()
        .map(|d| {
            let vf = WeightedVirtual::new(d.clone(), eta);
            let (lo, hi) = (vf.z_min(), vf.z_max());
            let hi = if hi.is_finite() { hi } else { lo + 4.0 };
            (0..z_grid)
                .map(|j| lo + (hi - lo) * j as f64 / (z_grid.max(2) - 1) as f64)
                .collect()
        })
        .collect();
    let mut zs: Vec<Vec<f64>> = levels[0]
        .iter()
        .flat_map(|&a| levels[1].iter().map(move |&b| vec![a, b]))
        .collect();
    zs.extend(extra_z.iter().cloned());

    let mut options = vec![TieBreak::Even];
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        options.push(TieBreak::Weights(vec![w, 1.0 - w]));
    }
    let live: Vec<bool> = (0..k).map(|j| data.profile_mass(j) > 0.0).collect();
    let mut ties = tie_family(&live, &options);
    ties.extend(extra_ties.iter().cloned());

    let grid = uniform_grid(type_grid);
    let step = 1.0 / (type_grid - 1) as f64;
    let candidates: Vec<(usize, usize)> = (0..zs.len())
        .flat_map(|a| (0..ties.len()).map(move |b| (a, b)))
        .collect();
    let evaluated: Vec<Option<(f64, f64)>> = candidates
        .par_iter()
        .map(|&(a, b)| {
            let rules: Vec<ScoringRule> = dists
                .iter()
                .zip(&zs[a])
                .map(|(d, &z)| ScoringRule::new(d.clone(), eta, z))
                .collect::<Result<_>>()
                .ok()?;
            let mech = FiniteMechanism::new(data.clone(), rules, ties[b].clone()).ok()?;
            let out = mech.outcome();
            let value: f64 = (0..n)
                .map(|i| {
                    grid.iter()
                        .map(|&t| out.virtual_term(i, t))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let local: f64 = out
                .merchants
                .iter()
                .map(|m| {
                    let hat = m.worst_off.theta;
                    (0..=40)
                        .map(|j| (hat - 2.0 * step + 4.0 * step * j as f64 / 40.0).clamp(0.0, 1.0))
                        .map(|t| (m.curve.eval(t) - m.outside).abs())
                        .fold(0.0, f64::max)
                })
                .sum();
            Some((value, local))
        })
        .collect();
    let (best, lip) = evaluated
        .iter()
        .enumerate()
        .filter_map(|(c, v)| v.map(|v| (c, v)))
        .fold((None, (f64::NEG_INFINITY, 0.0)), |acc, (c, v)| {
            if v.0 > acc.1 .0 {
                (Some(c), v)
            } else {
                acc
            }
        });
    let best = best.ok_or_else(|| Error::invalid("brute force", "no feasible candidate"))?;
    Ok(BruteForce {
        value: lip.0,
        z: zs[candidates[best].0].clone(),
        candidates: candidates.len(),
        step,
        tolerance: 2.0 * step * eta.eta_r * lip.1 + BRUTE_FLOOR,
    })
}

fn tie_family(live: &[bool], options: &[TieBreak]) -> Vec<TieBreakRule> {
    let mut out = vec![TieBreakRule::even(live.len())];
    for (k, _) in live.iter().enumerate().filter(|(_, &l)| l) {
        let mut next = Vec::with_capacity(out.len() * options.len());
        for r in &out {
            for o in options {
                let mut c = r.clone();
                c.set(k, o.clone());
                next.push(c);
            }
        }
        out = next;
    }
    out
}
