//! Two merchants with exclusive and inclusive customers.
//!
//! Profile `(1,1)` customers click either merchant's ads; profile `(1,0)`
//! customers are held by merchant 2 but only click merchant 1's ads, and
//! `(0,1)` customers are held by merchant 1 but only click merchant 2's.

use crate::dist::{Side, TypeDistribution, WeightedVirtual, WelfareWeight};
use crate::error::{Error, Result};
use crate::finite::{FiniteDataset, FiniteMechanism, TieBreak, TieBreakRule};
use crate::quad::bisect;
use crate::scoring::ScoringRule;

/// Root tolerance for the pooled ironing level.
pub const ROOT_TOL: f64 = 1e-10;

/// Masses of the stylized dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExclusiveInclusiveData {
    /// `α_1^{(0,1)}`: merchant 1's customers that only click merchant 2.
    pub alpha1_01: f64,
    /// `α_2^{(1,0)}`: merchant 2's customers that only click merchant 1.
    pub alpha2_10: f64,
    /// `α_1^{(1,1)}`.
    pub alpha1_11: f64,
    /// `α_2^{(1,1)}`.
    pub alpha2_11: f64,
}

impl ExclusiveInclusiveData {
    pub fn new(alpha1_01: f64, alpha2_10: f64, alpha1_11: f64, alpha2_11: f64) -> Result<Self> {
        let named = [
            ("alpha1_01", alpha1_01),
            ("alpha2_10", alpha2_10),
            ("alpha1_11", alpha1_11),
            ("alpha2_11", alpha2_11),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        let total = alpha1_01 + alpha2_10 + alpha1_11 + alpha2_11;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("alpha", format!("masses must sum to 1, got {total}")));
        }
        Ok(Self {
            alpha1_01,
            alpha2_10,
            alpha1_11,
            alpha2_11,
        })
    }

    /// The bundling example: equal inclusive split, merchant 1 holds all
    /// exclusive customers.
    pub fn bundling(alpha11: f64) -> Result<Self> {
        if !(alpha11 > 0.0 && alpha11 < 1.0) {
            return Err(Error::Domain {
                what: "alpha11",
                value: alpha11,
            });
        }
        Self::new(1.0 - alpha11, 0.0, 0.5 * alpha11, 0.5 * alpha11)
    }

    /// Symmetric-exclusive dataset with the given shares: `α^{(1,1)} =
    /// 1/(2 − β_1 − β_2)` and both exclusive masses equal.
    pub fn from_beta(beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 >= 0.0 && beta2 >= 0.0 && beta1 + beta2 <= 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("need β_1, β_2 >= 0 and β_1 + β_2 <= 1, got ({beta1}, {beta2})"),
            ));
        }
        let a = 1.0 / (2.0 - beta1 - beta2);
        let x = 0.5 * a * (1.0 - beta1 - beta2);
        Self::new(x, x, a * beta1 + x, a * beta2 + x)
    }

    /// `α(1,1)`.
    pub fn alpha11(&self) -> f64 {
        self.alpha1_11 + self.alpha2_11
    }

    /// `ν = (1 − α(1,1)) / α(1,1)`.
    pub fn nu(&self) -> f64 {
        (1.0 - self.alpha11()) / self.alpha11()
    }

    /// Exclusive mass that merchant `i` could receive, `α_j^{ω_i}`.
    pub fn exclusive_for(&self, i: usize) -> f64 {
        if i == 0 {
            self.alpha2_10
        } else {
            self.alpha1_01
        }
    }

    pub fn inclusive_of(&self, i: usize) -> f64 {
        if i == 0 {
            self.alpha1_11
        } else {
            self.alpha2_11
        }
    }

    /// Adjusted shares `β_i = max(0, (α_i^{(1,1)} − α_j^{ω_i}) / α(1,1))`.
    pub fn beta(&self) -> (f64, f64) {
        let a = self.alpha11();
        if a <= 0.0 {
            return (0.0, 0.0);
        }
        let b = |i: usize| ((self.inclusive_of(i) - self.exclusive_for(i)) / a).max(0.0);
        (b(0), b(1))
    }

    fn swapped(&self) -> Self {
        Self {
            alpha1_01: self.alpha2_10,
            alpha2_10: self.alpha1_01,
            alpha1_11: self.alpha2_11,
            alpha2_11: self.alpha1_11,
        }
    }

    /// Profiles `(1,1)`, `(1,0)`, `(0,1)` as a finite dataset.
    pub fn to_dataset(&self) -> FiniteDataset {
        FiniteDataset::new(
            vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![
                vec![self.alpha1_11, self.alpha2_11],
                vec![0.0, self.alpha2_10],
                vec![self.alpha1_01, 0.0],
            ],
        )
        .expect("stylized masses are validated at construction")
    }
}

/// Branch of the case analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpCase {
    /// Both shares positive, pooled at the floor `z̲`.
    BothFloor,
    /// Both shares positive, common interior level.
    BothPooled,
    /// Both shares positive, separate levels `z_1 > z_2`.
    BothSplit,
    /// One share positive with interior level.
    OneInterior,
    /// One share positive at the floor.
    OneFloor,
    /// No positive share.
    NonePositive,
    /// No inclusive customers.
    Monopoly,
}

impl EpCase {
    pub fn label(&self) -> &'static str {
        match self {
            EpCase::BothFloor => "i-floor",
            EpCase::BothPooled => "i-pooled",
            EpCase::BothSplit => "i-split",
            EpCase::OneInterior => "ii-interior",
            EpCase::OneFloor => "ii-floor",
            EpCase::NonePositive => "iii",
            EpCase::Monopoly => "mp",
        }
    }
}

/// Exclusive-priority scoring mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct EpSolution {
    pub z: [f64; 2],
    /// Inclusive tie-break `p^{(1,1)}`.
    pub p_inclusive: [f64; 2],
    /// Exclusive tie-break `p_i^{ω_i}`.
    pub p_exclusive: [f64; 2],
    pub case: EpCase,
    /// Whether merchant labels were swapped to get `β_1 ≥ β_2`.
    pub swapped: bool,
    /// Whether a merchant's worst-off type strictly exceeds its outside option.
    pub exception: bool,
    /// The full optimal interval of the zero-share merchant's level, with
    /// that merchant's index.
    pub free_level: Option<(usize, f64, f64)>,
    pub beta: (f64, f64),
}

impl EpSolution {
    /// Scoring mechanism in the finite engine.
    pub fn mechanism(
        &self,
        data: &ExclusiveInclusiveData,
        dist: &TypeDistribution,
        eta: WelfareWeight,
    ) -> Result<FiniteMechanism> {
        let rules = self
            .z
            .iter()
            .map(|&z| ScoringRule::new(dist.clone(), eta, z))
            .collect::<Result<Vec<_>>>()?;
        let ties = TieBreakRule::new(vec![
            TieBreak::Weights(self.p_inclusive.to_vec()),
            TieBreak::Weights(vec![self.p_exclusive[0], 0.0]),
            TieBreak::Weights(vec![0.0, self.p_exclusive[1]]),
        ])?;
        FiniteMechanism::new(data.to_dataset(), rules, ties)
    }
}

/// Exclusive-priority mechanism for asymmetric inputs is unsupported.
pub fn solve_ep_pair(
    data: &ExclusiveInclusiveData,
    d1: &TypeDistribution,
    d2: &TypeDistribution,
    eta: WelfareWeight,
) -> Result<EpSolution> {
    if !d1.same_law(d2) {
        return Err(Error::Unsupported(
            "the stylized solver needs identical type laws for both merchants".into(),
        ));
    }
    solve_ep(data, d1, eta)
}

/// Solve for the exclusive-priority scoring mechanism.
pub fn solve_ep(data: &ExclusiveInclusiveData, dist: &TypeDistribution, eta: WelfareWeight) -> Result<EpSolution> {
    let beta = data.beta();
    let swap = beta.1 > beta.0;
    let work = if swap { data.swapped() } else { *data };
    let mut sol = solve_ordered(&work, dist, eta);
    if swap {
        sol.z.swap(0, 1);
        sol.p_inclusive.swap(0, 1);
        sol.p_exclusive.swap(0, 1);
        sol.free_level = sol.free_level.map(|(i, lo, hi)| (1 - i, lo, hi));
        sol.swapped = true;
    }
    sol.beta = beta;
    Ok(sol)
}

fn solve_ordered(data: &ExclusiveInclusiveData, dist: &TypeDistribution, eta: WelfareWeight) -> EpSolution {
    let vf = WeightedVirtual::new(dist.clone(), eta);
    let zl = vf.z_min();
    let pb = |z: f64| vf.band_cdf(Side::Buyer, z);
    let ps = |z: f64| vf.band_cdf(Side::Seller, z);
    // P^B is 1 from φ^B_η(1) = 1 on, so [z̲, 1] brackets every root
    let z_hi = 1.0f64.max(zl);
    let (b1, b2) = data.beta();
    let mut free_level = None;
    let (z, p_inclusive, case) = if data.alpha11() <= 0.0 {
        ([zl, zl], [0.0, 0.0], EpCase::Monopoly)
    } else if b2 > 0.0 {
        let floor = pb(zl);
        if b1 + b2 <= floor {
            ([zl, zl], [b1 / floor, b2 / floor], EpCase::BothFloor)
        } else {
            let zt = bisect(|z| pb(z) + ps(z) - (b1 + b2), zl, z_hi, ROOT_TOL, 200);
            let gap = pb(zt) - ps(zt);
            if gap >= b1 - b2 {
                let p1 = 0.5 * (1.0 + (b1 - b2) / gap);
                ([zt, zt], [p1, 1.0 - p1], EpCase::BothPooled)
            } else {
                let z1 = vf.value(Side::Buyer, dist.quantile(b1)).max(zl);
                let z2 = vf.value(Side::Seller, dist.quantile(b2)).max(zl);
                ([z1, z2], [1.0, 0.0], EpCase::BothSplit)
            }
        }
    } else if b1 > 0.0 {
        let floor = pb(zl);
        let (z1, p, case) = if b1 > floor {
            let z1 = vf.value(Side::Buyer, dist.quantile(b1)).max(zl);
            (z1, [1.0, 0.0], EpCase::OneInterior)
        } else {
            (zl, [b1 / floor, 0.0], EpCase::OneFloor)
        };
        let indifferent = vf.value(Side::Buyer, 0.0) >= 0.0
            || (data.alpha2_11 - data.alpha1_01).abs() <= 1e-12;
        if indifferent {
            free_level = Some((1, zl, zl.max(z1.min(eta.eta_w))));
        }
        ([z1, zl], p, case)
    } else {
        ([zl, zl], [0.0, 0.0], EpCase::NonePositive)
    };
    let exception = matches!(case, EpCase::OneInterior | EpCase::OneFloor)
        && vf.value(Side::Buyer, 0.0) > 0.0
        && data.alpha2_11 < data.alpha1_01;
    let p_exclusive = [0, 1].map(|i| {
        let pool = data.exclusive_for(i);
        if z[i] <= 0.0 && pool > 0.0 {
            pool.min(data.inclusive_of(i)) / pool
        } else {
            1.0
        }
    });
    EpSolution {
        z,
        p_inclusive,
        p_exclusive,
        case,
        swapped: false,
        exception,
        free_level,
        beta: (b1, b2),
    }
}

/// Closed-form transfer tables of the bundling example on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTables {
    pub theta: Vec<f64>,
    /// Separate design, merchant 2's exclusive side (merchant 1's is zero).
    pub separate_exclusive_2: Vec<f64>,
    /// Separate design, inclusive side (same for both merchants).
    pub separate_inclusive: Vec<f64>,
    /// Bundled design, merchant 2's hypothetical exclusive item.
    pub bundled_exclusive_2: Vec<f64>,
    /// Bundled design, hypothetical inclusive item (same for both merchants).
    pub bundled_inclusive: Vec<f64>,
}

/// Closed forms of the bundling example.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlingExample {
    pub alpha11: f64,
    pub nu: f64,
    pub z: f64,
    pub tie_interval: (f64, f64),
    pub p1: f64,
    pub separate_revenue: f64,
    pub bundled_revenue: f64,
    pub tables: TransferTables,
}

impl BundlingExample {
    pub fn separate_exclusive_2(&self, t: f64) -> f64 {
        if t >= 0.5 {
            0.5 * (1.0 - self.alpha11)
        } else {
            0.0
        }
    }

    pub fn separate_inclusive(&self, t: f64) -> f64 {
        if t <= 0.25 || t >= 0.75 {
            0.5 * self.alpha11 * (t * t - 0.1875)
        } else {
            0.0
        }
    }

    pub fn bundled_exclusive_2(&self, t: f64) -> f64 {
        let (s, b) = self.tie_interval;
        if t < s {
            (1.0 - self.alpha11) * s
        } else if t > b {
            (1.0 - self.alpha11) * b
        } else {
            0.0
        }
    }

    pub fn bundled_inclusive(&self, t: f64) -> f64 {
        let (s, b) = self.tie_interval;
        if t < s {
            0.5 * self.alpha11 * (t * t - s * (1.0 - s))
        } else if t > b {
            0.5 * self.alpha11 * (t * t - b * (1.0 - b))
        } else {
            0.0
        }
    }
}

/// Bundled versus separate design with uniform types and pure revenue weights.
pub fn bundling_example(alpha11: f64, grid: usize) -> Result<BundlingExample> {
    ExclusiveInclusiveData::bundling(alpha11)?;
    let nu = (1.0 - alpha11) / alpha11;
    let z = (0.5 - nu).max(0.0);
    let s = (0.25 - 0.5 * nu).max(0.0);
    let b = (0.75 - 0.5 * nu).max(0.5);
    let p1 = (0.5 + nu).min(1.0);
    let separate_revenue = 0.25 * (1.0 - alpha11) + 5.0 * alpha11 / 48.0;
    let excl = (1.0 - alpha11) * (s * s + b * (1.0 - b));
    let incl = 0.5
        * alpha11
        * (s.powi(3) / 3.0 - s * s * (1.0 - s) + (1.0 - b.powi(3)) / 3.0 - (1.0 - b) * b * (1.0 - b));
    let mut ex = BundlingExample {
        alpha11,
        nu,
        z,
        tie_interval: (s, b),
        p1,
        separate_revenue,
        bundled_revenue: excl + 2.0 * incl,
        tables: TransferTables {
            theta: Vec::new(),
            separate_exclusive_2: Vec::new(),
            separate_inclusive: Vec::new(),
            bundled_exclusive_2: Vec::new(),
            bundled_inclusive: Vec::new(),
        },
    };
    let theta = crate::interim::uniform_grid(grid);
    ex.tables = TransferTables {
        separate_exclusive_2: theta.iter().map(|&t| ex.separate_exclusive_2(t)).collect(),
        separate_inclusive: theta.iter().map(|&t| ex.separate_inclusive(t)).collect(),
        bundled_exclusive_2: theta.iter().map(|&t| ex.bundled_exclusive_2(t)).collect(),
        bundled_inclusive: theta.iter().map(|&t| ex.bundled_inclusive(t)).collect(),
        theta,
    };
    Ok(ex)
}

/// The three textbook settings under uniform types and revenue weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmarks {
    /// Posted price when merchant 1 owns nothing.
    pub monopoly_price: f64,
    /// Trade happens iff `θ_1 − θ_2` exceeds this gap.
    pub bilateral_gap: f64,
    /// Ironing level for equal shares.
    pub dissolution_z: f64,
    pub dissolution_band: (f64, f64),
}

pub fn classic_benchmarks() -> Result<Benchmarks> {
    let d = TypeDistribution::uniform();
    let eta = WelfareWeight::revenue();

    let mp = solve_ep(&ExclusiveInclusiveData::new(0.0, 1.0, 0.0, 0.0)?, &d, eta)?;
    let buyer = ScoringRule::new(d.clone(), eta, mp.z[0])?;
    let monopoly_price = buyer.tie_interval().1;

    let bt = solve_ep(&ExclusiveInclusiveData::new(0.0, 0.0, 0.0, 1.0)?, &d, eta)?;
    let r1 = ScoringRule::new(d.clone(), eta, bt.z[0])?;
    let r2 = ScoringRule::new(d.clone(), eta, bt.z[1])?;
    // buyer type whose score matches a seller type below the seller's band
    let t2 = 0.5 * r2.tie_interval().0;
    let t1 = r1
        .virtual_fns()
        .inverse(Side::Buyer, r2.score(t2))?;
    let bilateral_gap = t1 - t2;

    let pd = solve_ep(&ExclusiveInclusiveData::new(0.0, 0.0, 0.5, 0.5)?, &d, eta)?;
    let band = ScoringRule::new(d, eta, pd.z[0])?.tie_interval();
    Ok(Benchmarks {
        monopoly_price,
        bilateral_gap,
        dissolution_z: pd.z[0],
        dissolution_band: band,
    })
}

/// One row of the case-region sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub data: ExclusiveInclusiveData,
    pub solution: EpSolution,
}

/// Solve every dataset in `grid`.
pub fn ep_sweep(
    grid: &[ExclusiveInclusiveData],
    dist: &TypeDistribution,
    eta: WelfareWeight,
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|d| {
            Ok(SweepRow {
                data: *d,
                solution: solve_ep(d, dist, eta)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni() -> (TypeDistribution, WelfareWeight) {
        (TypeDistribution::uniform(), WelfareWeight::revenue())
    }

    fn from_beta(b1: f64, b2: f64) -> ExclusiveInclusiveData {
        ExclusiveInclusiveData::from_beta(b1, b2).unwrap()
    }

    #[test]
    fn floor_branch() {
        let (d, e) = uni();
        let s = solve_ep(&from_beta(0.2, 0.1), &d, e).unwrap();
        assert_eq!(s.case, EpCase::BothFloor);
        assert_eq!(s.z, [0.0, 0.0]);
        assert!((s.p_inclusive[0] - 0.4).abs() < 1e-12);
        assert!((s.p_inclusive[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pooled_branch() {
        let (d, e) = uni();
        let s = solve_ep(&from_beta(0.5, 0.4), &d, e).unwrap();
        assert_eq!(s.case, EpCase::BothPooled);
        assert!((s.z[0] - 0.4).abs() < 1e-9 && s.z[0] == s.z[1]);
        assert!((s.p_inclusive[0] - 0.6).abs() < 1e-9);
    }

    #[test]
    fn swapping_restores_labels() {
        let (d, e) = uni();
        let data = ExclusiveInclusiveData::new(0.0, 0.3, 0.2, 0.5).unwrap();
        let s = solve_ep(&data, &d, e).unwrap();
        assert!(s.swapped);
        assert_eq!(s.beta.0, 0.0);
        assert!(s.z[1] >= s.z[0]);
    }

    #[test]
    fn bundling_boundary() {
        let ex = bundling_example(2.0 / 3.0, 11).unwrap();
        assert!(ex.z.abs() < 1e-15);
        assert!(bundling_example(1.0, 11).is_err());
    }
}
