use adx::scoring::band_prob;
use adx::{ScoringRule, TypeDistribution, WelfareWeight};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn uniform_rule(z: f64) -> ScoringRule {
    ScoringRule::new(TypeDistribution::uniform(), WelfareWeight::revenue(), z).unwrap()
}

/// Ironed uniform revenue score, written out by hand.
fn uniform_score_oracle(z: f64, t: f64) -> f64 {
    let (lo, hi) = ((z / 2.0).min(1.0), ((1.0 + z) / 2.0).min(1.0));
    if t < lo {
        2.0 * t
    } else if t <= hi {
        z
    } else {
        2.0 * t - 1.0
    }
}

#[test]
fn piecewise_scores() {
    let r = uniform_rule(0.5);
    assert_abs_diff_eq!(r.score(0.1), 0.2, epsilon = 1e-14);
    assert_abs_diff_eq!(r.score(0.5), 0.5, epsilon = 1e-14);
    assert_abs_diff_eq!(r.score(0.9), 0.8, epsilon = 1e-14);
}

#[test]
fn tie_intervals() {
    let (lo, hi) = uniform_rule(0.5).tie_interval();
    assert_abs_diff_eq!(lo, 0.25, epsilon = 1e-10);
    assert_abs_diff_eq!(hi, 0.75, epsilon = 1e-10);
    let (lo, hi) = uniform_rule(0.25).tie_interval();
    assert_abs_diff_eq!(lo, 0.125, epsilon = 1e-10);
    assert_abs_diff_eq!(hi, 0.625, epsilon = 1e-10);
    let (lo, _) = uniform_rule(2.0).tie_interval();
    assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-10);
}

#[test]
fn levels_outside_the_bracket_are_rejected() {
    let d = TypeDistribution::uniform();
    assert!(ScoringRule::new(d.clone(), WelfareWeight::revenue(), -0.1).is_err());
    assert!(ScoringRule::new(d, WelfareWeight::revenue(), 2.1).is_err());
}

#[test]
fn critical_types_match_closed_form_integrals() {
    // ∫ φ̄ = ∫_0^¼ 2θ + ½·½ + ∫_¾^1 (2θ − 1) = 1/16 + 1/4 + 3/16
    assert_abs_diff_eq!(uniform_rule(0.5).critical_type(), 0.5, epsilon = 1e-9);
    // ∫_½^1 (2θ − 1) = ¼
    assert_abs_diff_eq!(uniform_rule(0.0).critical_type(), 0.25, epsilon = 1e-9);
}

#[test]
fn revenue_critical_type_is_a_fixed_point_on_the_band() {
    for z in [0.3, 0.5, 0.7] {
        let r = uniform_rule(z);
        let (lo, hi) = r.tie_interval();
        let c = r.critical_type();
        if (lo..=hi).contains(&c) {
            // critical type is E[φ̄] when η = (0, 0, 1)
            let n = 4000;
            let mean: f64 = (0..n).map(|k| uniform_score_oracle(z, (k as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
            assert_abs_diff_eq!(c, mean, epsilon = 1e-6);
        }
    }
}

#[test]
fn band_probabilities() {
    let (ps, pb) = band_prob(&uniform_rule(0.5), 0.5);
    assert_abs_diff_eq!(ps, 0.25, epsilon = 1e-10);
    assert_abs_diff_eq!(pb, 0.75, epsilon = 1e-10);
    let (ps, _) = band_prob(&uniform_rule(0.5), -0.5);
    assert_eq!(ps, 0.0);
    let (_, pb) = band_prob(&uniform_rule(0.5), 1.0);
    assert_eq!(pb, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_matches_oracle(z in 0.0f64..2.0, t in 0.0f64..1.0) {
        prop_assert!((uniform_rule(z).score(t) - uniform_score_oracle(z, t)).abs() < 1e-9);
    }

    #[test]
    fn score_is_monotone_and_flat_on_the_band(a in 1.0f64..4.0, b in 1.0f64..4.0, u in 0.0f64..1.0) {
        let d = TypeDistribution::beta(a, b).unwrap();
        let eta = WelfareWeight::revenue();
        let probe = ScoringRule::new(d.clone(), eta, 0.0).unwrap();
        let (lo, hi) = (probe.virtual_fns().z_min(), probe.virtual_fns().z_max().min(5.0));
        let r = ScoringRule::new(d, eta, lo + (hi - lo) * u).unwrap();
        let (blo, bhi) = r.tie_interval();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let s = r.score(t);
            prop_assert!(s >= prev - 1e-12);
            if t > blo && t < bhi {
                prop_assert!((s - r.z()).abs() < 1e-12);
            }
            prev = s;
        }
    }

    #[test]
    fn band_mass_is_positive_inside(z in 0.01f64..0.99) {
        let (ps, pb) = band_prob(&uniform_rule(0.5), z);
        prop_assert!(pb - ps > 0.0);
    }

    #[test]
    fn critical_type_increases_in_z(z in 0.0f64..1.9) {
        prop_assert!(uniform_rule(z + 0.1).critical_type() >= uniform_rule(z).critical_type() - 1e-12);
    }
}
