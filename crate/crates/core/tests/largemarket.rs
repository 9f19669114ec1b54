use adx::continuum::CtrLaw;
use adx::largemarket::{
    are, design, finite_n_transfer_limit, limit_clicks, profit_combined, profits, selling_cost_limit, LargeMarketConfig,
};
use adx::{TypeDistribution, WelfareWeight};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

/// Value and total surplus under uniform types, `η = (1 − η_r, 0, η_r)`, `ζ = (0, 1)`.
fn are_oracle(eta_r: f64, mu: f64) -> f64 {
    let p = 1.0 / (1.0 + eta_r);
    let v = mu * p * p / 2.0;
    let r = (1.0 - p * mu) * p + (1.0 - mu) * (1.0 - p);
    ((1.0 - eta_r) * v + eta_r * r) / (1.0 - mu / 2.0)
}

#[test]
fn revenue_design() {
    let cfg = LargeMarketConfig::uniform(1.0, 0.5).unwrap();
    let d = design(&cfg).unwrap();
    assert_abs_diff_eq!(d.p_s, 0.5, epsilon = 1e-10);
    assert_eq!(d.p_b, 1.0);
    assert_abs_diff_eq!(d.p_tilde.unwrap(), 1.0, epsilon = 1e-10);
    let p = profits(&cfg, &d);
    assert_abs_diff_eq!(p.combined, 0.625, epsilon = 1e-12);
    assert_abs_diff_eq!(p.exchange, 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(p.selling_only.unwrap(), 0.5, epsilon = 1e-10);
}

#[test]
fn no_clicks_on_the_exchange_side() {
    let cfg = LargeMarketConfig::uniform(1.0, 0.0).unwrap();
    let d = design(&cfg).unwrap();
    assert!(d.p_tilde.is_none());
    let a = are(&cfg).unwrap();
    assert_abs_diff_eq!(a.r_inf, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(a.are, 1.0, epsilon = 1e-12);
}

#[test]
fn tiny_revenue_weight_is_rejected() {
    assert!(LargeMarketConfig::uniform(5e-4, 0.5).is_err());
    assert!(LargeMarketConfig::uniform(1e-3, 0.5).is_ok());
}

#[test]
fn zero_total_surplus_is_rejected() {
    let eta = WelfareWeight::revenue();
    let cfg = LargeMarketConfig::new(TypeDistribution::uniform(), eta, (1.0, 0.0), 1.0).unwrap();
    assert!(are(&cfg).is_err());
    let cfg = LargeMarketConfig::new(TypeDistribution::uniform(), eta, (0.0, 1.0), 1.0).unwrap();
    assert!(are(&cfg).unwrap().total_surplus > 0.0);
}

#[test]
fn limit_step() {
    assert_eq!(limit_clicks(0.5, 0.3, 0.49), 0.0);
    assert_eq!(limit_clicks(0.5, 0.3, 0.5), 0.3);
    assert_abs_diff_eq!(selling_cost_limit(&TypeDistribution::uniform(), 0.5, 0.5), -0.125, epsilon = 1e-15);
}

#[test]
fn finite_n_band_shrinks_for_large_n() {
    let law = CtrLaw::uniform(0.0, 1.0).unwrap();
    let rows = finite_n_transfer_limit(&law, &TypeDistribution::uniform(), WelfareWeight::revenue(), &[10, 25, 50, 100, 200], 201, 0.05).unwrap();
    let target = selling_cost_limit(&TypeDistribution::uniform(), 0.5, 0.5);
    for w in rows.windows(2) {
        assert!(w[1].z > w[0].z);
        assert!(w[1].payoff_error <= w[0].payoff_error + 1e-9, "{} {}", w[0].payoff_error, w[1].payoff_error);
        assert!(w[1].selling_transfer < w[0].selling_transfer);
        assert!(w[1].selling_transfer > target);
    }
    for r in &rows {
        assert_eq!(r.theta.len(), r.scaled_clicks.len());
        // the band level pins N S^N to μ̄
        let hat = r.theta.iter().position(|&t| t >= 0.5 * r.z + 0.01).unwrap();
        assert_abs_diff_eq!(r.scaled_clicks[hat], 0.5, epsilon = 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selling_price_inverts_the_virtual_cost(eta_r in 1e-3f64..1.0, mu in 0.0f64..1.0) {
        let d = design(&LargeMarketConfig::uniform(eta_r, mu).unwrap()).unwrap();
        prop_assert!((d.p_s - 1.0 / (1.0 + eta_r)).abs() < 1e-10);
        if let Some(pt) = d.p_tilde {
            prop_assert!(d.p_s <= pt + 1e-12);
        }
    }

    #[test]
    fn are_matches_closed_form(eta_r in 1e-3f64..1.0, mu in 0.0f64..1.0) {
        let a = are(&LargeMarketConfig::uniform(eta_r, mu).unwrap()).unwrap();
        prop_assert!((a.are - are_oracle(eta_r, mu)).abs() < 1e-9);
        prop_assert!(a.total_surplus > 0.0);
    }

    #[test]
    fn combined_market_beats_selling_alone(mu in 0.01f64..1.0) {
        let cfg = LargeMarketConfig::uniform(1.0, mu).unwrap();
        let d = design(&cfg).unwrap();
        let p = profits(&cfg, &d);
        prop_assert!(p.combined >= p.selling_only.unwrap() - 1e-12);
        prop_assert!(p.combined >= p.exchange - 1e-12);
        for k in 0..=100 {
            prop_assert!(p.combined >= profit_combined(&cfg, k as f64 / 100.0) - 1e-12);
        }
    }
}
