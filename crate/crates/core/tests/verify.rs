use adx::finite::{FiniteDataset, FiniteMechanism, TieBreakRule};
use adx::stylized::{solve_ep, ExclusiveInclusiveData};
use adx::verify::{
    brute_force_value, check_ic, check_saddle, corrupt_transfers, verify_finite, VerifyOptions, Witness,
};
use adx::{Error, ScoringRule, TypeDistribution, WelfareWeight};
use approx::assert_abs_diff_eq;

fn rule(z: f64) -> ScoringRule {
    ScoringRule::new(TypeDistribution::uniform(), WelfareWeight::revenue(), z).unwrap()
}

fn two_merchant(masses: [f64; 2], z: [f64; 2]) -> FiniteMechanism {
    let data = FiniteDataset::new(vec![vec![1.0, 1.0]], vec![masses.to_vec()]).unwrap();
    FiniteMechanism::new(data, vec![rule(z[0]), rule(z[1])], TieBreakRule::even(1)).unwrap()
}

fn opts() -> VerifyOptions {
    VerifyOptions {
        samples: 500,
        ..VerifyOptions::default()
    }
}

#[test]
fn classic_mechanisms_pass() {
    for m in [two_merchant([0.5, 0.5], [0.5, 0.5]), two_merchant([0.0, 1.0], [0.0, 1.0])] {
        let r = verify_finite(&m, &opts());
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.exit_code(), 0);
    }
}

#[test]
fn stylized_solution_passes() {
    let (d, eta) = (TypeDistribution::uniform(), WelfareWeight::revenue());
    let data = ExclusiveInclusiveData::new(0.0, 0.3, 0.4, 0.3).unwrap();
    let m = solve_ep(&data, &d, eta).unwrap().mechanism(&data, &d, eta).unwrap();
    let r = verify_finite(&m, &opts());
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn bumped_transfers_break_incentives() {
    let m = two_merchant([0.5, 0.5], [0.5, 0.5]);
    let out = m.outcome();
    assert!(check_ic(&out, 1e-4).passed);
    let bad = corrupt_transfers(&out, 0, 0.6, 0.02, 0.05);
    let e = check_ic(&bad, 1e-4);
    assert!(!e.passed);
    assert!(e.worst > 1e-3);
    match e.witness {
        Some(Witness::Deviation { merchant, theta, .. }) => {
            assert_eq!(merchant, 0);
            assert!((theta - 0.6).abs() < 0.1, "{theta}");
        }
        other => panic!("unexpected witness {other:?}"),
    }
}

#[test]
fn shifted_level_fails_the_saddle_scan() {
    let m = two_merchant([0.5, 0.5], [0.6, 0.6]);
    let out = m.outcome();
    let hat = [0.5, 0.5];
    let entries = check_saddle(&m, &out, &hat, &opts());
    let min = entries.iter().find(|e| e.name == "saddle.min").unwrap();
    assert!(!min.passed, "{min:?}");
    assert!(min.witness.is_some());
}

#[test]
fn reports_are_deterministic() {
    let m = two_merchant([0.5, 0.5], [0.5, 0.5]);
    let a = verify_finite(&m, &opts()).to_text();
    let b = verify_finite(&m, &opts()).to_text();
    assert_eq!(a, b);
    assert!(a.contains("all.passed=true"));
}

#[test]
fn brute_force_matches_bilateral_trade() {
    let m = two_merchant([0.0, 1.0], [0.0, 1.0]);
    let value = m.outcome().parts.value;
    assert_abs_diff_eq!(value, 1.0 / 24.0, epsilon = 1e-6);
    let d = TypeDistribution::uniform();
    let bf = brute_force_value(m.data(), &[d.clone(), d], WelfareWeight::revenue(), 21, 6, &[vec![0.0, 1.0]], &[]).unwrap();
    assert!((bf.value - value).abs() <= bf.tolerance, "{} vs {value} ± {}", bf.value, bf.tolerance);
}

#[test]
fn brute_force_matches_the_stylized_solution() {
    let (d, eta) = (TypeDistribution::uniform(), WelfareWeight::revenue());
    let data = ExclusiveInclusiveData::new(0.0, 0.3, 0.4, 0.3).unwrap();
    let sol = solve_ep(&data, &d, eta).unwrap();
    let m = sol.mechanism(&data, &d, eta).unwrap();
    let value = m.outcome().parts.value;
    let bf = brute_force_value(
        m.data(),
        &[d.clone(), d],
        eta,
        21,
        11,
        &[sol.z.to_vec()],
        &[m.ties().clone()],
    )
    .unwrap();
    assert!(bf.candidates > 100);
    assert!((bf.value - value).abs() <= bf.tolerance, "{} vs {value} ± {}", bf.value, bf.tolerance);
}

#[test]
fn brute_force_refuses_large_instances() {
    let d = TypeDistribution::uniform();
    let eta = WelfareWeight::revenue();
    let data = FiniteDataset::new(vec![vec![1.0, 1.0]], vec![vec![0.5, 0.5]]).unwrap();
    let r = brute_force_value(&data, &[d.clone(), d.clone()], eta, 41, 5, &[], &[]);
    assert!(matches!(r, Err(Error::TooLarge(_))));
    let data = FiniteDataset::new(vec![vec![1.0, 1.0, 1.0]], vec![vec![0.2, 0.3, 0.5]]).unwrap();
    let r = brute_force_value(&data, &[d.clone(), d.clone(), d], eta, 11, 5, &[], &[]);
    assert!(matches!(r, Err(Error::TooLarge(_))));
}
