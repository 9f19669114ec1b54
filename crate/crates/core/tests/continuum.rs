use adx::continuum::{
    rn_continuum_baseline, rn_marg_check, solve_symmetric, OPTZ_TOL, symmetric_residual, ContinuumDataset, ContinuumModel, CtrLaw,
};
use adx::dist::WeightedVirtual;
use adx::stylized::{solve_ep, ExclusiveInclusiveData};
use adx::{Error, TypeDistribution, WelfareWeight};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn rev() -> WelfareWeight {
    WelfareWeight::revenue()
}

fn ctr_floor(eps: f64, lambda1: f64) -> ContinuumModel {
    let data = ContinuumDataset::homogeneous(vec![lambda1, 1.0 - lambda1], CtrLaw::uniform(eps, 1.0).unwrap()).unwrap();
    ContinuumModel::symmetric(data, TypeDistribution::uniform(), rev()).unwrap()
}

#[test]
fn ctr_laws() {
    let u = CtrLaw::uniform(0.2, 1.0).unwrap();
    assert_abs_diff_eq!(u.mean(), 0.6, epsilon = 1e-15);
    assert_abs_diff_eq!(u.cdf(0.6), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(CtrLaw::beta(2.0, 3.0).unwrap().mean(), 0.4, epsilon = 1e-10);
    assert!(CtrLaw::uniform(0.5, 0.5).is_err());
    assert!(CtrLaw::uniform(-0.1, 1.0).is_err());
}

#[test]
fn masses_must_sum_to_one() {
    let law = CtrLaw::uniform(0.0, 1.0).unwrap();
    assert!(ContinuumDataset::homogeneous(vec![0.5, 0.4], law).is_err());
}

#[test]
fn solver_hits_outside_options() {
    let m = ctr_floor(0.3, 0.7);
    let sol = m.solve_optz().unwrap();
    assert!(sol.max_residual() <= OPTZ_TOL, "{sol:?}");
    let rules = m.rules(&sol.z).unwrap();
    for (i, r) in rules.iter().enumerate() {
        let hat = r.critical_type();
        assert_abs_diff_eq!(m.interim_clicks(&rules, i, hat), m.data().outside(i), epsilon = 1e-5);
    }
}

#[test]
fn quadrature_matches_simulation() {
    let m = ctr_floor(0.2, 0.6);
    let sol = m.solve_optz().unwrap();
    let rules = m.rules(&sol.z).unwrap();
    for i in 0..2 {
        for t in [0.1, 0.5, 0.9] {
            let exact = m.interim_clicks(&rules, i, t);
            let (mc, se, _) = m.simulate_clicks(&rules, i, t, 200_000, 3);
            assert!((exact - mc).abs() < 4.0 * se + 1e-4, "{i} {t}: {exact} vs {mc} ± {se}");
        }
    }
}

#[test]
fn baseline_delivers_outside_options() {
    let data = ContinuumDataset::new(
        vec![0.3, 0.7],
        vec![
            vec![CtrLaw::uniform(0.0, 1.0).unwrap(), CtrLaw::beta(2.0, 2.0).unwrap()],
            vec![CtrLaw::beta(3.0, 1.0).unwrap(), CtrLaw::uniform(0.2, 0.8).unwrap()],
        ],
    )
    .unwrap();
    for (i, (mean, se)) in rn_continuum_baseline(&data, 200_000, 9).into_iter().enumerate() {
        assert!((mean - data.outside(i)).abs() < 4.0 * se, "{i}: {mean} ± {se} vs {}", data.outside(i));
    }
    let rects = vec![vec![(0.0, 0.5), (0.0, 0.5)], vec![(0.3, 1.0), (0.1, 0.6)]];
    for (target, mean, se) in rn_marg_check(&data, &rects, 200_000, 4) {
        assert!((target - mean).abs() < 4.0 * se, "{target} vs {mean} ± {se}");
    }
}

#[test]
fn left_side_increases_in_own_level() {
    let m = ctr_floor(0.1, 0.7);
    let scan = m.lhs_scan(&[0.3, 0.3], 0, 41).unwrap();
    for w in scan.windows(2) {
        assert!(w[1].1 >= w[0].1 - 1e-9, "{w:?}");
    }
}

#[test]
fn symmetric_and_general_solvers_agree() {
    let law = CtrLaw::beta(2.0, 2.0).unwrap();
    let s = solve_symmetric(&law, &TypeDistribution::uniform(), rev(), 2).unwrap();
    let m = ContinuumModel::symmetric(ContinuumDataset::iid(2, law).unwrap(), TypeDistribution::uniform(), rev()).unwrap();
    let sol = m.solve_optz().unwrap();
    assert_abs_diff_eq!(sol.z[0], s.z, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.z[1], s.z, epsilon = 1e-5);
}

#[test]
fn ctr_floor_levels_rise_with_the_floor() {
    for lambda1 in [0.5, 0.8] {
        let mut prev = [f64::NEG_INFINITY; 2];
        for k in 0..6 {
            let z = ctr_floor(0.18 * k as f64, lambda1).solve_optz().unwrap().z;
            assert!(z[0] >= prev[0] - 1e-9 && z[1] >= prev[1] - 1e-9, "{lambda1}: {z:?} after {prev:?}");
            assert!(z[0] >= z[1] - 1e-9);
            prev = [z[0], z[1]];
        }
    }
}

#[test]
fn flat_ctrs_approach_the_stylized_solution() {
    let z = ctr_floor(0.999, 0.8).solve_optz().unwrap().z;
    let data = ExclusiveInclusiveData::new(0.0, 0.0, 0.8, 0.2).unwrap();
    let ep = solve_ep(&data, &TypeDistribution::uniform(), rev()).unwrap();
    assert_abs_diff_eq!(ep.z[0], 0.6, epsilon = 1e-9);
    assert_abs_diff_eq!(ep.z[1], 0.4, epsilon = 1e-9);
    assert_abs_diff_eq!(z[0], ep.z[0], epsilon = 2e-3);
    assert_abs_diff_eq!(z[1], ep.z[1], epsilon = 2e-3);
}

#[test]
fn common_level_increases_with_n() {
    let law = CtrLaw::uniform(0.0, 1.0).unwrap();
    let d = TypeDistribution::uniform();
    let mut prev = f64::NEG_INFINITY;
    for n in [2, 5, 10, 25] {
        let z = solve_symmetric(&law, &d, rev(), n).unwrap().z;
        assert!(z > prev, "{n}: {z}");
        prev = z;
    }
    assert!(solve_symmetric(&law, &d, rev(), 1).is_err());
}

#[test]
fn transfers_need_few_merchants() {
    let data = ContinuumDataset::iid(4, CtrLaw::uniform(0.0, 1.0).unwrap()).unwrap();
    let m = ContinuumModel::symmetric(data, TypeDistribution::uniform(), rev()).unwrap();
    let sol = m.solve_optz().unwrap();
    assert!(matches!(m.outcome(&sol), Err(Error::Unsupported(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn symmetric_residual_is_increasing(lo in 0.0f64..0.8, n in 2usize..8, u in 0.0f64..0.9) {
        let law = CtrLaw::uniform(lo, 1.0).unwrap();
        let vf = WeightedVirtual::new(TypeDistribution::uniform(), rev());
        let z = vf.z_min() + (vf.z_max() - vf.z_min()) * u;
        let a = symmetric_residual(&law, &vf, n, z).unwrap();
        let b = symmetric_residual(&law, &vf, n, z + 0.1).unwrap();
        prop_assert!(b >= a - 1e-12);
    }
}
