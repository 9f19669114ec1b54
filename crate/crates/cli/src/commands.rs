//! One function per subcommand, each returning the tables it produces.

use adx::continuum::{solve_symmetric, ContinuumDataset, ContinuumModel, CtrLaw};
use adx::finite::{FiniteDataset, FiniteMechanism, Integration, TieBreak, TieBreakRule};
use adx::largemarket::{
    are, design, finite_n_transfer_limit, limit_clicks, profits, selling_cost_limit, LargeMarketConfig,
};
use adx::stylized::{
    bundling_example, classic_benchmarks, ep_sweep, solve_ep, EpSolution, ExclusiveInclusiveData,
};
use adx::verify::{
    brute_force_value, check_ic, corrupt_transfers, verify_finite, CheckEntry, VerificationReport,
    VerifyOptions,
};
use adx::{TypeDistribution, WelfareWeight};
use rayon::prelude::*;

use crate::config::*;
use crate::output::{Artifacts, Cell, Table};
use crate::CliError;

/// Run `command`; the flag is false when verification found violations.
pub fn execute(command: &str, cfg: &ExperimentConfig, seed: u64) -> Result<(Artifacts, bool), CliError> {
    let dist = cfg.distribution.build("distribution")?;
    let eta = cfg.eta.build()?;
    let mut art = Artifacts::default();
    let mut passed = true;
    match command {
        "solve-finite" => {
            let spec = cfg.section(&cfg.finite, "finite")?;
            let mech = finite_mechanism(spec, &dist, eta, seed)?;
            finite_tables(&mech, &mut art);
        }
        "solve-stylized" => stylized(cfg.section(&cfg.stylized, "stylized")?, &dist, eta, &mut art)?,
        "solve-continuum" => continuum(cfg.section(&cfg.continuum, "continuum")?, &dist, eta, &mut art)?,
        "large-market" => large_market(cfg.section(&cfg.large_market, "large_market")?, &dist, eta, &mut art)?,
        "verify" => passed = verify(cfg, &dist, eta, seed, &mut art)?,
        other => return Err(CliError::schema("command", &format!("unknown subcommand `{other}`"))),
    }
    Ok((art, passed))
}

fn finite_mechanism(
    spec: &FiniteSpec,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    seed: u64,
) -> Result<FiniteMechanism, CliError> {
    let data = FiniteDataset::new(spec.profiles.clone(), spec.masses.clone())
        .map_err(|e| CliError::at("finite", e))?;
    let n = data.merchants();
    if spec.z.len() != n {
        return Err(CliError::schema("finite.z", &format!("need one level per merchant ({n})")));
    }
    let dists = match &spec.distributions {
        Some(ds) if ds.len() != n => {
            return Err(CliError::schema(
                "finite.distributions",
                &format!("need one law per merchant ({n})"),
            ))
        }
        Some(ds) => ds
            .iter()
            .enumerate()
            .map(|(i, d)| d.build(&format!("finite.distributions[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![dist.clone(); n],
    };
    let rules = dists
        .iter()
        .zip(&spec.z)
        .enumerate()
        .map(|(i, (d, &z))| {
            adx::ScoringRule::new(d.clone(), eta, z).map_err(|e| CliError::at(&format!("finite.z[{i}]"), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ties = match &spec.ties {
        None => TieBreakRule::even(data.profiles().len()),
        Some(ts) => TieBreakRule::new(
            ts.iter()
                .map(|t| match t {
                    TieSpec::Even => TieBreak::Even,
                    TieSpec::Weights(w) => TieBreak::Weights(w.clone()),
                })
                .collect(),
        )
        .map_err(|e| CliError::at("finite.ties", e))?,
    };
    let integration = match spec.integration {
        IntegrationSpec::Exact => Integration::Exact,
        IntegrationSpec::GaussLegendre => Integration::GaussLegendre,
        IntegrationSpec::MonteCarlo => Integration::MonteCarlo {
            draws: spec.mc_draws,
            seed,
        },
    };
    Ok(FiniteMechanism::new(data, rules, ties)
        .map_err(|e| CliError::at("finite", e))?
        .with_grid(spec.grid)
        .with_integration(integration))
}

fn finite_tables(mech: &FiniteMechanism, art: &mut Artifacts) {
    let out = mech.outcome();
    let mut interim = Table::new("interim", &["merchant", "theta", "clicks", "transfer", "payoff"]);
    let mut worst = Table::new(
        "worst_off",
        &["merchant", "outside", "theta_hat", "attained", "band_lo", "band_hi"],
    );
    for (i, m) in out.merchants.iter().enumerate() {
        let th = m.curve.theta();
        for (k, &t) in th.iter().enumerate() {
            interim.push(vec![
                i.into(),
                t.into(),
                m.curve.clicks()[k].into(),
                m.transfers[k].into(),
                m.payoffs[k].into(),
            ]);
        }
        let band = m.worst_off.band;
        worst.push(vec![
            i.into(),
            m.outside.into(),
            m.worst_off.theta.into(),
            m.worst_off.attained.into(),
            band.map(|b| b.0).into(),
            band.map(|b| b.1).into(),
        ]);
    }
    let mut obj = Table::new("objective", &["v", "w", "r", "value"]);
    let p = out.parts;
    obj.push(vec![p.v.into(), p.w.into(), p.r.into(), p.value.into()]);
    art.table(interim);
    art.table(worst);
    art.table(obj);
}

fn alpha_data(a: &AlphaSpec, path: &str) -> Result<ExclusiveInclusiveData, CliError> {
    ExclusiveInclusiveData::new(a.alpha1_01, a.alpha2_10, a.alpha1_11, a.alpha2_11)
        .map_err(|e| CliError::at(path, e))
}

const EP_COLUMNS: [&str; 12] = [
    "alpha1_01", "alpha2_10", "alpha1_11", "alpha2_11", "beta1", "beta2", "case", "z1", "z2", "p1", "p2",
    "exception",
];

fn ep_row(d: &ExclusiveInclusiveData, s: &EpSolution) -> Vec<Cell> {
    vec![
        d.alpha1_01.into(),
        d.alpha2_10.into(),
        d.alpha1_11.into(),
        d.alpha2_11.into(),
        s.beta.0.into(),
        s.beta.1.into(),
        s.case.label().into(),
        s.z[0].into(),
        s.z[1].into(),
        s.p_inclusive[0].into(),
        s.p_inclusive[1].into(),
        s.exception.into(),
    ]
}

fn stylized(
    spec: &StylizedSpec,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    match spec.mode {
        StylizedMode::Benchmarks => {
            let b = classic_benchmarks().map_err(|e| CliError::at("stylized", e))?;
            let mut t = Table::new(
                "benchmarks",
                &["monopoly_price", "bilateral_gap", "dissolution_z", "band_lo", "band_hi"],
            );
            t.push(vec![
                b.monopoly_price.into(),
                b.bilateral_gap.into(),
                b.dissolution_z.into(),
                b.dissolution_band.0.into(),
                b.dissolution_band.1.into(),
            ]);
            art.table(t);
        }
        StylizedMode::Bundling => {
            let a = *required(&spec.alpha11, "stylized.alpha11")?;
            let ex = bundling_example(a, spec.grid).map_err(|e| CliError::at("stylized.alpha11", e))?;
            let mut t = Table::new(
                "bundling",
                &[
                    "alpha11", "nu", "zB", "thetaS", "thetaB", "p1", "separate_revenue", "bundled_revenue",
                    "difference",
                ],
            );
            t.push(vec![
                ex.alpha11.into(),
                ex.nu.into(),
                ex.z.into(),
                ex.tie_interval.0.into(),
                ex.tie_interval.1.into(),
                ex.p1.into(),
                ex.separate_revenue.into(),
                ex.bundled_revenue.into(),
                (ex.bundled_revenue - ex.separate_revenue).into(),
            ]);
            art.table(t);
            let tb = &ex.tables;
            let mut t = Table::new(
                "bundling_transfers",
                &[
                    "theta",
                    "separate_exclusive_2",
                    "separate_inclusive",
                    "bundled_exclusive_2",
                    "bundled_inclusive",
                ],
            );
            for k in 0..tb.theta.len() {
                t.push(vec![
                    tb.theta[k].into(),
                    tb.separate_exclusive_2[k].into(),
                    tb.separate_inclusive[k].into(),
                    tb.bundled_exclusive_2[k].into(),
                    tb.bundled_inclusive[k].into(),
                ]);
            }
            art.table(t);
        }
        StylizedMode::Instance => {
            let d = alpha_data(required(&spec.alpha, "stylized.alpha")?, "stylized.alpha")?;
            let s = solve_ep(&d, dist, eta).map_err(|e| CliError::at("stylized", e))?;
            let mut t = Table::new("ep", &EP_COLUMNS);
            t.push(ep_row(&d, &s));
            art.table(t);
        }
        StylizedMode::Sweep => {
            let axis = required(&spec.beta, "stylized.beta")?.points("stylized.beta")?;
            let grid: Vec<ExclusiveInclusiveData> = axis
                .iter()
                .flat_map(|&b1| axis.iter().map(move |&b2| (b1, b2)))
                .filter_map(|(b1, b2)| ExclusiveInclusiveData::from_beta(b1, b2).ok())
                .collect();
            let rows = ep_sweep(&grid, dist, eta).map_err(|e| CliError::at("stylized", e))?;
            let mut t = Table::new("ep_sweep", &EP_COLUMNS);
            for r in &rows {
                t.push(ep_row(&r.data, &r.solution));
            }
            art.table(t);
        }
    }
    Ok(())
}

fn continuum(
    spec: &ContinuumSpec,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    match spec.mode {
        ContinuumMode::Solve => {
            let lambda = required(&spec.lambda, "continuum.lambda")?.clone();
            let laws = required(&spec.laws, "continuum.laws")?
                .iter()
                .enumerate()
                .map(|(k, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(i, l)| l.build(&format!("continuum.laws[{k}][{i}]")))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let data = ContinuumDataset::new(lambda, laws).map_err(|e| CliError::at("continuum", e))?;
            let n = data.merchants();
            let model = ContinuumModel::new(data, vec![dist.clone(); n], eta)
                .map_err(|e| CliError::at("continuum", e))?;
            let sol = model.solve_optz().map_err(|e| CliError::at("continuum", e))?;
            let mut t = Table::new("optz", &["merchant", "z", "corner", "residual", "iterations"]);
            for i in 0..n {
                t.push(vec![
                    i.into(),
                    sol.z[i].into(),
                    sol.corner[i].into(),
                    sol.residual[i].into(),
                    sol.iterations.into(),
                ]);
            }
            art.table(t);
        }
        ContinuumMode::CtrFloor => {
            let eps = required(&spec.eps, "continuum.eps")?.points("continuum.eps")?;
            let lambda1 = required(&spec.lambda1, "continuum.lambda1")?;
            let cases: Vec<(f64, f64)> = lambda1
                .iter()
                .flat_map(|&l| eps.iter().map(move |&e| (l, e)))
                .collect();
            let rows = cases
                .par_iter()
                .map(|&(l, e)| {
                    let law = CtrLaw::uniform(e, 1.0).map_err(|err| CliError::at("continuum.eps", err))?;
                    let data = ContinuumDataset::homogeneous(vec![l, 1.0 - l], law)
                        .map_err(|err| CliError::at("continuum.lambda1", err))?;
                    let model = ContinuumModel::new(data, vec![dist.clone(), dist.clone()], eta)
                        .map_err(|err| CliError::at("continuum", err))?;
                    let sol = model.solve_optz().map_err(|err| CliError::at("continuum", err))?;
                    Ok(vec![e.into(), l.into(), sol.z[0].into(), sol.z[1].into()])
                })
                .collect::<Result<Vec<Vec<Cell>>, CliError>>()?;
            let mut t = Table::new("ctr_floor", &["eps", "lambda1", "z1", "z2"]);
            rows.into_iter().for_each(|r| t.push(r));
            art.table(t);
        }
        ContinuumMode::Zn => {
            let ns = required(&spec.n, "continuum.n")?;
            let law = spec.law.clone().unwrap_or_default().build("continuum.law")?;
            let rows = ns
                .par_iter()
                .map(|&n| {
                    let s = solve_symmetric(&law, dist, eta, n).map_err(|e| CliError::at("continuum.n", e))?;
                    Ok(vec![n.into(), s.z.into()])
                })
                .collect::<Result<Vec<Vec<Cell>>, CliError>>()?;
            let mut t = Table::new("zn", &["N", "zN"]);
            rows.into_iter().for_each(|r| t.push(r));
            art.table(t);
        }
    }
    Ok(())
}

fn large_market(
    spec: &LargeMarketSpec,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    art: &mut Artifacts,
) -> Result<(), CliError> {
    match spec.mode {
        LargeMarketMode::Design => {
            let mu = *required(&spec.mean_ctr, "large_market.mean_ctr")?;
            let cfg = LargeMarketConfig::new(dist.clone(), eta, spec.zeta, mu).map_err(lm_config_err)?;
            let dsn = design(&cfg).map_err(|e| CliError::at("large_market", e))?;
            let pr = profits(&cfg, &dsn);
            let a = are(&cfg).map_err(|e| CliError::at("large_market", e))?;
            let mut t = Table::new(
                "design",
                &[
                    "mean_ctr",
                    "p_s",
                    "p_b",
                    "p_tilde",
                    "saturated",
                    "profit_selling_only",
                    "profit_exchange",
                    "profit_combined",
                    "w_inf",
                    "v_inf",
                    "r_inf",
                    "value",
                    "total_surplus",
                    "are",
                ],
            );
            t.push(vec![
                mu.into(),
                dsn.p_s.into(),
                dsn.p_b.into(),
                dsn.p_tilde.into(),
                dsn.saturated.into(),
                pr.selling_only.into(),
                pr.exchange.into(),
                pr.combined.into(),
                a.w_inf.into(),
                a.v_inf.into(),
                a.r_inf.into(),
                a.value.into(),
                a.total_surplus.into(),
                a.are.into(),
            ]);
            art.table(t);
        }
        LargeMarketMode::AreSweep => {
            let mus = required(&spec.mu, "large_market.mu")?.points("large_market.mu")?;
            let etas = required(&spec.eta_r, "large_market.eta_r")?;
            let mut t = Table::new("are", &["mu", "eta_r", "are", "value", "total_surplus"]);
            for &er in etas {
                let w = WelfareWeight::new(1.0 - er, 0.0, er).map_err(|e| CliError::at("large_market.eta_r", e))?;
                for &mu in &mus {
                    let cfg = LargeMarketConfig::new(dist.clone(), w, spec.zeta, mu)
                        .map_err(|e| CliError::at("large_market", e))?;
                    let a = are(&cfg).map_err(|e| CliError::at("large_market", e))?;
                    t.push(vec![mu.into(), er.into(), a.are.into(), a.value.into(), a.total_surplus.into()]);
                }
            }
            art.table(t);
        }
        LargeMarketMode::FiniteN => {
            let ns = required(&spec.n, "large_market.n")?;
            let law = spec.law.clone().unwrap_or_default().build("large_market.law")?;
            let rows = finite_n_transfer_limit(&law, dist, eta, ns, spec.grid, spec.delta)
                .map_err(|e| CliError::at("large_market", e))?;
            let vf = adx::dist::WeightedVirtual::new(dist.clone(), eta);
            let p_s = vf
                .inverse(adx::Side::Seller, 1.0)
                .map_err(|e| CliError::at("large_market", e))?;
            let mu = law.mean();
            let target = selling_cost_limit(dist, p_s, mu);
            let mut summary = Table::new(
                "finite_n",
                &[
                    "N",
                    "zN",
                    "p_s",
                    "selling_transfer",
                    "selling_limit",
                    "total_transfer",
                    "step_error",
                    "payoff_error",
                ],
            );
            let mut curves = Table::new(
                "ns_curves",
                &["N", "theta", "scaled_clicks", "scaled_transfer", "limit_clicks"],
            );
            for r in &rows {
                summary.push(vec![
                    r.n.into(),
                    r.z.into(),
                    p_s.into(),
                    r.selling_transfer.into(),
                    target.into(),
                    r.total_transfer.into(),
                    r.step_error.into(),
                    r.payoff_error.into(),
                ]);
                for k in 0..r.theta.len() {
                    curves.push(vec![
                        r.n.into(),
                        r.theta[k].into(),
                        r.scaled_clicks[k].into(),
                        r.scaled_transfers[k].into(),
                        limit_clicks(p_s, mu, r.theta[k]).into(),
                    ]);
                }
            }
            art.table(summary);
            art.table(curves);
        }
    }
    Ok(())
}

fn lm_config_err(e: adx::Error) -> CliError {
    match &e {
        adx::Error::Invalid { field, .. } if field.starts_with("eta") => CliError::at("eta", e),
        _ => CliError::at("large_market", e),
    }
}

fn named_data(name: NamedMechanism, alpha: Option<&AlphaSpec>) -> Result<ExclusiveInclusiveData, CliError> {
    let d = match name {
        NamedMechanism::PartnershipDissolution => ExclusiveInclusiveData::new(0.0, 0.0, 0.5, 0.5),
        NamedMechanism::BilateralTrade => ExclusiveInclusiveData::new(0.0, 0.0, 0.0, 1.0),
        NamedMechanism::MonopolyPricing => ExclusiveInclusiveData::new(0.0, 1.0, 0.0, 0.0),
        NamedMechanism::Stylized => return alpha_data(required(&alpha.copied(), "verify.alpha")?, "verify.alpha"),
        NamedMechanism::Finite => unreachable!("finite mechanisms are built from the finite section"),
    };
    Ok(d.expect("named datasets are valid"))
}

fn verify(
    cfg: &ExperimentConfig,
    dist: &TypeDistribution,
    eta: WelfareWeight,
    seed: u64,
    art: &mut Artifacts,
) -> Result<bool, CliError> {
    let spec = cfg.section(&cfg.verify, "verify")?;
    let mut ep = None;
    let mech = match spec.mechanism {
        NamedMechanism::Finite => finite_mechanism(cfg.section(&cfg.finite, "finite")?, dist, eta, seed)?,
        name => {
            let data = named_data(name, spec.alpha.as_ref())?;
            let sol = solve_ep(&data, dist, eta).map_err(|e| CliError::at("verify", e))?;
            let m = sol.mechanism(&data, dist, eta).map_err(|e| CliError::at("verify", e))?;
            ep = Some((data, sol));
            m
        }
    };
    let d = VerifyOptions::default();
    let opts = VerifyOptions {
        ic_eps: spec.ic_eps.unwrap_or(d.ic_eps),
        ir_eps: spec.ir_eps.unwrap_or(d.ir_eps),
        envelope_tol: spec.envelope_tol.unwrap_or(d.envelope_tol),
        saddle_tol: spec.saddle_tol.unwrap_or(d.saddle_tol),
        samples: spec.samples.unwrap_or(d.samples),
        seed,
        ..d
    };
    let mut report = verify_finite(&mech, &opts);
    if let Some(c) = spec.corrupt {
        if c.merchant >= mech.data().merchants() {
            return Err(CliError::schema("verify.corrupt.merchant", "no such merchant"));
        }
        let bad = corrupt_transfers(&mech.outcome(), c.merchant, c.center, c.height, c.width);
        let mut e = check_ic(&bad, opts.ic_eps);
        e.name = "ic.corrupted".into();
        report.entries.push(e);
    }
    if let Some(b) = spec.brute_force {
        let extra_z = vec![mech.rules().iter().map(|r| r.z()).collect::<Vec<f64>>()];
        let extra_ties = ep
            .as_ref()
            .and_then(|(d, s)| s.mechanism(d, dist, eta).ok())
            .map(|m| vec![m.ties().clone()])
            .unwrap_or_default();
        let dists: Vec<TypeDistribution> = mech.rules().iter().map(|r| r.dist().clone()).collect();
        let bf = brute_force_value(mech.data(), &dists, eta, b.type_grid, b.z_grid, &extra_z, &extra_ties)
            .map_err(|e| CliError::at("verify.brute_force", e))?;
        let value = mech.outcome().parts.value;
        report.entries.push(brute_entry(bf.value, value, bf.tolerance));
        let mut t = Table::new(
            "brute_force",
            &["brute_value", "scoring_value", "tolerance", "candidates", "step"],
        );
        t.push(vec![
            bf.value.into(),
            value.into(),
            bf.tolerance.into(),
            bf.candidates.into(),
            bf.step.into(),
        ]);
        art.table(t);
    }
    art.table(report_table(&report));
    art.texts.push(("report.txt".into(), report.to_text()));
    Ok(report.passed())
}

fn brute_entry(brute: f64, value: f64, tol: f64) -> CheckEntry {
    let worst = (brute - value).abs();
    CheckEntry {
        name: "brute_force".into(),
        passed: worst <= tol,
        worst,
        tolerance: tol,
        witness: None,
    }
}

fn report_table(r: &VerificationReport) -> Table {
    let mut t = Table::new("verify", &["check", "passed", "worst", "tolerance", "witness"]);
    for e in &r.entries {
        t.push(vec![
            e.name.clone().into(),
            e.passed.into(),
            e.worst.into(),
            e.tolerance.into(),
            e.witness.as_ref().map_or(String::new(), |w| w.to_string()).into(),
        ]);
    }
    t
}
