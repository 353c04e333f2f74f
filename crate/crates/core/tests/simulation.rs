use proptest::prelude::*;
use smart_tmle_core::data::subset_initiators;
use smart_tmle_core::sim::*;

const N_LARGE: usize = 1_000_000;

#[test]
fn fixed_blip_oracles() {
    let v1 = oracle_true_beta3(Dgp::Sim1 { variant: 1 }, 0, 0).unwrap();
    let v2 = oracle_true_beta3(Dgp::Sim1 { variant: 2 }, 0, 0).unwrap();
    let s2 = oracle_true_beta3(Dgp::Sim2, N_LARGE, 1).unwrap();
    assert!((v1 + 1.92).abs() < 0.05, "{v1}");
    assert!((v2 - 1.76).abs() < 0.05, "{v2}");
    assert!((s2 - 2.36).abs() < 0.05, "{s2}");
    assert!(oracle_true_beta3(Dgp::Sim1 { variant: 3 }, 0, 0).is_err());
    assert!(matches!(Dgp::parse("sim9"), Err(SimError::UnknownDgp(_))));
}

#[test]
fn first_design_marginals_by_simulation() {
    let d = simulate_dgp1(N_LARGE, 7, 1).unwrap();
    let arm_mean = |a: u8, y: &dyn Fn(usize) -> u8, t: &dyn Fn(usize) -> u8| {
        let (mut s, mut c) = (0.0, 0.0);
        for i in 0..d.n() {
            if t(i) == a {
                s += f64::from(y(i));
                c += 1.0;
            }
        }
        s / c
    };
    let y1 = |i: usize| d.y1()[i];
    let a1 = |i: usize| d.a1()[i];
    let y2 = |i: usize| d.y2()[i];
    let a2 = |i: usize| d.a2()[i].unwrap();
    let rd1 = arm_mean(1, &y1, &a1) - arm_mean(0, &y1, &a1);
    let rd2 = arm_mean(1, &y2, &a2) - arm_mean(0, &y2, &a2);
    assert!((rd1 - 0.1384).abs() < 0.005, "{rd1}");
    assert!((rd2 - 0.1155).abs() < 0.005, "{rd2}");

    // Baseline cells are equiprobable: chi-square with 3 df below its 0.999 quantile.
    let mut counts = [0.0f64; 4];
    for i in 0..d.n() {
        let l = d.baseline_row(i);
        counts[(l[0] + 2.0 * l[1]) as usize] += 1.0;
    }
    let e = d.n() as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
    assert!(chi2 < 16.27, "{chi2}");
}

#[test]
fn first_design_conditional_oracles() {
    let m1 = marginal_oracle(Dgp::Sim1 { variant: 1 }, 0, 0).unwrap();
    let m2 = marginal_oracle(Dgp::Sim1 { variant: 2 }, 0, 0).unwrap();
    assert!((m1.mean_blip - 0.13845).abs() < 5e-5);
    for (got, want) in [
        (m1.first_stage_rd, 0.1384),
        (m1.second_stage_rd, 0.1155),
        (m2.second_stage_rd, 0.1155),
        (m1.rd_positive_blip, 0.0755),
        (m1.rd_negative_blip, 0.2320),
        (m2.rd_positive_blip, 0.1539),
        (m2.rd_negative_blip, -0.0029),
    ] {
        assert!((got - want).abs() < 0.005, "{got} vs {want}");
    }
}

#[test]
fn second_design_marginals() {
    let m = marginal_oracle(Dgp::Sim2, N_LARGE, 3).unwrap();
    assert!((m.first_stage_rd - 0.0554).abs() < 0.005, "{}", m.first_stage_rd);
    assert!((m.second_stage_rd - 0.0564).abs() < 0.005, "{}", m.second_stage_rd);

    let d = simulate_dgp2(N_LARGE, 3).unwrap();
    let mean_y1 = |a: u8| {
        let v: Vec<f64> = (0..d.n()).filter(|&i| d.a1()[i] == a).map(|i| f64::from(d.y1()[i])).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let rd1 = mean_y1(1) - mean_y1(0);
    assert!((rd1 - 0.0554).abs() < 0.005, "{rd1}");
}

#[test]
fn initiator_subset_of_second_design() {
    let d = simulate_dgp2(1815, 2024).unwrap();
    let s = subset_initiators(&d).unwrap();
    let non = d.a1().iter().filter(|&&a| a == 0).count();
    assert_eq!(s.n() + non, d.n());
    // Recorded on first run; P(a1 = 1) = 1/3 gives about 605.
    assert_eq!(s.n(), 623);
    assert!(s.row_ids().iter().all(|&i| d.a1()[i] == 1));
}

#[test]
fn smoke_run_and_determinism() {
    let s = McSettings::new(Scenario::Sim1Dgp1, 2, 400, 5);
    let a = run_monte_carlo(&s).unwrap();
    let b = run_monte_carlo(&s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.replicates.len(), 2);
    assert!((a.mse - (a.bias * a.bias + a.variance)).abs() < 1e-12);
    assert!((0.0..=100.0).contains(&a.coverage) && (0.0..=100.0).contains(&a.power));
    assert!(McSettings::new(Scenario::Sim1Dgp1, 1, 400, 5).validate().is_err());
}

#[test]
fn replicates_depend_only_on_master_seed_and_index() {
    let s = McSettings::new(Scenario::Sim1Dgp2, 3, 300, 11);
    let cfg = s.resolved_config();
    let later = run_replicate(&s, &cfg, 2).unwrap();
    let full = run_monte_carlo(&s).unwrap();
    assert_eq!(full.replicates[2], later);
}

fn fake(r: usize, estimate: f64, truth: f64) -> ReplicateResult {
    ReplicateResult {
        replicate: r,
        estimate,
        se: 0.5,
        ci_lower: estimate - 1.0,
        ci_upper: estimate + 1.0,
        truth,
        covered: (estimate - truth).abs() <= 1.0,
        rejected: estimate.abs() > 1.0,
        max_abs_mean_ic: 0.0,
        blip_sd: 0.1,
    }
}

#[test]
fn too_many_failures_abort() {
    let s = McSettings::new(Scenario::Null, 100, 100, 0);
    let mut outcomes: Vec<_> = (0..98).map(|r| Ok(fake(r, 0.1, 0.0))).collect();
    outcomes.push(Err(ReplicateFailure { replicate: 98, message: "x".into() }));
    outcomes.push(Err(ReplicateFailure { replicate: 99, message: "y".into() }));
    assert!(matches!(summarize(&s, 0.0, outcomes), Err(SimError::TooManyFailures { failed: 2, .. })));
    let mut outcomes: Vec<_> = (0..99).map(|r| Ok(fake(r, 0.1, 0.0))).collect();
    outcomes.push(Err(ReplicateFailure { replicate: 99, message: "y".into() }));
    assert_eq!(summarize(&s, 0.0, outcomes).unwrap().failures.len(), 1);
}

proptest! {
    #[test]
    fn mse_identity(values in prop::collection::vec((-5.0f64..5.0, -3.0f64..3.0), 2..60)) {
        let s = McSettings::new(Scenario::Null, values.len(), 100, 0);
        let outcomes = values.iter().enumerate().map(|(r, &(e, t))| Ok(fake(r, e, t))).collect();
        let rep = summarize(&s, 0.0, outcomes).unwrap();
        prop_assert!((rep.mse - (rep.bias * rep.bias + rep.variance)).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&rep.coverage));
        prop_assert!((0.0..=100.0).contains(&rep.power));
    }
}
