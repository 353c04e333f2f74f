use rand::Rng;
use smart_tmle_core::config::AnalysisConfig;
use smart_tmle_core::data::{TrialColumns, TrialDataset};
use smart_tmle_core::effects::*;
use smart_tmle_core::math::mean;
use smart_tmle_core::sim::{simulate_dgp1, simulate_dgp2, stream_rng};

fn config() -> AnalysisConfig {
    AnalysisConfig::default()
}

fn coin_flips(n: usize, seed: u64) -> TrialDataset {
    let mut rng = stream_rng(seed, 0);
    let mut coin = || u8::from(rng.random::<f64>() < 0.5);
    let mut cols = TrialColumns { baseline_names: vec!["l1".into()], ..Default::default() };
    for _ in 0..n {
        cols.baseline.push(f64::from(coin()));
        cols.a1.push(coin());
        cols.y1.push(coin());
        cols.a2.push(Some(coin()));
        cols.y2.push(coin());
    }
    TrialDataset::from_columns(cols).unwrap()
}

fn assert_scores_solved(e: &EffectEstimate) {
    assert!(mean(&e.influence).abs() < 1e-8, "{}: mean IC {}", e.estimand, mean(&e.influence));
    assert!(e.se >= 0.0 && e.ci_lower <= e.estimate && e.estimate <= e.ci_upper);
}

#[test]
fn first_stage_risk_differences() {
    let d = simulate_dgp1(50_000, 1, 1).unwrap();
    let e = ate_tmle(&d, &config()).unwrap();
    assert_scores_solved(&e);
    assert!((e.estimate - 0.1384).abs() < 0.01, "{}", e.estimate);

    let adjusted = AnalysisConfig { adjust_covariates: vec!["l1".into(), "l2".into()], ..config() };
    let a = ate_tmle(&d, &adjusted).unwrap();
    assert_scores_solved(&a);
    assert!((a.estimate - 0.1384).abs() < 0.01);
    assert!(a.se <= e.se + 1e-12);

    let d = simulate_dgp2(50_000, 1).unwrap();
    let e = ate_tmle(&d, &config()).unwrap();
    assert_scores_solved(&e);
    assert!((e.estimate - 0.0554).abs() < 0.01, "{}", e.estimate);
}

#[test]
fn second_stage_risk_differences() {
    for q in [1, 2] {
        let d = simulate_dgp1(50_000, 2, q).unwrap();
        let m1 = two_stage_mean_tmle(&d, &config(), 1).unwrap();
        assert_scores_solved(&m1);
        let rd = second_stage_rd(&d, &config()).unwrap();
        assert!((rd.estimate - 0.1155).abs() < 0.01, "variant {q}: {}", rd.estimate);
    }
    let d = simulate_dgp2(50_000, 2).unwrap();
    let rd = second_stage_rd(&d, &config()).unwrap();
    assert_scores_solved(&rd);
    assert!((rd.estimate - 0.0564).abs() < 0.01, "{}", rd.estimate);
}

#[test]
fn contrast_standard_error_from_stored_curves() {
    let d = simulate_dgp2(3000, 6).unwrap();
    let ate = ate_tmle(&d, &config()).unwrap();
    let rd = second_stage_rd(&d, &config()).unwrap();
    let c = benefit_harm_contrast(&d, &config()).unwrap();
    let diff: Vec<f64> = ate.influence.iter().zip(&rd.influence).map(|(a, b)| a - b).collect();
    let m = mean(&diff);
    let var = diff.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / diff.len() as f64;
    assert!((c.se - (var / diff.len() as f64).sqrt()).abs() < 1e-15);
    assert!((c.estimate - (ate.estimate - rd.estimate)).abs() < 1e-15);
}

#[test]
fn contrast_on_second_design() {
    let d = simulate_dgp2(50_000, 3).unwrap();
    let c = benefit_harm_contrast(&d, &config()).unwrap();
    assert!((c.estimate - (0.0554 - 0.0564)).abs() < 3.0 * c.se + 0.005, "{} (se {})", c.estimate, c.se);
}

#[test]
fn null_design_contrast_is_near_zero() {
    let d = coin_flips(20_000, 4);
    let c = benefit_harm_contrast(&d, &config()).unwrap();
    assert!(c.estimate.abs() < 3.5 * c.se, "{} (se {})", c.estimate, c.se);
}
