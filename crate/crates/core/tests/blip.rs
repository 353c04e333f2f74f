use rand::Rng;
use smart_tmle_core::cate::{fit_blip, true_blip};
use smart_tmle_core::config::AnalysisConfig;
use smart_tmle_core::data::{TrialColumns, TrialDataset};
use smart_tmle_core::learners::{NamedLearner, Terms};
use smart_tmle_core::sim::{simulate_dgp1, stream_rng, SIM1_CELLS};

fn saturated() -> AnalysisConfig {
    AnalysisConfig {
        blip_library: Some(vec![NamedLearner::logistic("saturated", Terms::Saturated, None)]),
        ..Default::default()
    }
}

fn cell_mean(d: &TrialDataset, l: &[f64], a: u8) -> f64 {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| d.baseline_row(i) == l && d.a1()[i] == a).collect();
    rows.iter().map(|&i| f64::from(d.y1()[i])).sum::<f64>() / rows.len() as f64
}

#[test]
fn saturated_blip_is_the_empirical_plug_in() {
    let d = simulate_dgp1(1500, 21, 1).unwrap();
    let b = fit_blip(&d, &saturated()).unwrap();
    for i in 0..d.n() {
        let l = d.baseline_row(i);
        let plug_in = cell_mean(&d, l, 1) - cell_mean(&d, l, 0);
        assert!((b.values[i] - plug_in).abs() < 1e-9, "row {i}: {} vs {plug_in}", b.values[i]);
    }
}

#[test]
fn saturated_blip_converges_to_true_cells() {
    let d = simulate_dgp1(500_000, 2, 1).unwrap();
    let b = fit_blip(&d, &saturated()).unwrap();
    let cells = smart_tmle_core::linalg::Matrix::from_row_major(4, 2, SIM1_CELLS.iter().flatten().copied().collect());
    let fitted = b.predict(&cells).unwrap();
    for (k, l) in SIM1_CELLS.iter().enumerate() {
        let truth = true_blip("sim1", l).unwrap();
        assert!((fitted[k] - truth).abs() < 0.01, "{l:?}: {} vs {truth}", fitted[k]);
    }
}

#[test]
fn noise_outcome_gives_flat_blip() {
    let n = 5000;
    let mut rng = stream_rng(17, 0);
    let mut cols = TrialColumns { baseline_names: vec!["l1".into(), "l2".into()], ..Default::default() };
    for _ in 0..n {
        for _ in 0..2 {
            cols.baseline.push(f64::from(u8::from(rng.random::<f64>() < 0.5)));
        }
        cols.a1.push(u8::from(rng.random::<f64>() < 0.5));
        cols.y1.push(u8::from(rng.random::<f64>() < 0.5));
        cols.a2.push(Some(u8::from(rng.random::<f64>() < 0.5)));
        cols.y2.push(u8::from(rng.random::<f64>() < 0.5));
    }
    let d = TrialDataset::from_columns(cols).unwrap();
    let b = fit_blip(&d, &AnalysisConfig::default()).unwrap();
    let worst = b.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 0.05, "max |blip| = {worst}");
    assert!(b.values.iter().all(|v| v.abs() <= 1.0));
}
