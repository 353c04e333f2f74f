use proptest::prelude::*;
use rand::Rng;
use smart_tmle_core::data::make_folds;
use smart_tmle_core::learners::{
    default_library, fit_learner_library, fit_super_learner, Features, LearnerError, NamedLearner, Terms,
};
use smart_tmle_core::linalg::Matrix;
use smart_tmle_core::math::expit;
use smart_tmle_core::sim::{simulate_dgp2, stream_rng};

fn logistic_data(n: usize, seed: u64) -> (Features, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = f64::from(u8::from(rng.random::<f64>() < 0.5));
        let l: f64 = rng.random::<f64>() * 2.0 - 1.0;
        x.extend_from_slice(&[a, l]);
        y.push(f64::from(u8::from(rng.random::<f64>() < expit(-0.5 + 1.5 * a + 2.0 * l))));
    }
    let f = Features::new(Matrix::from_row_major(n, 2, x), vec!["a".into(), "l".into()], Some(0)).unwrap();
    (f, y)
}

#[test]
fn mean_candidate_predicts_outcome_mean() {
    let (f, y) = logistic_data(100, 2);
    let fits = fit_learner_library(&f, &y, &vec![1.0; 100], &[NamedLearner::mean()], 0).unwrap();
    let m = y.iter().sum::<f64>() / 100.0;
    assert!(fits[0].predict(&f).iter().all(|p| (p - m).abs() < 1e-15));
}

#[test]
fn library_validation() {
    let (f, y) = logistic_data(50, 2);
    let lib = vec![NamedLearner::mean(), NamedLearner::mean()];
    assert!(matches!(fit_learner_library(&f, &y, &vec![1.0; 50], &lib, 0), Err(LearnerError::DuplicateLearner(_))));
    assert_eq!(fit_learner_library(&f, &y, &vec![1.0; 50], &[], 0).unwrap_err(), LearnerError::EmptyLibrary);
}

#[test]
fn default_library_on_second_design_predicts_inside_unit_interval() {
    let d = simulate_dgp2(600, 4).unwrap();
    let a1: Vec<f64> = d.a1().iter().map(|&a| f64::from(a)).collect();
    let y1: Vec<f64> = d.y1().iter().map(|&a| f64::from(a)).collect();
    let f = Features::with_leading_treatment("a1", &a1, &d.baseline_matrix(), d.baseline_names()).unwrap();
    let fits = fit_learner_library(&f, &y1, &vec![1.0; 600], &default_library(d.baseline_names()), 7).unwrap();
    assert_eq!(fits.len(), 8);
    for c in &fits {
        assert!(c.predict(&f).iter().all(|p| *p > 0.0 && *p < 1.0), "{}", c.name);
    }
}

#[test]
fn ensemble_prefers_correct_logistic_model() {
    let (f, y) = logistic_data(5000, 8);
    let lib = vec![NamedLearner::mean(), NamedLearner::logistic("logistic", Terms::Main, None)];
    let folds = make_folds(5000, 10, 1).unwrap();
    let e = fit_super_learner(&f, &y, &vec![1.0; 5000], &lib, &folds, 1e-4).unwrap();
    assert!(e.weights[1] >= 0.9, "{:?}", e.weights);
    assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(e.weights.iter().all(|w| *w >= 0.0));
}

#[test]
fn single_mean_library_gets_unit_weight() {
    let (f, y) = logistic_data(200, 3);
    let folds = make_folds(200, 5, 1).unwrap();
    let e = fit_super_learner(&f, &y, &vec![1.0; 200], &[NamedLearner::mean()], &folds, 1e-4).unwrap();
    assert_eq!(e.weights, vec![1.0]);
}

#[test]
fn fold_with_one_class_is_degenerate() {
    let (f, mut y) = logistic_data(40, 3);
    y.iter_mut().for_each(|v| *v = 0.0);
    y[0] = 1.0;
    let folds = make_folds(40, 5, 1).unwrap();
    let lib = vec![NamedLearner::mean(), NamedLearner::logistic("logistic", Terms::Main, None)];
    assert_eq!(fit_super_learner(&f, &y, &vec![1.0; 40], &lib, &folds, 1e-4).unwrap_err(), LearnerError::DegenerateFolds);
}

#[test]
fn fold_sizes() {
    let f = make_folds(10, 5, 3).unwrap();
    assert!((0..5).all(|k| f.validation(k).len() == 2));
    let f = make_folds(7, 3, 3).unwrap();
    let mut sizes: Vec<usize> = (0..3).map(|k| f.validation(k).len()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![2, 2, 3]);
    assert_eq!(make_folds(7, 3, 3).unwrap(), f);
    assert!(make_folds(3, 5, 0).is_err());
    assert!(make_folds(10, 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let f = make_folds(n, k, seed).unwrap();
        let mut seen = vec![0u8; n];
        let mut sizes = Vec::new();
        for fold in 0..k {
            let v = f.validation(fold);
            sizes.push(v.len());
            for i in v {
                seen[i] += 1;
            }
            prop_assert_eq!(f.training(fold).len() + sizes[fold], n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ensemble_is_convex_and_no_worse_than_best_candidate(seed in 0u64..1000) {
        let (f, y) = logistic_data(300, seed);
        let lib = vec![
            NamedLearner::mean(),
            NamedLearner::logistic("main", Terms::Main, None),
            NamedLearner::logistic("l_only", Terms::Main, Some(&["l"])),
        ];
        let folds = make_folds(300, 5, seed).unwrap();
        let e = fit_super_learner(&f, &y, &vec![1.0; 300], &lib, &folds, 1e-4).unwrap();
        let best = e.cv_risk.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(e.ensemble_cv_risk <= best + 1e-8);
        let preds: Vec<Vec<f64>> = e.candidates.iter().map(|c| c.predict(&f)).collect();
        let ens = e.predict(&f);
        for i in 0..300 {
            let lo = preds.iter().map(|p| p[i].clamp(1e-4, 1.0 - 1e-4)).fold(f64::INFINITY, f64::min);
            let hi = preds.iter().map(|p| p[i].clamp(1e-4, 1.0 - 1e-4)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ens[i] >= lo - 1e-12 && ens[i] <= hi + 1e-12);
        }
    }
}

#[test]
fn aliased_terms_are_dropped() {
    let (f, y) = logistic_data(300, 4);
    let n = f.rows();
    let mut x = Vec::with_capacity(3 * n);
    for i in 0..n {
        let r = f.matrix.row(i);
        x.extend_from_slice(&[r[0], r[1], 2.0 * r[1]]);
    }
    let dup = Features::new(Matrix::from_row_major(n, 3, x), vec!["a".into(), "l".into(), "l2x".into()], Some(0)).unwrap();
    let lib = [NamedLearner::logistic("main", Terms::Main, None)];
    let w = vec![1.0; n];
    let base = fit_learner_library(&f, &y, &w, &lib, 0).unwrap()[0].predict(&f);
    let aliased = fit_learner_library(&dup, &y, &w, &lib, 0).unwrap()[0].predict(&dup);
    for (a, b) in base.iter().zip(&aliased) {
        assert!((a - b).abs() < 1e-9);
    }
}
