//! Cross-validated stacking of candidate learners.
//!
//! Each candidate is trained on every training split and scored on the held-out
//! split. The meta-weights minimize the weighted cross-validated Bernoulli
//! negative log-likelihood of the convex combination of those held-out
//! predictions, over the probability simplex.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::library::{check_library, CandidateFit, NamedLearner};
use super::{Features, LearnerError};
use crate::data::{make_folds, Folds};
use crate::linalg::Matrix;
use crate::math::{bernoulli_nll, clip};

const META_TOL: f64 = 1e-8;
const META_MAX_ITER: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub candidates: Vec<CandidateFit>,
    pub weights: Vec<f64>,
    /// Cross-validated risk of each candidate.
    pub cv_risk: Vec<f64>,
    /// Cross-validated risk of the weighted combination.
    pub ensemble_cv_risk: f64,
    pub q_bound: f64,
}

impl EnsembleFit {
    /// Weighted combination of the clipped candidate predictions.
    pub fn predict(&self, features: &Features) -> Vec<f64> {
        let mut out = vec![0.0; features.matrix.rows()];
        for (c, &a) in self.candidates.iter().zip(&self.weights) {
            if a == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(c.predict(features)) {
                *o += a * clip(p, self.q_bound);
            }
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.name.clone()).collect()
    }
}

fn risk(z: &Matrix, y: &[f64], w: &[f64], alpha: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    (0..z.rows())
        .map(|i| w[i] * bernoulli_nll(y[i], crate::linalg::dot(z.row(i), alpha)))
        .sum::<f64>()
        / sw
}

fn risk_gradient(z: &Matrix, y: &[f64], w: &[f64], alpha: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    let mut g = vec![0.0; alpha.len()];
    for i in 0..z.rows() {
        let row = z.row(i);
        let p = crate::linalg::dot(row, alpha);
        let d = w[i] * (p - y[i]) / (p * (1.0 - p));
        for k in 0..alpha.len() {
            g[k] += d * row[k];
        }
    }
    g.iter_mut().for_each(|v| *v /= sw);
    g
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimize the cross-validated risk over the simplex by projected gradient
/// descent with backtracking, starting at the best single candidate (the
/// first in library order on ties). Returns the weights and their risk.
pub(crate) fn meta_weights(z: &Matrix, y: &[f64], w: &[f64], cv_risk: &[f64]) -> (Vec<f64>, f64) {
    let k = cv_risk.len();
    let best = (1..k).fold(0, |b, j| if cv_risk[j] < cv_risk[b] { j } else { b });
    let mut alpha = vec![0.0; k];
    alpha[best] = 1.0;
    let mut current = risk(z, y, w, &alpha);
    if k == 1 {
        return (alpha, current);
    }
    let mut step = 1.0;
    for _ in 0..META_MAX_ITER {
        let g = risk_gradient(z, y, w, &alpha);
        let mut improved = None;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
            let cand = project_simplex(&trial);
            let diff: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
            let lin: f64 = diff.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            let r = risk(z, y, w, &cand);
            if r <= current + lin + quad && r <= current {
                improved = Some((cand, r));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, r)) = improved else { break };
        let gain = current - r;
        alpha = cand;
        current = r;
        step *= 2.0;
        if gain < META_TOL {
            break;
        }
    }
    (alpha, current)
}

fn is_binary(y: &[f64]) -> bool {
    y.iter().all(|v| *v == 0.0 || *v == 1.0)
}

fn folds_are_degenerate(folds: &Folds, y: &[f64]) -> bool {
    is_binary(y)
        && (0..folds.k()).any(|f| {
            let val = folds.validation(f);
            let ones = val.iter().filter(|&&i| y[i] == 1.0).count();
            ones == 0 || ones == val.len()
        })
}

/// Fit the stacked ensemble.
///
/// A binary outcome whose folds leave some fold with a single outcome class
/// is re-split once with a fresh seed before giving up.
pub fn fit_super_learner(
    features: &Features,
    y: &[f64],
    w: &[f64],
    library: &[NamedLearner],
    folds: &Folds,
    q_bound: f64,
) -> Result<EnsembleFit, LearnerError> {
    check_library(library)?;
    let n = features.matrix.rows();
    if folds.n() != n {
        return Err(LearnerError::DimensionMismatch { expected: n, found: folds.n() });
    }
    let mut folds = folds.clone();
    if folds_are_degenerate(&folds, y) {
        folds = make_folds(n, folds.k(), folds.seed().wrapping_add(0x9E37_79B9_7F4A_7C15))
            .map_err(|_| LearnerError::DegenerateFolds)?;
        if folds_are_degenerate(&folds, y) {
            return Err(LearnerError::DegenerateFolds);
        }
    }

    let k = library.len();
    let mut z = Matrix::zeros(n, k);
    for f in 0..folds.k() {
        let train = folds.training(f);
        let valid = folds.validation(f);
        let f_train = features.select_rows(&train);
        let f_valid = features.select_rows(&valid);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let w_train: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        for (c, learner) in library.iter().enumerate() {
            let seed = folds.seed() ^ ((f as u64) << 32 | c as u64);
            let fit = learner.fit(&f_train, &y_train, &w_train, seed)?;
            for (&i, p) in valid.iter().zip(fit.predict(&f_valid)) {
                z[(i, c)] = clip(p, q_bound);
            }
        }
    }

    let cv_risk: Vec<f64> = (0..k)
        .map(|c| {
            let mut unit = vec![0.0; k];
            unit[c] = 1.0;
            risk(&z, y, w, &unit)
        })
        .collect();
    let (weights, ensemble_cv_risk) = meta_weights(&z, y, w, &cv_risk);

    let candidates = library
        .iter()
        .enumerate()
        .map(|(c, l)| l.fit(features, y, w, folds.seed().wrapping_add(c as u64)))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(EnsembleFit { candidates, weights, cv_risk, ensemble_cv_risk, q_bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_basics() {
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert!(p.iter().zip([0.2, 0.3, 0.5]).all(|(a, b)| (a - b).abs() < 1e-15));
        let p = project_simplex(&[5.0, -1.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
