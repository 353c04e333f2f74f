//! Weighted logistic regression with a fixed offset, fitted by iteratively
//! reweighted least squares (Newton-Raphson on the Bernoulli quasi-likelihood).
//!
//! Responses may be fractional in `[0, 1]`: the score equations are the same
//! as for binary outcomes, which is what lets targeted fits regress continuous
//! predicted means.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::linalg::{add_outer, symmetrize_lower, Cholesky, Matrix};
use crate::math::expit;

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOL: f64 = 1e-8;
pub const STEP_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-13;

/// A design matrix with labelled columns. By convention the intercept, when
/// present, is an explicit leading column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: Matrix,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: Matrix, labels: Vec<String>) -> Result<Self, LearnerError> {
        if labels.len() != matrix.cols() {
            return Err(LearnerError::DimensionMismatch { expected: matrix.cols(), found: labels.len() });
        }
        for (j, l) in labels.iter().enumerate() {
            if labels[..j].contains(l) {
                return Err(LearnerError::InvalidInput(alloc::format!("duplicate design label `{l}`")));
            }
        }
        if matrix.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::InvalidInput("design matrix has non-finite entries".into()));
        }
        Ok(Self { matrix, labels })
    }

    /// Build from rows without label checks; labels are `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LearnerError> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(LearnerError::DimensionMismatch { expected: d, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        let labels = (0..d).map(|j| alloc::format!("x{j}")).collect();
        Self::new(Matrix::from_row_major(rows.len(), d, data), labels)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted negative log-likelihood at the returned coefficients,
    /// excluding any ridge penalty.
    pub neg_log_lik: f64,
    /// Largest absolute score component at the returned coefficients.
    pub max_abs_score: f64,
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn objective(x: &Matrix, y: &[f64], w: &[f64], offset: &[f64], beta: &[f64], penalty: &[f64]) -> (f64, f64) {
    let mut nll = 0.0;
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let eta = crate::linalg::dot(x.row(i), beta) + offset[i];
        nll += w[i] * (softplus(eta) - y[i] * eta);
    }
    let pen = 0.5 * penalty.iter().zip(beta).map(|(l, b)| l * b * b).sum::<f64>();
    (nll, nll + pen)
}

fn score_and_information(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    offset: &[f64],
    beta: &[f64],
    penalty: &[f64],
) -> (Vec<f64>, Matrix) {
    let d = x.cols();
    let mut score = vec![0.0; d];
    let mut info = Matrix::zeros(d, d);
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let row = x.row(i);
        let p = expit(crate::linalg::dot(row, beta) + offset[i]);
        let r = w[i] * (y[i] - p);
        for j in 0..d {
            score[j] += r * row[j];
        }
        add_outer(&mut info, row, w[i] * p * (1.0 - p));
    }
    for j in 0..d {
        score[j] -= penalty[j] * beta[j];
        info[(j, j)] += penalty[j];
    }
    symmetrize_lower(&mut info);
    (score, info)
}

fn validate(x: &Matrix, y: &[f64], w: &[f64], offset: &[f64]) -> Result<(), LearnerError> {
    let n = x.rows();
    for len in [y.len(), w.len(), offset.len()] {
        if len != n {
            return Err(LearnerError::DimensionMismatch { expected: n, found: len });
        }
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(LearnerError::InvalidInput("responses must lie in [0, 1]".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(LearnerError::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(LearnerError::InvalidInput("weights are all zero".into()));
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::InvalidInput("offset has non-finite entries".into()));
    }
    Ok(())
}

/// Penalized IRLS core shared by plain and ridge logistic fits. `penalty[j]`
/// is the quadratic penalty on coefficient `j` (zero for unpenalized terms).
pub(crate) fn irls(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    offset: &[f64],
    penalty: &[f64],
) -> Result<LogisticFit, LearnerError> {
    validate(x, y, w, offset)?;
    let d = x.cols();
    let mut beta = vec![0.0; d];
    let (mut nll, mut obj) = objective(x, y, w, offset, &beta, penalty);
    let mut converged = false;
    let mut iterations = 0;
    let mut max_abs_score = f64::INFINITY;

    while iterations < MAX_ITERATIONS {
        let (score, info) = score_and_information(x, y, w, offset, &beta, penalty);
        max_abs_score = score.iter().fold(0.0, |m, s| m.max(s.abs()));
        if max_abs_score < SCORE_TOL {
            converged = true;
            break;
        }
        let step = match Cholesky::new(&info, PIVOT_TOL) {
            Ok(ch) => ch.solve(&score),
            // At the starting point this is genuine collinearity; later it is
            // the information collapsing under (quasi-)separation.
            Err(_) if iterations == 0 => return Err(LearnerError::SingularDesign),
            Err(_) => break,
        };
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = false;
        let mut candidate = beta.clone();
        for _ in 0..40 {
            for j in 0..d {
                candidate[j] = beta[j] + t * step[j];
            }
            let (c_nll, c_obj) = objective(x, y, w, offset, &candidate, penalty);
            if c_obj.is_finite() && c_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                nll = c_nll;
                obj = c_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let change = step.iter().fold(0.0, |m: f64, s| m.max((t * s).abs()));
        beta.clone_from(&candidate);
        if change < STEP_TOL {
            let (score, _) = score_and_information(x, y, w, offset, &beta, penalty);
            max_abs_score = score.iter().fold(0.0, |m, s| m.max(s.abs()));
            converged = true;
            break;
        }
    }

    if converged && beta.iter().any(|b| !b.is_finite()) {
        converged = false;
    }
    Ok(LogisticFit { coefficients: beta, converged, iterations, neg_log_lik: nll, max_abs_score })
}

/// Maximize the weighted Bernoulli quasi-log-likelihood
/// `sum_i w_i [y_i eta_i - log(1 + exp(eta_i))]`, `eta = X beta + offset`.
///
/// Stops when the largest score component drops below `1e-8` or the Newton
/// step below `1e-10`, with at most 100 iterations. Failure to converge is
/// reported through [`LogisticFit::converged`]; a rank-deficient weighted
/// information matrix is an error.
pub fn fit_logistic(
    x: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    offset: &[f64],
) -> Result<LogisticFit, LearnerError> {
    irls(x.matrix(), y, weights, offset, &vec![0.0; x.cols()])
}

/// Inverse-logit of `X beta + offset`, kept strictly inside `(0, 1)`.
pub fn predict_proba(fit: &LogisticFit, x: &DesignMatrix, offset: &[f64]) -> Result<Vec<f64>, LearnerError> {
    if x.cols() != fit.coefficients.len() {
        return Err(LearnerError::DimensionMismatch { expected: fit.coefficients.len(), found: x.cols() });
    }
    if offset.len() != x.rows() {
        return Err(LearnerError::DimensionMismatch { expected: x.rows(), found: offset.len() });
    }
    Ok((0..x.rows())
        .map(|i| {
            let p = expit(crate::linalg::dot(x.matrix().row(i), &fit.coefficients) + offset[i]);
            p.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(n: usize) -> DesignMatrix {
        DesignMatrix::from_rows(&vec![vec![1.0]; n]).unwrap()
    }

    #[test]
    fn intercept_only_balanced_outcome_gives_zero() {
        let x = intercept_only(4);
        let fit = fit_logistic(&x, &[0.0, 1.0, 1.0, 0.0], &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn fractional_response_mean_is_recovered() {
        let x = intercept_only(3);
        let fit = fit_logistic(&x, &[0.2, 0.3, 0.4], &[1.0; 3], &[0.0; 3]).unwrap();
        assert!((expit(fit.coefficients[0]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let err = fit_logistic(&x, &[0.0, 1.0, 1.0], &[1.0; 3], &[0.0; 3]).unwrap_err();
        assert_eq!(err, LearnerError::SingularDesign);
    }

    #[test]
    fn separation_reports_nonconvergence() {
        let x = DesignMatrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -2.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let fit = fit_logistic(&x, &[0.0, 0.0, 1.0, 1.0], &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(!fit.converged || fit.coefficients[1] > 10.0);
        let p = predict_proba(&fit, &x, &[0.0; 4]).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn prediction_saturates_without_overflow() {
        let fit = LogisticFit {
            coefficients: vec![0.0],
            converged: true,
            iterations: 0,
            neg_log_lik: 0.0,
            max_abs_score: 0.0,
        };
        let x = intercept_only(2);
        assert_eq!(predict_proba(&fit, &x, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = predict_proba(&fit, &x, &[20.0, 800.0]).unwrap();
        assert!(p.iter().all(|v| *v > 0.999 && *v < 1.0));
        assert!(predict_proba(&fit, &intercept_only(1), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_weights_rejected() {
        let x = intercept_only(2);
        assert!(fit_logistic(&x, &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
