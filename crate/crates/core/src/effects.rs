//! Average-effect TMLEs: the first-stage risk difference, the counterfactual
//! mean of `y2` under `(a1 = 1, a2)`, and their benefit-minus-harm contrast.
//!
//! Every estimate carries its per-subject influence curve (indexed by full-data
//! row) so that contrasts get delta-method standard errors by subtraction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError};
use crate::data::{make_folds, DataError, TrialDataset, A1};
use crate::learners::logistic::{fit_logistic, DesignMatrix};
use crate::learners::{Features, LearnerError, OutcomeModel};
use crate::linalg::{dot, Matrix};
use crate::math::{clip, expit, logit, mean, normal_quantile, population_variance};
use crate::msm::{estimate_g, MsmError, SecondStage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectError {
    #[error("first-stage arm a1={0} is empty")]
    EmptyArm(u8),
    #[error("no subject has a1=1 and a2={0}")]
    EmptyCell(u8),
    #[error("treatment probability {0:.3e} violates positivity")]
    Positivity(f64),
    #[error("{0} fluctuation did not converge")]
    Nonconvergence(&'static str),
    #[error(transparent)]
    Msm(#[from] MsmError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Influence curve per subject of the full dataset.
    #[serde(skip)]
    pub influence: Vec<f64>,
}

impl EffectEstimate {
    /// Wald summary with `se = sqrt(Var_n(ic) / n)`.
    pub fn from_influence(estimand: impl Into<String>, estimate: f64, influence: Vec<f64>) -> Self {
        let se = (population_variance(&influence) / influence.len() as f64).sqrt();
        let z = normal_quantile(0.975);
        Self { estimand: estimand.into(), estimate, se, ci_lower: estimate - z * se, ci_upper: estimate + z * se, influence }
    }

    /// `self - other` with the influence curves subtracted.
    pub fn minus(&self, other: &EffectEstimate, estimand: impl Into<String>) -> Self {
        let ic = self.influence.iter().zip(&other.influence).map(|(a, b)| a - b).collect();
        Self::from_influence(estimand, self.estimate - other.estimate, ic)
    }
}

/// Logistic design `(1, columns...)` over `rows`.
fn design_with_intercept(cov: &Matrix, names: &[String]) -> Result<DesignMatrix, LearnerError> {
    let mut x = Vec::with_capacity(cov.rows() * (cov.cols() + 1));
    for i in 0..cov.rows() {
        x.push(1.0);
        x.extend_from_slice(cov.row(i));
    }
    let mut labels = vec![String::from("(intercept)")];
    labels.extend(names.iter().cloned());
    DesignMatrix::new(Matrix::from_row_major(cov.rows(), cov.cols() + 1, x), labels)
}

/// Intercept-only logistic fluctuation `expit(offset + e)` solving
/// `sum w (y - expit(offset + e)) = 0`.
fn fluctuate_intercept(y: &[f64], offset: &[f64], w: &[f64], what: &'static str) -> Result<f64, EffectError> {
    let n = y.len();
    let x = DesignMatrix::new(Matrix::from_row_major(n, 1, vec![1.0; n]), vec![String::from("epsilon")])?;
    let fit = fit_logistic(&x, y, w, offset)?;
    if !fit.converged {
        return Err(EffectError::Nonconvergence(what));
    }
    Ok(fit.coefficients[0])
}

fn first_stage_g1(data: &TrialDataset, config: &AnalysisConfig) -> Result<f64, EffectError> {
    let g1 = config.known_g1.unwrap_or_else(|| data.a1().iter().map(|&a| f64::from(a)).sum::<f64>() / data.n() as f64);
    if !(g1 >= config.q_bound && g1 <= 1.0 - config.q_bound) {
        return Err(EffectError::Positivity(g1.min(1.0 - g1)));
    }
    Ok(g1)
}

/// First-stage risk difference `E[Y(1)_1] - E[Y(1)_0]`.
///
/// The initial fit is a logistic regression of `y1` on `a1` and the configured
/// adjustment covariates. The fluctuation uses the arm-specific covariates
/// `A / g1` and `(1 - A) / g0`, which together solve the score of the clever
/// covariate `(2A - 1) / g(A)`.
pub fn ate_tmle(data: &TrialDataset, config: &AnalysisConfig) -> Result<EffectEstimate, EffectError> {
    config.validate()?;
    for arm in [0u8, 1] {
        if !data.a1().contains(&arm) {
            return Err(EffectError::EmptyArm(arm));
        }
    }
    let n = data.n();
    let rows: Vec<usize> = (0..n).collect();
    let g1 = first_stage_g1(data, config)?;
    let g0 = 1.0 - g1;

    let mut names = vec![String::from(A1)];
    names.extend(config.adjust_covariates.iter().cloned());
    let cov = data.history_matrix(&names, &rows)?;
    let x = design_with_intercept(&cov, &names)?;
    let y: Vec<f64> = data.y1().iter().map(|&v| f64::from(v)).collect();
    let fit = fit_logistic(&x, &y, &vec![1.0; n], &vec![0.0; n])?;
    let predict_at = |a: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut row = x.matrix().row(i).to_vec();
                row[1] = a;
                clip(expit(dot(&row, &fit.coefficients)), config.q_bound)
            })
            .collect()
    };
    let q1 = predict_at(1.0);
    let q0 = predict_at(0.0);

    let a: Vec<u8> = data.a1().to_vec();
    let mut h = Vec::with_capacity(2 * n);
    let mut offset = Vec::with_capacity(n);
    for i in 0..n {
        let t = f64::from(a[i]);
        h.extend_from_slice(&[t / g1, (1.0 - t) / g0]);
        offset.push(logit(if a[i] == 1 { q1[i] } else { q0[i] }));
    }
    let design = DesignMatrix::new(Matrix::from_row_major(n, 2, h), vec![String::from("h1"), String::from("h0")])?;
    let eps = fit_logistic(&design, &y, &vec![1.0; n], &offset)?;
    if !eps.converged {
        return Err(EffectError::Nonconvergence("first-stage"));
    }
    let (e1, e0) = (eps.coefficients[0], eps.coefficients[1]);
    let qs1: Vec<f64> = q1.iter().map(|q| expit(logit(*q) + e1 / g1)).collect();
    let qs0: Vec<f64> = q0.iter().map(|q| expit(logit(*q) + e0 / g0)).collect();
    let psi = mean(&qs1) - mean(&qs0);
    let ic = (0..n)
        .map(|i| {
            let resid = if a[i] == 1 { (y[i] - qs1[i]) / g1 } else { -(y[i] - qs0[i]) / g0 };
            resid + qs1[i] - qs0[i] - psi
        })
        .collect();
    Ok(EffectEstimate::from_influence("first_stage_rd", psi, ic))
}

/// `E[Y(2)_{a1=1, a2}]` by iterated conditional expectations among initiators.
pub fn two_stage_mean_tmle(data: &TrialDataset, config: &AnalysisConfig, a2: u8) -> Result<EffectEstimate, EffectError> {
    config.validate()?;
    let n = data.n();
    let init: Vec<usize> = (0..n).filter(|&i| data.a1()[i] == 1).collect();
    if init.is_empty() {
        return Err(EffectError::EmptyArm(1));
    }
    let init_obs: Vec<usize> = init.iter().copied().filter(|&i| data.a2()[i].is_some()).collect();
    let cell: Vec<usize> = init_obs.iter().copied().filter(|&i| data.a2()[i] == Some(a2)).collect();
    if cell.is_empty() {
        return Err(EffectError::EmptyCell(a2));
    }
    let g1 = first_stage_g1(data, config)?;

    let stage = SecondStage {
        a: init_obs.iter().map(|&i| data.a2()[i].unwrap_or(0)).collect(),
        y: init_obs.iter().map(|&i| f64::from(data.y2()[i])).collect(),
        blip: vec![0.0; init_obs.len()],
        rows: init_obs.clone(),
    };
    let g = estimate_g(data, config, &stage)?;
    let mut g2 = vec![f64::NAN; n];
    for (k, &i) in init_obs.iter().enumerate() {
        g2[i] = g.prob(k, a2);
    }

    // Second-stage regression among (a1 = 1, a2), predicted for every initiator.
    let q_names: Vec<String> = config
        .q_covariates
        .clone()
        .unwrap_or_else(|| data.history_names())
        .into_iter()
        .filter(|c| c != A1)
        .collect();
    let cell_features = Features::new(data.history_matrix(&q_names, &cell)?, q_names.clone(), None)?;
    let y_cell: Vec<f64> = cell.iter().map(|&i| f64::from(data.y2()[i])).collect();
    let folds = make_folds(cell.len(), config.folds.min(cell.len().max(2)), config.seed ^ 0x7E57_0002)?;
    let model = OutcomeModel::fit(&cell_features, &y_cell, &vec![1.0; cell.len()], &config.q_library, &folds, config.q_bound)?;
    let init_features = Features::new(data.history_matrix(&q_names, &init)?, q_names, None)?;
    let q2: Vec<f64> = model.predict(&init_features).into_iter().map(|p| clip(p, config.q_bound)).collect();

    let pos: Vec<usize> = cell.iter().map(|i| init.binary_search(i).unwrap_or(0)).collect();
    let offset: Vec<f64> = pos.iter().map(|&k| logit(q2[k])).collect();
    let w: Vec<f64> = cell.iter().map(|&i| 1.0 / (g1 * g2[i])).collect();
    let e2 = fluctuate_intercept(&y_cell, &offset, &w, "second-stage")?;
    let q2s: Vec<f64> = q2.iter().map(|q| clip(expit(logit(*q) + e2), config.q_bound)).collect();

    // First-stage regression of the targeted values on L(0) among initiators.
    let base_names = data.baseline_names().to_vec();
    let x_init = design_with_intercept(&data.history_matrix(&base_names, &init)?, &base_names)?;
    let fit = fit_logistic(&x_init, &q2s, &vec![1.0; init.len()], &vec![0.0; init.len()])?;
    let all: Vec<usize> = (0..n).collect();
    let x_all = design_with_intercept(&data.history_matrix(&base_names, &all)?, &base_names)?;
    let q1: Vec<f64> = (0..n).map(|i| clip(expit(dot(x_all.matrix().row(i), &fit.coefficients)), config.q_bound)).collect();
    let offset: Vec<f64> = init.iter().map(|&i| logit(q1[i])).collect();
    let e1 = fluctuate_intercept(&q2s, &offset, &vec![1.0 / g1; init.len()], "first-stage")?;
    let q1s: Vec<f64> = q1.iter().map(|q| clip(expit(logit(*q) + e1), config.q_bound)).collect();
    let psi = mean(&q1s);

    let mut ic: Vec<f64> = q1s.iter().map(|q| q - psi).collect();
    for (k, &i) in init.iter().enumerate() {
        ic[i] += (q2s[k] - q1s[i]) / g1;
    }
    for (k, &i) in cell.iter().enumerate() {
        ic[i] += (y_cell[k] - q2s[pos[k]]) / (g1 * g2[i]);
    }
    Ok(EffectEstimate::from_influence(alloc::format!("mean_y2_a1=1_a2={a2}"), psi, ic))
}

/// `E[Y(2)_{1,1}] - E[Y(2)_{1,0}]`: continuing versus stopping the first-stage treatment.
pub fn second_stage_rd(data: &TrialDataset, config: &AnalysisConfig) -> Result<EffectEstimate, EffectError> {
    let m1 = two_stage_mean_tmle(data, config, 1)?;
    let m0 = two_stage_mean_tmle(data, config, 0)?;
    Ok(m1.minus(&m0, "second_stage_rd"))
}

/// First-stage RD minus second-stage RD, with the joint influence curve.
pub fn benefit_harm_contrast(data: &TrialDataset, config: &AnalysisConfig) -> Result<EffectEstimate, EffectError> {
    let ate = ate_tmle(data, config)?;
    let rd2 = second_stage_rd(data, config)?;
    Ok(ate.minus(&rd2, "benefit_minus_harm"))
}
