//! Targeted estimation of the logistic working marginal structural model
//!
//! ```text
//! logit m_beta(a, b) = beta0 + beta1 a + beta2 b + beta3 a b
//! ```
//!
//! for the second-stage treatment `a` and estimated first-stage blip `b`, with
//! influence-curve based standard errors.
//!
//! The estimator runs in five steps over the second-stage rows:
//!
//! 1. treatment mechanism `g(a | H)` (known design table or logistic fit);
//! 2. initial outcome regression `Q(a, H)`, evaluated at both arms;
//! 3. a pooled logistic fluctuation of `Q` with offset `logit Q(A, H)`,
//!    covariates `(1, A, B, A B)` and weights `h(A, B) / g(A | H)`;
//! 4. projection of the stacked targeted predictions `Q*(1, H), Q*(0, H)` onto
//!    the working model with weights `h(a, B)`;
//! 5. the efficient influence curve `D* = C^-1 D` and `Sigma = E_n[D* D*^T]`.
//!
//! Step 3 makes the weighted residual term of `D` average to zero and step 4
//! the model-residual term, so the fitted `beta` solves `E_n[D*] = 0`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::{fit_blip, BlipEstimate, CateError};
use crate::config::{AnalysisConfig, ConfigError, HWeightMode};
use crate::data::{make_folds, DataError, TrialDataset};
use crate::learners::logistic::{fit_logistic, DesignMatrix};
use crate::learners::{Features, LearnerError, OutcomeModel};
use crate::linalg::{add_outer, dot, symmetrize_lower, Cholesky, Matrix};
use crate::math::{clip, expit, logit, normal_quantile, two_sided_p};

pub const COEFFICIENT_NAMES: [&str; 4] = ["intercept", "a", "blip", "a:blip"];

/// Smallest blip variance treated as non-degenerate.
const MIN_BLIP_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MsmError {
    #[error("no subject has an observed second-stage treatment")]
    NoSecondStageRows,
    #[error("need at least {needed} subjects, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("known_g2 has no entry for stratum a1={a1}, y1={y1}")]
    MissingDesignStratum { a1: u8, y1: u8 },
    #[error("positivity violation at row {row} ({stratum}): treatment probability {probability:.3e}")]
    PositivityViolation { row: usize, stratum: String, probability: f64 },
    #[error("the estimated blip is (numerically) constant; the interaction coefficient is undefined")]
    DegenerateBlip,
    #[error("{what} did not converge after {iterations} iterations (max |score| {max_abs_score:.3e})")]
    Nonconvergence { what: &'static str, iterations: usize, max_abs_score: f64 },
    #[error("normalizing matrix of the influence curve is singular")]
    SingularNormalizer,
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cate(#[from] CateError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl MsmError {
    /// Variant name, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            MsmError::NoSecondStageRows => "NoSecondStageRows",
            MsmError::InsufficientData { .. } => "InsufficientData",
            MsmError::MissingDesignStratum { .. } => "MissingDesignStratum",
            MsmError::PositivityViolation { .. } => "PositivityViolation",
            MsmError::DegenerateBlip => "DegenerateBlip",
            MsmError::Nonconvergence { .. } => "Nonconvergence",
            MsmError::SingularNormalizer => "SingularNormalizer",
            MsmError::Learner(_) => "Learner",
            MsmError::Data(_) => "Data",
            MsmError::Cate(_) => "Cate",
            MsmError::Config(_) => "Config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Blip,
    TreatmentMechanism,
    OutcomeRegression,
    Fluctuation,
    Projection,
    InfluenceCurve,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Blip => "blip",
            Stage::TreatmentMechanism => "treatment mechanism",
            Stage::OutcomeRegression => "outcome regression",
            Stage::Fluctuation => "fluctuation",
            Stage::Projection => "projection",
            Stage::InfluenceCurve => "influence curve",
        })
    }
}

/// A pipeline failure labelled with the step that produced it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage}: {source}")]
pub struct TmleError {
    pub stage: Stage,
    pub source: MsmError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, TmleError>;
}

impl<T, E: Into<MsmError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, TmleError> {
        self.map_err(|e| TmleError { stage, source: e.into() })
    }
}

/// Second-stage analysis rows with their treatment, outcome and blip.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondStage {
    /// Row indices into the full dataset.
    pub rows: Vec<usize>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub blip: Vec<f64>,
}

impl SecondStage {
    /// Select the configured second-stage rows; `blip` is indexed by full-data row.
    pub fn new(data: &TrialDataset, config: &AnalysisConfig, blip: &[f64]) -> Result<Self, MsmError> {
        let rows = config.second_stage_rows(data);
        if rows.is_empty() {
            return Err(MsmError::NoSecondStageRows);
        }
        Ok(Self {
            a: rows.iter().map(|&i| data.a2()[i].unwrap_or(0)).collect(),
            y: rows.iter().map(|&i| f64::from(data.y2()[i])).collect(),
            blip: rows.iter().map(|&i| blip[i]).collect(),
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GSource {
    KnownDesign,
    Estimated,
}

/// Second-stage treatment probabilities per analysis row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFit {
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
    pub source: GSource,
}

impl GFit {
    #[inline]
    pub fn prob(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.p1[i]
        } else {
            self.p0[i]
        }
    }

    pub fn min(&self) -> f64 {
        self.p1.iter().chain(&self.p0).fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

/// Outcome regression evaluated at both second-stage arms, before and after
/// targeting. Before [`fluctuate`] the targeted values equal the initial ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFit {
    pub initial1: Vec<f64>,
    pub initial0: Vec<f64>,
    pub targeted1: Vec<f64>,
    pub targeted0: Vec<f64>,
    pub epsilon: Option<[f64; 4]>,
    pub initial_converged: bool,
}

impl QFit {
    pub fn from_initial(q1: Vec<f64>, q0: Vec<f64>, converged: bool) -> Self {
        Self { targeted1: q1.clone(), targeted0: q0.clone(), initial1: q1, initial0: q0, epsilon: None, initial_converged: converged }
    }

    #[inline]
    fn initial(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.initial1[i]
        } else {
            self.initial0[i]
        }
    }

    #[inline]
    pub fn targeted(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.targeted1[i]
        } else {
            self.targeted0[i]
        }
    }
}

/// Stabilizing weights `h(a, b)` per analysis row.
#[derive(Debug, Clone, PartialEq)]
pub struct HWeights {
    pub h1: Vec<f64>,
    pub h0: Vec<f64>,
    pub mode: HWeightMode,
}

impl HWeights {
    pub fn unit(n: usize) -> Self {
        Self { h1: vec![1.0; n], h0: vec![1.0; n], mode: HWeightMode::Unit }
    }

    /// `Unit` gives ones; `TreatmentPrevalence` fits `P(A = 1 | B)` by
    /// logistic regression on the blip and uses `h(a, B) = P(A = a | B)`.
    pub fn new(mode: HWeightMode, stage: &SecondStage) -> Result<Self, MsmError> {
        match mode {
            HWeightMode::Unit => Ok(Self::unit(stage.n())),
            HWeightMode::TreatmentPrevalence => {
                let rows: Vec<Vec<f64>> = stage.blip.iter().map(|&b| vec![1.0, b]).collect();
                let x = DesignMatrix::from_rows(&rows)?;
                let a: Vec<f64> = stage.a.iter().map(|&v| f64::from(v)).collect();
                let n = stage.n();
                let fit = fit_logistic(&x, &a, &vec![1.0; n], &vec![0.0; n])?;
                if !fit.converged {
                    return Err(MsmError::Nonconvergence {
                        what: "stabilizing weight model",
                        iterations: fit.iterations,
                        max_abs_score: fit.max_abs_score,
                    });
                }
                let h1: Vec<f64> = stage.blip.iter().map(|&b| expit(fit.coefficients[0] + fit.coefficients[1] * b)).collect();
                let h0 = h1.iter().map(|p| 1.0 - p).collect();
                Ok(Self { h1, h0, mode })
            }
        }
    }

    #[inline]
    pub fn at(&self, i: usize, a: u8) -> f64 {
        if a == 1 {
            self.h1[i]
        } else {
            self.h0[i]
        }
    }
}

/// Working-model covariates `(1, a, b, a b)`.
#[inline]
pub fn msm_covariates(a: u8, b: f64) -> [f64; 4] {
    let af = f64::from(a);
    [1.0, af, b, af * b]
}

#[inline]
pub fn msm_mean(beta: &[f64; 4], a: u8, b: f64) -> f64 {
    expit(dot(beta, &msm_covariates(a, b)))
}

fn format_stratum(data: &TrialDataset, columns: &[String], row: usize) -> String {
    if columns.is_empty() {
        return String::from("marginal");
    }
    columns
        .iter()
        .map(|c| format!("{c}={}", data.history_value(c, row).unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_positivity(g: &GFit, stage: &SecondStage, data: &TrialDataset, columns: &[String], bound: f64) -> Result<(), MsmError> {
    for i in 0..stage.n() {
        let p = g.p1[i].min(g.p0[i]);
        if !(p >= bound) {
            return Err(MsmError::PositivityViolation {
                row: stage.rows[i],
                stratum: format_stratum(data, columns, stage.rows[i]),
                probability: p,
            });
        }
    }
    Ok(())
}

/// Second-stage treatment mechanism: the known design table when configured,
/// otherwise a logistic regression of `a2` on `config.g_covariates`.
pub fn estimate_g(data: &TrialDataset, config: &AnalysisConfig, stage: &SecondStage) -> Result<GFit, MsmError> {
    if let Some(table) = &config.known_g2 {
        let mut p1 = Vec::with_capacity(stage.n());
        for &i in &stage.rows {
            let (a1, y1) = (data.a1()[i], data.y1()[i]);
            let cell = table
                .iter()
                .find(|c| c.a1 == a1 && c.y1 == y1)
                .ok_or(MsmError::MissingDesignStratum { a1, y1 })?;
            p1.push(cell.p);
        }
        let p0 = p1.iter().map(|p| 1.0 - p).collect();
        let g = GFit { p1, p0, source: GSource::KnownDesign };
        let cols = [String::from(crate::data::A1), String::from(crate::data::Y1)];
        check_positivity(&g, stage, data, &cols, config.q_bound)?;
        return Ok(g);
    }

    let cov = data.history_matrix(&config.g_covariates, &stage.rows)?;
    let n = stage.n();
    let mut rows = Vec::with_capacity(n * (cov.cols() + 1));
    for i in 0..n {
        rows.push(1.0);
        rows.extend_from_slice(cov.row(i));
    }
    let mut labels = vec![String::from("(intercept)")];
    labels.extend(config.g_covariates.iter().cloned());
    let x = DesignMatrix::new(Matrix::from_row_major(n, cov.cols() + 1, rows), labels)?;
    let a: Vec<f64> = stage.a.iter().map(|&v| f64::from(v)).collect();
    let fit = fit_logistic(&x, &a, &vec![1.0; n], &vec![0.0; n])?;
    let p1: Vec<f64> = (0..n).map(|i| expit(dot(x.matrix().row(i), &fit.coefficients))).collect();
    let p0 = p1.iter().map(|p| 1.0 - p).collect();
    let g = GFit { p1, p0, source: GSource::Estimated };
    check_positivity(&g, stage, data, &config.g_covariates, config.q_bound)?;
    Ok(g)
}

/// Second-stage features: `a2` followed by the configured history columns.
pub fn second_stage_features(data: &TrialDataset, config: &AnalysisConfig, stage: &SecondStage) -> Result<Features, MsmError> {
    let names = config.q_covariates_for(data);
    let hist = data.history_matrix(&names, &stage.rows)?;
    let a: Vec<f64> = stage.a.iter().map(|&v| f64::from(v)).collect();
    Ok(Features::with_leading_treatment("a2", &a, &hist, &names)?)
}

/// Initial outcome regression of `y2` on `(a2, H)`, evaluated at both arms and
/// clipped to `[q_bound, 1 - q_bound]`.
pub fn estimate_q2(data: &TrialDataset, config: &AnalysisConfig, stage: &SecondStage) -> Result<QFit, MsmError> {
    let features = second_stage_features(data, config, stage)?;
    let n = stage.n();
    let folds = make_folds(n, config.folds.min(n.max(2)), config.seed ^ 0x5EC0_57A6)?;
    let model = OutcomeModel::fit(&features, &stage.y, &vec![1.0; n], &config.q_library, &folds, config.q_bound)?;
    let q1 = model.predict(&features.set_treatment(1.0)).into_iter().map(|p| clip(p, config.q_bound)).collect();
    let q0 = model.predict(&features.set_treatment(0.0)).into_iter().map(|p| clip(p, config.q_bound)).collect();
    Ok(QFit::from_initial(q1, q0, model.converged()))
}

fn check_blip(blip: &[f64]) -> Result<(), MsmError> {
    if crate::math::population_variance(blip) < MIN_BLIP_VARIANCE {
        Err(MsmError::DegenerateBlip)
    } else {
        Ok(())
    }
}

/// Pooled logistic fluctuation of the initial outcome regression.
///
/// Regresses `y2` on `(1, A, B, A B)` with offset `logit Q(A, H)` and weights
/// `h(A, B) / g(A | H)`, then updates both arms:
/// `Q*(1) = expit(logit Q(1) + e0 + e1 + (e2 + e3) B)` and
/// `Q*(0) = expit(logit Q(0) + e0 + e2 B)`.
pub fn fluctuate(q: &QFit, g: &GFit, stage: &SecondStage, h: &HWeights) -> Result<QFit, MsmError> {
    check_blip(&stage.blip)?;
    let n = stage.n();
    let mut x = Vec::with_capacity(4 * n);
    let mut offset = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let a = stage.a[i];
        x.extend_from_slice(&msm_covariates(a, stage.blip[i]));
        offset.push(logit(q.initial(i, a)));
        w.push(h.at(i, a) / g.prob(i, a));
    }
    let design = DesignMatrix::new(Matrix::from_row_major(n, 4, x), COEFFICIENT_NAMES.iter().map(|s| String::from(*s)).collect())?;
    let fit = fit_logistic(&design, &stage.y, &w, &offset).map_err(|e| match e {
        LearnerError::SingularDesign => MsmError::DegenerateBlip,
        other => other.into(),
    })?;
    if !fit.converged {
        return Err(MsmError::Nonconvergence { what: "fluctuation", iterations: fit.iterations, max_abs_score: fit.max_abs_score });
    }
    let e = [fit.coefficients[0], fit.coefficients[1], fit.coefficients[2], fit.coefficients[3]];
    let mut out = q.clone();
    for i in 0..n {
        let b = stage.blip[i];
        out.targeted1[i] = expit(logit(q.initial1[i]) + e[0] + e[1] + (e[2] + e[3]) * b);
        out.targeted0[i] = expit(logit(q.initial0[i]) + e[0] + e[2] * b);
    }
    out.epsilon = Some(e);
    Ok(out)
}

/// Working-model coefficients with the projection's convergence record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub beta: [f64; 4],
    pub iterations: usize,
}

/// Project targeted counterfactual means `(Q*(1, H), Q*(0, H))` onto the
/// working model by a pooled fractional-response logistic regression over the
/// `2n` stacked rows with weights `h(a, B)`.
pub fn project_msm(q1: &[f64], q0: &[f64], blip: &[f64], h: &HWeights) -> Result<Projection, MsmError> {
    check_blip(blip)?;
    let n = blip.len();
    let mut x = Vec::with_capacity(8 * n);
    let mut y = Vec::with_capacity(2 * n);
    let mut w = Vec::with_capacity(2 * n);
    for (a, q) in [(1u8, q1), (0u8, q0)] {
        for i in 0..n {
            x.extend_from_slice(&msm_covariates(a, blip[i]));
            y.push(q[i]);
            w.push(h.at(i, a));
        }
    }
    let design = DesignMatrix::new(Matrix::from_row_major(2 * n, 4, x), COEFFICIENT_NAMES.iter().map(|s| String::from(*s)).collect())?;
    let fit = fit_logistic(&design, &y, &w, &vec![0.0; 2 * n]).map_err(|e| match e {
        LearnerError::SingularDesign => MsmError::DegenerateBlip,
        other => other.into(),
    })?;
    if !fit.converged {
        return Err(MsmError::Nonconvergence { what: "projection", iterations: fit.iterations, max_abs_score: fit.max_abs_score });
    }
    let c = &fit.coefficients;
    Ok(Projection { beta: [c[0], c[1], c[2], c[3]], iterations: fit.iterations })
}

/// Per-row estimating function `D(beta)` (before normalization).
pub fn estimating_function(q: &QFit, g: &GFit, stage: &SecondStage, h: &HWeights, beta: &[f64; 4]) -> Matrix {
    let n = stage.n();
    let mut d = Matrix::zeros(n, 4);
    for i in 0..n {
        let (a, b) = (stage.a[i], stage.blip[i]);
        let r = h.at(i, a) * (stage.y[i] - q.targeted(i, a)) / g.prob(i, a);
        let xa = msm_covariates(a, b);
        let row = d.row_mut(i);
        for j in 0..4 {
            row[j] = r * xa[j];
        }
        for arm in [0u8, 1] {
            let x = msm_covariates(arm, b);
            let resid = h.at(i, arm) * (q.targeted(i, arm) - msm_mean(beta, arm, b));
            for j in 0..4 {
                row[j] += resid * x[j];
            }
        }
    }
    d
}

/// `E_n[D(beta)]`.
pub fn mean_estimating_function(q: &QFit, g: &GFit, stage: &SecondStage, h: &HWeights, beta: &[f64; 4]) -> [f64; 4] {
    let d = estimating_function(q, g, stage, h, beta);
    let mut out = [0.0; 4];
    for i in 0..d.rows() {
        for j in 0..4 {
            out[j] += d[(i, j)];
        }
    }
    out.map(|v| v / stage.n() as f64)
}

/// `C = -d/dbeta E_n[D(beta)] = E_n[sum_a h(a, B) m (1 - m) x_a x_a^T]`.
pub fn normalizing_matrix(stage: &SecondStage, h: &HWeights, beta: &[f64; 4]) -> Matrix {
    let mut c = Matrix::zeros(4, 4);
    for i in 0..stage.n() {
        for arm in [0u8, 1] {
            let m = msm_mean(beta, arm, stage.blip[i]);
            add_outer(&mut c, &msm_covariates(arm, stage.blip[i]), h.at(i, arm) * m * (1.0 - m));
        }
    }
    symmetrize_lower(&mut c);
    let n = stage.n() as f64;
    Matrix::from_row_major(4, 4, c.as_slice().iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceCurve {
    /// Efficient influence curve `D*` per row (`n x 4`).
    pub d_star: Matrix,
    pub normalizer: Matrix,
    /// `E_n[D* D*^T]`.
    pub sigma: Matrix,
}

pub fn influence_curve(q: &QFit, g: &GFit, stage: &SecondStage, h: &HWeights, beta: &[f64; 4]) -> Result<InfluenceCurve, MsmError> {
    let d = estimating_function(q, g, stage, h, beta);
    let normalizer = normalizing_matrix(stage, h, beta);
    let c_inv = Cholesky::new(&normalizer, 1e-14).map_err(|_| MsmError::SingularNormalizer)?.inverse();
    let n = stage.n();
    let mut d_star = Matrix::zeros(n, 4);
    let mut sigma = Matrix::zeros(4, 4);
    for i in 0..n {
        let row = c_inv.mat_vec(d.row(i));
        add_outer(&mut sigma, &row, 1.0 / n as f64);
        d_star.row_mut(i).copy_from_slice(&row);
    }
    symmetrize_lower(&mut sigma);
    Ok(InfluenceCurve { d_star, normalizer, sigma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmDiagnostics {
    pub epsilon: [f64; 4],
    pub g_min: f64,
    pub g_source: GSource,
    pub initial_q_converged: bool,
    pub projection_iterations: usize,
    /// `max_j |E_n[D*_j]|`.
    pub max_abs_mean_ic: f64,
    pub targeted_min: f64,
    pub targeted_max: f64,
}

/// Fitted working-model coefficients with influence-curve inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MsmFit {
    pub beta: [f64; 4],
    pub coefficients: Vec<Coefficient>,
    pub d_star: Matrix,
    pub sigma: Matrix,
    pub n: usize,
    pub h_weight_mode: HWeightMode,
    pub diagnostics: MsmDiagnostics,
}

impl MsmFit {
    pub fn beta3(&self) -> &Coefficient {
        &self.coefficients[3]
    }

    /// `m_beta(a, b)` for `a` in {0, 1} on `points` blip values evenly spanning
    /// `[lo, hi]`, as `(b, m(1, b), m(0, b))`.
    pub fn curve(&self, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64, f64)> {
        let steps = points.max(2) - 1;
        (0..=steps)
            .map(|k| {
                let b = lo + (hi - lo) * k as f64 / steps as f64;
                (b, msm_mean(&self.beta, 1, b), msm_mean(&self.beta, 0, b))
            })
            .collect()
    }
}

/// Wald summaries `beta_j +/- z sqrt(Sigma_jj / n)`.
pub fn wald_coefficients(beta: &[f64], sigma: &Matrix, n: usize, names: &[&str]) -> Vec<Coefficient> {
    let z = normal_quantile(0.975);
    beta.iter()
        .enumerate()
        .map(|(j, &b)| {
            let se = (sigma[(j, j)].max(0.0) / n as f64).sqrt();
            Coefficient {
                name: String::from(names[j]),
                estimate: b,
                se,
                ci_lower: b - z * se,
                ci_upper: b + z * se,
                p_value: if se > 0.0 { two_sided_p(b / se) } else { f64::NAN },
            }
        })
        .collect()
}

/// Full pipeline with a blip estimated on `data`.
pub fn tmle_msm(data: &TrialDataset, config: &AnalysisConfig) -> Result<MsmFit, TmleError> {
    config.validate().at(Stage::Config)?;
    if data.n() < 2 {
        return Err(TmleError { stage: Stage::Config, source: MsmError::InsufficientData { needed: 2, found: data.n() } });
    }
    let blip = fit_blip(data, config).at(Stage::Blip)?;
    tmle_msm_with_blip(data, config, &blip)
}

/// Pipeline for a precomputed blip (indexed by full-data row).
pub fn tmle_msm_with_blip(data: &TrialDataset, config: &AnalysisConfig, blip: &BlipEstimate) -> Result<MsmFit, TmleError> {
    config.validate().at(Stage::Config)?;
    let stage = SecondStage::new(data, config, &blip.values).at(Stage::Config)?;
    if stage.n() < 2 {
        return Err(TmleError { stage: Stage::Config, source: MsmError::InsufficientData { needed: 2, found: stage.n() } });
    }
    check_blip(&stage.blip).at(Stage::Blip)?;
    let g = estimate_g(data, config, &stage).at(Stage::TreatmentMechanism)?;
    let q = estimate_q2(data, config, &stage).at(Stage::OutcomeRegression)?;
    let h = HWeights::new(config.h_weight_mode, &stage).at(Stage::Projection)?;
    let q = fluctuate(&q, &g, &stage, &h).at(Stage::Fluctuation)?;
    let proj = project_msm(&q.targeted1, &q.targeted0, &stage.blip, &h).at(Stage::Projection)?;
    let ic = influence_curve(&q, &g, &stage, &h, &proj.beta).at(Stage::InfluenceCurve)?;

    let n = stage.n();
    let mut mean_ic = [0.0; 4];
    for i in 0..n {
        for j in 0..4 {
            mean_ic[j] += ic.d_star[(i, j)] / n as f64;
        }
    }
    let all_targeted = q.targeted1.iter().chain(&q.targeted0);
    let diagnostics = MsmDiagnostics {
        epsilon: q.epsilon.unwrap_or([0.0; 4]),
        g_min: g.min(),
        g_source: g.source,
        initial_q_converged: q.initial_converged,
        projection_iterations: proj.iterations,
        max_abs_mean_ic: mean_ic.iter().fold(0.0, |m, v| m.max(v.abs())),
        targeted_min: all_targeted.clone().fold(f64::INFINITY, |m, v| m.min(*v)),
        targeted_max: all_targeted.fold(f64::NEG_INFINITY, |m, v| m.max(*v)),
    };
    Ok(MsmFit {
        beta: proj.beta,
        coefficients: wald_coefficients(&proj.beta, &ic.sigma, n, &COEFFICIENT_NAMES),
        d_star: ic.d_star,
        sigma: ic.sigma,
        n,
        h_weight_mode: config.h_weight_mode,
        diagnostics,
    })
}

/// Linear working model for the conditional effect `E[Y_1 - Y_0 | B] = b0 + b1 B`,
/// fitted by least squares on the doubly robust pseudo-outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMsmFit {
    pub coefficients: Vec<Coefficient>,
    pub pseudo_outcome: Vec<f64>,
    pub influence: Matrix,
}

/// `(2A - 1) / g(A | H) (Y - Q(A, H)) + Q(1, H) - Q(0, H)` from the initial fit.
pub fn transformed_outcome(q: &QFit, g: &GFit, stage: &SecondStage) -> Vec<f64> {
    (0..stage.n())
        .map(|i| {
            let a = stage.a[i];
            let sign = if a == 1 { 1.0 } else { -1.0 };
            sign / g.prob(i, a) * (stage.y[i] - q.initial(i, a)) + q.initial1[i] - q.initial0[i]
        })
        .collect()
}

/// Ordinary least squares of `pseudo` on `(1, blip)` with the sandwich
/// influence curve `M^-1 x (pseudo - x^T beta)`, `M = E_n[x x^T]`.
pub fn linear_msm_fit(pseudo: &[f64], blip: &[f64]) -> Result<LinearMsmFit, MsmError> {
    check_blip(blip)?;
    let n = blip.len();
    let mut m = Matrix::zeros(2, 2);
    let mut xty = [0.0; 2];
    for i in 0..n {
        let x = [1.0, blip[i]];
        add_outer(&mut m, &x, 1.0 / n as f64);
        xty[0] += pseudo[i] / n as f64;
        xty[1] += blip[i] * pseudo[i] / n as f64;
    }
    symmetrize_lower(&mut m);
    let ch = Cholesky::new(&m, 1e-14).map_err(|_| MsmError::DegenerateBlip)?;
    let beta = ch.solve(&xty);
    let m_inv = ch.inverse();
    let mut influence = Matrix::zeros(n, 2);
    let mut sigma = Matrix::zeros(2, 2);
    for i in 0..n {
        let x = [1.0, blip[i]];
        let r = pseudo[i] - dot(&x, &beta);
        let row = m_inv.mat_vec(&[r, r * blip[i]]);
        add_outer(&mut sigma, &row, 1.0 / n as f64);
        influence.row_mut(i).copy_from_slice(&row);
    }
    symmetrize_lower(&mut sigma);
    Ok(LinearMsmFit {
        coefficients: wald_coefficients(&beta, &sigma, n, &["intercept", "blip"]),
        pseudo_outcome: pseudo.to_vec(),
        influence,
    })
}

pub fn linear_msm_transformed_outcome(data: &TrialDataset, config: &AnalysisConfig) -> Result<LinearMsmFit, TmleError> {
    config.validate().at(Stage::Config)?;
    let blip = fit_blip(data, config).at(Stage::Blip)?;
    let stage = SecondStage::new(data, config, &blip.values).at(Stage::Config)?;
    let g = estimate_g(data, config, &stage).at(Stage::TreatmentMechanism)?;
    let q = estimate_q2(data, config, &stage).at(Stage::OutcomeRegression)?;
    let pseudo = transformed_outcome(&q, &g, &stage);
    linear_msm_fit(&pseudo, &stage.blip).at(Stage::Projection)
}
