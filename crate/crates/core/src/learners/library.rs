//! Candidate conditional-mean learners.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::basis::{Basis, Terms};
use super::forest::{Forest, ForestParams};
use super::logistic::irls;
use super::{Features, LearnerError};
use crate::linalg::{dot, Matrix};
use crate::math::expit;

/// A learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Weighted mean of the outcome.
    Mean,
    /// Maximum-likelihood logistic regression. `columns` restricts the feature
    /// columns used; the treatment column is always kept.
    Logistic {
        #[serde(default)]
        terms: Terms,
        #[serde(default)]
        columns: Option<Vec<String>>,
    },
    /// Ridge-penalized logistic regression on standardized terms.
    Ridge {
        #[serde(default = "default_ridge_terms")]
        terms: Terms,
        lambda: f64,
    },
    /// Logistic regression on a hinge (piecewise-linear spline) basis with
    /// treatment interactions, lightly ridge-penalized.
    Hinge {
        knots: usize,
        #[serde(default = "default_hinge_lambda")]
        lambda: f64,
    },
    /// Bagged regression trees.
    Forest {
        #[serde(default = "default_trees")]
        trees: usize,
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        #[serde(default)]
        mtry: Option<usize>,
    },
}

fn default_ridge_terms() -> Terms {
    Terms::TreatmentInteractions
}
fn default_hinge_lambda() -> f64 {
    0.1
}
fn default_trees() -> usize {
    ForestParams::default().trees
}
fn default_depth() -> usize {
    ForestParams::default().max_depth
}
fn default_min_leaf() -> usize {
    ForestParams::default().min_leaf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLearner {
    pub name: String,
    #[serde(flatten)]
    pub spec: LearnerSpec,
}

impl NamedLearner {
    pub fn new(name: &str, spec: LearnerSpec) -> Self {
        Self { name: name.into(), spec }
    }

    pub fn mean() -> Self {
        Self::new("mean", LearnerSpec::Mean)
    }

    pub fn logistic(name: &str, terms: Terms, columns: Option<&[&str]>) -> Self {
        Self::new(
            name,
            LearnerSpec::Logistic { terms, columns: columns.map(|c| c.iter().map(|s| String::from(*s)).collect()) },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CandidateModel {
    Mean(f64),
    Glm {
        basis: Basis,
        center: Vec<f64>,
        scale: Vec<f64>,
        coefficients: Vec<f64>,
    },
    Forest(Forest),
}

/// A trained candidate. `converged` is false when the underlying IRLS did not
/// meet its tolerance; such fits still predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub name: String,
    pub model: CandidateModel,
    pub converged: bool,
}

impl CandidateFit {
    pub fn predict(&self, features: &Features) -> Vec<f64> {
        let n = features.matrix.rows();
        match &self.model {
            CandidateModel::Mean(m) => vec![*m; n],
            CandidateModel::Glm { basis, center, scale, coefficients } => {
                let mut row = vec![0.0; basis.len()];
                (0..n)
                    .map(|i| {
                        basis.row_into(features.matrix.row(i), &mut row);
                        for j in 0..row.len() {
                            row[j] = (row[j] - center[j]) / scale[j];
                        }
                        expit(dot(&row, coefficients))
                    })
                    .collect()
            }
            CandidateModel::Forest(f) => f.predict(&features.matrix),
        }
    }
}

fn resolve_columns(features: &Features, columns: &Option<Vec<String>>) -> Result<Vec<usize>, LearnerError> {
    let Some(names) = columns else {
        return Ok((0..features.matrix.cols()).collect());
    };
    let mut out: Vec<usize> = features.treatment.into_iter().collect();
    for name in names {
        let j = features
            .names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| LearnerError::UnknownColumn(name.clone()))?;
        if !out.contains(&j) {
            out.push(j);
        }
    }
    Ok(out)
}

/// Weighted standardization of every non-constant design column; the
/// intercept (and any constant column) is left as is.
fn standardize(design: &mut Matrix, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (design.rows(), design.cols());
    let sw: f64 = w.iter().sum();
    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let m = (0..n).map(|i| w[i] * design[(i, j)]).sum::<f64>() / sw;
        let v = (0..n).map(|i| w[i] * (design[(i, j)] - m).powi(2)).sum::<f64>() / sw;
        if v > 1e-12 {
            center[j] = m;
            scale[j] = v.sqrt();
            for i in 0..n {
                design[(i, j)] = (design[(i, j)] - m) / scale[j];
            }
        }
    }
    (center, scale)
}

fn fit_glm(
    basis: Basis,
    features: &Features,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<(CandidateModel, bool), LearnerError> {
    let mut design = basis.design(features);
    let d = basis.len();
    let (center, scale) = if lambda > 0.0 {
        standardize(&mut design, w)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    // Every basis starts with the intercept, which is never penalized.
    let penalty: Vec<f64> = (0..d).map(|j| if j == 0 { 0.0 } else { lambda }).collect();
    if lambda > 0.0 {
        let fit = irls(&design, y, w, &vec![0.0; y.len()], &penalty)?;
        return Ok((CandidateModel::Glm { basis, center, scale, coefficients: fit.coefficients }, fit.converged));
    }
    // Unpenalized fits drop aliased terms (coefficient fixed at zero), e.g.
    // saturated cells that are empty in a cross-validation fold.
    let keep = independent_columns(&design, w);
    let sub = Matrix::from_row_major(
        design.rows(),
        keep.len(),
        (0..design.rows()).flat_map(|i| keep.iter().map(move |&j| (i, j))).map(|ij| design[ij]).collect(),
    );
    let fit = irls(&sub, y, w, &vec![0.0; y.len()], &vec![0.0; keep.len()])?;
    let mut coefficients = vec![0.0; d];
    for (k, &j) in keep.iter().enumerate() {
        coefficients[j] = fit.coefficients[k];
    }
    Ok((CandidateModel::Glm { basis, center, scale, coefficients }, fit.converged))
}

/// Design columns not numerically spanned by earlier columns under the
/// weighted inner product (modified Gram-Schmidt, relative tolerance 1e-7).
fn independent_columns(design: &Matrix, w: &[f64]) -> Vec<usize> {
    let n = design.rows();
    let inner = |a: &[f64], b: &[f64]| (0..n).map(|i| w[i] * a[i] * b[i]).sum::<f64>();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..design.cols() {
        let mut v = design.column(j);
        let norm0 = inner(&v, &v).sqrt();
        if !(norm0 > 0.0) {
            continue;
        }
        for _ in 0..2 {
            for q in &ortho {
                let c = inner(&v, q);
                for i in 0..n {
                    v[i] -= c * q[i];
                }
            }
        }
        let norm = inner(&v, &v).sqrt();
        if norm > 1e-7 * norm0 {
            v.iter_mut().for_each(|x| *x /= norm);
            ortho.push(v);
            keep.push(j);
        }
    }
    keep
}

impl NamedLearner {
    /// Train on the full input. `seed` drives any randomized learner.
    pub fn fit(&self, features: &Features, y: &[f64], w: &[f64], seed: u64) -> Result<CandidateFit, LearnerError> {
        let n = features.matrix.rows();
        if y.len() != n || w.len() != n {
            return Err(LearnerError::DimensionMismatch { expected: n, found: y.len().min(w.len()) });
        }
        let (model, converged) = match &self.spec {
            LearnerSpec::Mean => {
                let sw: f64 = w.iter().sum();
                if !(sw > 0.0) {
                    return Err(LearnerError::InvalidInput("weights are all zero".into()));
                }
                (CandidateModel::Mean(y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw), true)
            }
            LearnerSpec::Logistic { terms, columns } => {
                let cols = resolve_columns(features, columns)?;
                fit_glm(Basis::parametric(*terms, features, &cols)?, features, y, w, 0.0)?
            }
            LearnerSpec::Ridge { terms, lambda } => {
                let cols = resolve_columns(features, &None)?;
                fit_glm(Basis::parametric(*terms, features, &cols)?, features, y, w, *lambda)?
            }
            LearnerSpec::Hinge { knots, lambda } => fit_glm(Basis::hinge(features, *knots), features, y, w, *lambda)?,
            LearnerSpec::Forest { trees, max_depth, min_leaf, mtry } => {
                let params = ForestParams { trees: *trees, max_depth: *max_depth, min_leaf: *min_leaf, mtry: *mtry };
                (CandidateModel::Forest(Forest::fit(&features.matrix, y, w, params, seed)), true)
            }
        };
        Ok(CandidateFit { name: self.name.clone(), model, converged })
    }
}

pub(crate) fn check_library(library: &[NamedLearner]) -> Result<(), LearnerError> {
    if library.is_empty() {
        return Err(LearnerError::EmptyLibrary);
    }
    for (k, l) in library.iter().enumerate() {
        if library[..k].iter().any(|o| o.name == l.name) {
            return Err(LearnerError::DuplicateLearner(l.name.clone()));
        }
    }
    Ok(())
}

/// Train every candidate on the full input.
///
/// Candidates whose IRLS does not converge are returned with
/// `converged = false` rather than dropped.
pub fn fit_learner_library(
    features: &Features,
    y: &[f64],
    w: &[f64],
    library: &[NamedLearner],
    seed: u64,
) -> Result<Vec<CandidateFit>, LearnerError> {
    check_library(library)?;
    library
        .iter()
        .enumerate()
        .map(|(k, l)| l.fit(features, y, w, seed.wrapping_add(k as u64)))
        .collect()
}

/// Candidate library modelled on a typical stacking setup for binary
/// outcomes with a treatment column: the outcome mean, one logistic model per
/// covariate with its treatment interaction, a main-terms-plus-interactions
/// logistic model, ridge, hinge-spline and bagged-tree learners.
pub fn default_library(covariates: &[String]) -> Vec<NamedLearner> {
    let mut lib = vec![NamedLearner::mean()];
    for c in covariates {
        lib.push(NamedLearner::logistic(
            &alloc::format!("logistic_{c}"),
            Terms::TreatmentInteractions,
            Some(&[c.as_str()]),
        ));
    }
    lib.push(NamedLearner::logistic("logistic_interactions", Terms::TreatmentInteractions, None));
    lib.push(NamedLearner::new("ridge", LearnerSpec::Ridge { terms: Terms::TreatmentInteractions, lambda: 1.0 }));
    lib.push(NamedLearner::new("hinge", LearnerSpec::Hinge { knots: 3, lambda: default_hinge_lambda() }));
    lib.push(NamedLearner::new(
        "forest",
        LearnerSpec::Forest {
            trees: default_trees(),
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
            mtry: None,
        },
    ));
    lib
}
