//! Conditional-mean learners for binary or fractional outcomes.

pub mod basis;
pub mod ensemble;
pub mod forest;
pub mod library;
pub mod logistic;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use basis::Terms;
pub use ensemble::{fit_super_learner, EnsembleFit};
pub use library::{default_library, fit_learner_library, CandidateFit, LearnerSpec, NamedLearner};
pub use logistic::{fit_logistic, predict_proba, DesignMatrix, LogisticFit};

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("learner library is empty")]
    EmptyLibrary,
    #[error("learner name `{0}` appears more than once")]
    DuplicateLearner(String),
    #[error("weighted information matrix is singular")]
    SingularDesign,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("a cross-validation fold contains a single outcome class")]
    DegenerateFolds,
    #[error("unknown feature column `{0}`")]
    UnknownColumn(String),
    #[error("{0}")]
    InvalidInput(String),
}

/// Raw learner inputs: feature columns, their names, and which column (if any)
/// is the treatment. Counterfactual predictions are made by overwriting the
/// treatment column.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub matrix: Matrix,
    pub names: Vec<String>,
    pub treatment: Option<usize>,
}

impl Features {
    pub fn new(matrix: Matrix, names: Vec<String>, treatment: Option<usize>) -> Result<Self, LearnerError> {
        if names.len() != matrix.cols() {
            return Err(LearnerError::DimensionMismatch { expected: matrix.cols(), found: names.len() });
        }
        if treatment.is_some_and(|t| t >= matrix.cols()) {
            return Err(LearnerError::InvalidInput("treatment column out of range".into()));
        }
        Ok(Self { matrix, names, treatment })
    }

    /// Prepend a treatment column to a covariate matrix.
    pub fn with_leading_treatment(
        treatment_name: &str,
        treatment: &[f64],
        covariates: &Matrix,
        covariate_names: &[String],
    ) -> Result<Self, LearnerError> {
        let n = covariates.rows();
        if treatment.len() != n {
            return Err(LearnerError::DimensionMismatch { expected: n, found: treatment.len() });
        }
        let d = covariates.cols() + 1;
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.push(treatment[i]);
            data.extend_from_slice(covariates.row(i));
        }
        let mut names = Vec::with_capacity(d);
        names.push(String::from(treatment_name));
        names.extend(covariate_names.iter().cloned());
        Self::new(Matrix::from_row_major(n, d, data), names, Some(0))
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { matrix: self.matrix.select_rows(rows), names: self.names.clone(), treatment: self.treatment }
    }

    /// Copy with the treatment column set to `value` for every row.
    pub fn set_treatment(&self, value: f64) -> Self {
        let mut out = self.clone();
        if let Some(t) = self.treatment {
            for i in 0..out.matrix.rows() {
                out.matrix[(i, t)] = value;
            }
        }
        out
    }
}

/// Either a single learner or a stacked ensemble, depending on library size.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OutcomeModel {
    Single(CandidateFit),
    Ensemble(EnsembleFit),
}

impl OutcomeModel {
    pub fn predict(&self, features: &Features) -> Vec<f64> {
        match self {
            OutcomeModel::Single(c) => c.predict(features),
            OutcomeModel::Ensemble(e) => e.predict(features),
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            OutcomeModel::Single(c) => c.converged,
            OutcomeModel::Ensemble(e) => e.candidates.iter().all(|c| c.converged),
        }
    }

    /// A one-learner library is fitted directly; larger libraries are stacked.
    pub fn fit(
        features: &Features,
        y: &[f64],
        w: &[f64],
        library: &[NamedLearner],
        folds: &crate::data::Folds,
        q_bound: f64,
    ) -> Result<Self, LearnerError> {
        if library.len() == 1 {
            Ok(OutcomeModel::Single(library[0].fit(features, y, w, folds.seed())?))
        } else {
            Ok(OutcomeModel::Ensemble(fit_super_learner(features, y, w, library, folds, q_bound)?))
        }
    }
}
