//! Analysis configuration shared by every estimator.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TrialDataset, A1};
use crate::learners::{default_library, NamedLearner, Terms};

/// Stabilizing weight used in the working-model projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HWeightMode {
    /// `h = 1`.
    #[default]
    Unit,
    /// `h(a, b) = P(A(2) = a | blip = b)`, fitted by logistic regression on the blip.
    TreatmentPrevalence,
}

/// Which subjects enter the second-stage analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Every subject with an observed second-stage assignment.
    #[default]
    All,
    /// Only subjects with `a1 = 1` (effects of continuing versus stopping a
    /// first-stage treatment that everybody started).
    Initiators,
}

/// Mapping of input columns to trial roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleMap {
    pub baseline: Vec<String>,
    pub a1: String,
    pub y1: String,
    pub w1: Vec<String>,
    pub a2: Option<String>,
    pub y2: String,
}

impl Default for RoleMap {
    fn default() -> Self {
        Self {
            baseline: Vec::new(),
            a1: "a1".into(),
            y1: "y1".into(),
            w1: Vec::new(),
            a2: Some("a2".into()),
            y2: "y2".into(),
        }
    }
}

/// Design probability `P(A(2) = 1)` in one `(a1, y1)` stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownG2Cell {
    pub a1: u8,
    pub y1: u8,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub roles: RoleMap,
    /// Known `P(A(1) = 1)` under a marginally randomized first stage.
    pub known_g1: Option<f64>,
    /// Known second-stage randomization table.
    pub known_g2: Option<Vec<KnownG2Cell>>,
    pub h_weight_mode: HWeightMode,
    /// Truncation bound for predicted probabilities.
    pub q_bound: f64,
    pub seed: u64,
    pub folds: usize,
    pub population: Population,
    /// Learners for the first-stage outcome regression behind the blip.
    /// `None` selects [`default_library`] over the baseline covariates.
    pub blip_library: Option<Vec<NamedLearner>>,
    /// Learners for the second-stage outcome regression.
    pub q_library: Vec<NamedLearner>,
    /// History columns entering the second-stage outcome regression; `None`
    /// means every history column (minus `a1` for the initiator population).
    pub q_covariates: Option<Vec<String>>,
    /// History columns for an estimated second-stage treatment mechanism.
    pub g_covariates: Vec<String>,
    /// Baseline covariates adjusted for in the average-effect estimators.
    pub adjust_covariates: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            roles: RoleMap::default(),
            known_g1: None,
            known_g2: None,
            h_weight_mode: HWeightMode::Unit,
            q_bound: 1e-4,
            seed: 0,
            folds: 10,
            population: Population::All,
            blip_library: None,
            q_library: vec![NamedLearner::logistic("logistic_main", Terms::Main, None)],
            q_covariates: None,
            g_covariates: vec![String::from(crate::data::Y1)],
            adjust_covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("q_bound must lie in (0, 0.5), got {0}")]
    QBound(f64),
    #[error("fold count must be at least 2, got {0}")]
    Folds(usize),
    #[error("known treatment probability {0} is outside (0, 1)")]
    Probability(f64),
    #[error("known_g2 lists stratum a1={a1}, y1={y1} more than once or with non-binary keys")]
    G2Table { a1: u8, y1: u8 },
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.q_bound > 0.0 && self.q_bound < 0.5) {
            return Err(ConfigError::QBound(self.q_bound));
        }
        if self.folds < 2 {
            return Err(ConfigError::Folds(self.folds));
        }
        if let Some(p) = self.known_g1 {
            if !(p > 0.0 && p < 1.0) {
                return Err(ConfigError::Probability(p));
            }
        }
        if let Some(table) = &self.known_g2 {
            for (k, c) in table.iter().enumerate() {
                if !(c.p > 0.0 && c.p < 1.0) {
                    return Err(ConfigError::Probability(c.p));
                }
                if c.a1 > 1 || c.y1 > 1 || table[..k].iter().any(|o| o.a1 == c.a1 && o.y1 == c.y1) {
                    return Err(ConfigError::G2Table { a1: c.a1, y1: c.y1 });
                }
            }
        }
        Ok(())
    }

    pub fn blip_library_for(&self, data: &TrialDataset) -> Vec<NamedLearner> {
        self.blip_library.clone().unwrap_or_else(|| default_library(data.baseline_names()))
    }

    pub fn q_covariates_for(&self, data: &TrialDataset) -> Vec<String> {
        self.q_covariates.clone().unwrap_or_else(|| {
            data.history_names()
                .into_iter()
                .filter(|c| !(self.population == Population::Initiators && c == A1))
                .collect()
        })
    }

    /// Rows entering the second-stage analysis.
    pub fn second_stage_rows(&self, data: &TrialDataset) -> Vec<usize> {
        (0..data.n())
            .filter(|&i| data.a2()[i].is_some())
            .filter(|&i| self.population == Population::All || data.a1()[i] == 1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = AnalysisConfig::default();
        assert!(c.validate().is_ok());
        c.q_bound = 0.5;
        assert_eq!(c.validate(), Err(ConfigError::QBound(0.5)));
        c.q_bound = 1e-3;
        c.folds = 1;
        assert!(c.validate().is_err());
        c.folds = 5;
        c.known_g2 = Some(vec![KnownG2Cell { a1: 1, y1: 0, p: 0.0 }]);
        assert!(c.validate().is_err());
        c.known_g2 = Some(vec![KnownG2Cell { a1: 1, y1: 0, p: 0.5 }, KnownG2Cell { a1: 1, y1: 0, p: 0.3 }]);
        assert!(c.validate().is_err());
    }
}
