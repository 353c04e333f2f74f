//! First-stage blip (conditional average treatment effect) estimation by
//! single-stage Q-learning: regress `y1` on `(a1, L(0))`, then difference the
//! predictions at `a1 = 1` and `a1 = 0`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AnalysisConfig;
use crate::data::{make_folds, DataError, TrialDataset, A1};
use crate::learners::{Features, LearnerError, OutcomeModel};
use crate::linalg::Matrix;
use crate::math::clip;
use crate::sim::{Dgp, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CateError {
    #[error("first-stage treatment arm {0} is empty; the blip is not identified")]
    Positivity(u8),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Estimated blip per subject together with the fitted outcome regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipEstimate {
    pub values: Vec<f64>,
    pub model: OutcomeModel,
    /// Baseline columns used as the first-stage history, in feature order.
    pub history: Vec<String>,
    pub q_bound: f64,
}

impl BlipEstimate {
    /// Evaluate the fitted blip function at new baseline rows (columns ordered
    /// as [`BlipEstimate::history`]).
    pub fn predict(&self, baseline: &Matrix) -> Result<Vec<f64>, LearnerError> {
        let zeros = alloc::vec![0.0; baseline.rows()];
        let f = Features::with_leading_treatment(A1, &zeros, baseline, &self.history)?;
        Ok(counterfactual_difference(&self.model, &f, self.q_bound))
    }

    pub fn variance(&self) -> f64 {
        crate::math::population_variance(&self.values)
    }
}

fn counterfactual_difference(model: &OutcomeModel, features: &Features, q_bound: f64) -> Vec<f64> {
    let p1 = model.predict(&features.set_treatment(1.0));
    let p0 = model.predict(&features.set_treatment(0.0));
    p1.iter().zip(&p0).map(|(a, b)| clip(*a, q_bound) - clip(*b, q_bound)).collect()
}

/// Fit the first-stage outcome regression on every subject and return the
/// clipped counterfactual prediction difference per subject.
pub fn fit_blip(data: &TrialDataset, config: &AnalysisConfig) -> Result<BlipEstimate, CateError> {
    for arm in [0u8, 1] {
        if !data.a1().contains(&arm) {
            return Err(CateError::Positivity(arm));
        }
    }
    let a1: Vec<f64> = data.a1().iter().map(|&a| f64::from(a)).collect();
    let y1: Vec<f64> = data.y1().iter().map(|&y| f64::from(y)).collect();
    let history = data.baseline_names().to_vec();
    let features = Features::with_leading_treatment(A1, &a1, &data.baseline_matrix(), &history)?;
    let folds = make_folds(data.n(), config.folds, config.seed)?;
    let w = alloc::vec![1.0; data.n()];
    let library = config.blip_library_for(data);
    let model = OutcomeModel::fit(&features, &y1, &w, &library, &folds, config.q_bound)?;
    let values = counterfactual_difference(&model, &features, config.q_bound);
    Ok(BlipEstimate { values, model, history, q_bound: config.q_bound })
}

/// True blip of a simulation design at one baseline row (`"sim1"` or `"sim2"`).
pub fn true_blip(dgp: &str, baseline: &[f64]) -> Result<f64, SimError> {
    let d = match dgp {
        "sim1" => Dgp::Sim1 { variant: 1 },
        "sim2" => Dgp::Sim2,
        other => return Err(SimError::UnknownDgp(other.into())),
    };
    d.true_blip(baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{NamedLearner, Terms};

    #[test]
    fn sim1_true_blip_cells() {
        let cells = [([0.0, 0.0], 0.2311), ([1.0, 0.0], 0.2215), ([0.0, 1.0], 0.2509), ([1.0, 1.0], -0.1497)];
        let mut total = 0.0;
        for (l, v) in cells {
            let b = true_blip("sim1", &l).unwrap();
            assert!((b - v).abs() < 1e-4, "{l:?}: {b}");
            total += b / 4.0;
        }
        assert!((total - 0.13845).abs() < 5e-5);
        assert!(matches!(true_blip("sim3", &[0.0]), Err(SimError::UnknownDgp(_))));
    }

    #[test]
    fn mean_learner_gives_zero_blip() {
        let data = crate::sim::simulate_dgp1(200, 1, 1).unwrap();
        let cfg = AnalysisConfig { blip_library: Some(alloc::vec![NamedLearner::mean()]), ..Default::default() };
        let b = fit_blip(&data, &cfg).unwrap();
        assert!(b.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_arm_is_a_positivity_error() {
        let data = crate::sim::simulate_dgp1(50, 1, 1).unwrap();
        let only_treated = crate::data::subset_initiators(&data).unwrap();
        let cfg = AnalysisConfig {
            blip_library: Some(alloc::vec![NamedLearner::logistic("sat", Terms::Saturated, None)]),
            ..Default::default()
        };
        assert_eq!(fit_blip(&only_treated, &cfg).unwrap_err(), CateError::Positivity(0));
    }
}
