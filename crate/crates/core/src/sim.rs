//! Simulation designs for two-stage trials, their oracle quantities, and a
//! Monte Carlo harness for the interaction coefficient of the working model.
//!
//! # Random streams
//!
//! Every draw comes from a [`ChaCha8Rng`] keyed by the master seed. Replicate
//! `r` simulates its trial on stream `2r` and draws the baseline sample used
//! for its data-adaptive truth on stream `2r + 1`; the learners of replicate
//! `r` get the analysis seed `splitmix64(master + r)`. Fixed-blip oracles use
//! stream `u64::MAX`. Replicates therefore depend only on `(master, r)`, never
//! on scheduling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::{fit_blip, BlipEstimate};
use crate::config::{AnalysisConfig, HWeightMode, Population};
use crate::data::{DataError, TrialColumns, TrialDataset};
use crate::learners::{NamedLearner, Terms};
use crate::linalg::Matrix;
use crate::math::{expit, mean};
use crate::msm::{project_msm, tmle_msm_with_blip, HWeights, TmleError};

/// Baseline draws behind each replicate's data-adaptive truth for designs
/// with continuous covariates.
pub const DEFAULT_TRUTH_DRAWS: usize = 20_000;
/// Baseline draws for the fixed-blip oracle of designs with continuous covariates.
pub const DEFAULT_ORACLE_DRAWS: usize = 1_000_000;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.01;

const ORACLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown design `{0}`")]
    UnknownDgp(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid simulation settings: {0}")]
    InvalidSpec(String),
    #[error("baseline row has {found} values, design expects {expected}")]
    BaselineLength { expected: usize, found: usize },
    #[error("{failed} of {total} replicates failed, above the {limit}% limit; first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, limit: f64, first: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tmle(#[from] TmleError),
    #[error("blip: {0}")]
    Blip(String),
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

#[inline]
fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Data-generating process.
///
/// * `Sim1 { variant }`: binary `l1, l2 ~ Bern(1/2)`, `a1, a2 ~ Bern(1/2)`,
///   `y1 ~ Bern(expit(l1 + l2 + a1 + l1 a1 + 2 l2 a1 - 5 a1 l1 l2))`; variant 1
///   has `y2 ~ Bern(expit(l1 a2))`, variant 2 `y2 ~ Bern(1 - expit((1 - a2)(1 - l1)))`.
/// * `Sim1Null`: the first design with `y2 ~ Bern(1/2)` independent of everything.
/// * `Sim2`: `l1 ~ N(0,1)`, `l2 ~ Bern(1/2)`, `l3 ~ N(l1 + l2, 1)`, `a1 ~ Bern(1/3)`,
///   `w1 ~ N(l1 + l3 + a1, 1)`, `y1` from a two-component logistic mixture,
///   `a2` randomized with probability 1/3 or 1/2 except never for `(a1, y1) = (0, 0)`,
///   `y2 ~ Bern(1 - expit(|l1|^y1 + y1 - 2 a2 + 5 a2 l2 + sin(l3 - 4)))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    Sim1 { variant: u8 },
    Sim1Null,
    Sim2,
}

impl Dgp {
    pub fn parse(id: &str) -> Result<Self, SimError> {
        match id {
            "sim1_v1" | "sim1_dgp1" | "sim1" => Ok(Dgp::Sim1 { variant: 1 }),
            "sim1_v2" | "sim1_dgp2" => Ok(Dgp::Sim1 { variant: 2 }),
            "sim1_null" | "null" => Ok(Dgp::Sim1Null),
            "sim2" => Ok(Dgp::Sim2),
            other => Err(SimError::UnknownDgp(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::Sim1 { variant: 2 } => "sim1_v2",
            Dgp::Sim1 { .. } => "sim1_v1",
            Dgp::Sim1Null => "sim1_null",
            Dgp::Sim2 => "sim2",
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match self {
            Dgp::Sim1 { variant } if *variant != 1 && *variant != 2 => {
                Err(SimError::InvalidSpec(format!("sim1 outcome variant must be 1 or 2, got {variant}")))
            }
            _ => Ok(()),
        }
    }

    pub fn baseline_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Dgp::Sim2 => &["l1", "l2", "l3"],
            _ => &["l1", "l2"],
        };
        names.iter().map(|s| String::from(*s)).collect()
    }

    fn check_baseline(&self, baseline: &[f64]) -> Result<(), SimError> {
        let expected = self.baseline_names().len();
        if baseline.len() != expected {
            return Err(SimError::BaselineLength { expected, found: baseline.len() });
        }
        Ok(())
    }

    /// `P(Y(1) = 1 | A(1) = a1, L(0))`.
    pub fn q1(&self, a1: u8, l: &[f64]) -> f64 {
        let a = f64::from(a1);
        match self {
            Dgp::Sim2 => {
                let (l1, l2, l3) = (l[0], l[1], l[2]);
                let c1 = expit(1.0 - l1 * l1 + 3.0 * l2 + 5.0 * l3 * l3 * a - 4.45 * a);
                let c2 = expit(0.5 + l3 + 2.0 * l1 * l2 + 3.0 * l2 * a - 1.5 * a);
                1.0 - 0.5 * (c1 + c2)
            }
            _ => {
                let (l1, l2) = (l[0], l[1]);
                expit(l1 + l2 + a + l1 * a + 2.0 * l2 * a - 5.0 * a * l1 * l2)
            }
        }
    }

    /// `q1(1, L) - q1(0, L)`.
    pub fn true_blip(&self, baseline: &[f64]) -> Result<f64, SimError> {
        self.check_baseline(baseline)?;
        Ok(self.q1(1, baseline) - self.q1(0, baseline))
    }

    /// `P(Y(2) = 1 | L(0), Y(1) = y1, A(2) = a2)`.
    pub fn q2(&self, l: &[f64], y1: u8, a2: u8) -> f64 {
        let a = f64::from(a2);
        match self {
            Dgp::Sim1 { variant: 2 } => 1.0 - expit((1.0 - a) * (1.0 - l[0])),
            Dgp::Sim1 { .. } => expit(l[0] * a),
            Dgp::Sim1Null => 0.5,
            Dgp::Sim2 => {
                let y = f64::from(y1);
                1.0 - expit(l[0].abs().powf(y) + y - 2.0 * a + 5.0 * a * l[1] + (l[2] - 4.0).sin())
            }
        }
    }

    /// Counterfactual mean of `y2` under `a2` given baseline, with the first
    /// stage set to treatment for the second design.
    pub fn counterfactual_mean(&self, l: &[f64], a2: u8) -> f64 {
        match self {
            Dgp::Sim2 => {
                let p1 = self.q1(1, l);
                p1 * self.q2(l, 1, a2) + (1.0 - p1) * self.q2(l, 0, a2)
            }
            _ => self.q2(l, 0, a2),
        }
    }

    /// Who the working model is defined over.
    pub fn population(&self) -> Population {
        match self {
            Dgp::Sim2 => Population::Initiators,
            _ => Population::All,
        }
    }

    pub fn draw_baseline<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            Dgp::Sim2 => {
                let l1 = normal(rng);
                let l2 = f64::from(bernoulli(rng, 0.5));
                let l3 = l1 + l2 + normal(rng);
                out.extend_from_slice(&[l1, l2, l3]);
            }
            _ => {
                let l1 = f64::from(bernoulli(rng, 0.5));
                let l2 = f64::from(bernoulli(rng, 0.5));
                out.extend_from_slice(&[l1, l2]);
            }
        }
    }

    /// Draw `n` baseline rows as an `n x p` matrix.
    pub fn baseline_sample<R: Rng>(&self, n: usize, rng: &mut R) -> Matrix {
        let p = self.baseline_names().len();
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n {
            self.draw_baseline(rng, &mut data);
        }
        Matrix::from_row_major(n, p, data)
    }

    pub fn simulate_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<TrialDataset, SimError> {
        self.validate()?;
        if n < 2 {
            return Err(SimError::InvalidSpec(format!("sample size must be at least 2, got {n}")));
        }
        let p = self.baseline_names().len();
        let mut cols = TrialColumns {
            baseline_names: self.baseline_names(),
            baseline: Vec::with_capacity(n * p),
            ..Default::default()
        };
        if *self == Dgp::Sim2 {
            cols.w1_names = vec![String::from("w1")];
        }
        for i in 0..n {
            self.draw_baseline(rng, &mut cols.baseline);
            let l = &cols.baseline[i * p..(i + 1) * p];
            match self {
                Dgp::Sim2 => {
                    let a1 = bernoulli(rng, 1.0 / 3.0);
                    let w1 = l[0] + l[2] + f64::from(a1) + normal(rng);
                    let y1 = bernoulli(rng, self.q1(a1, l));
                    let p2 = match (a1, y1) {
                        (1, 1) => Some(1.0 / 3.0),
                        (1, _) => Some(0.5),
                        (_, 1) => Some(1.0 / 3.0),
                        _ => None,
                    };
                    let a2 = p2.map(|p| bernoulli(rng, p));
                    let y2 = bernoulli(rng, self.q2(l, y1, a2.unwrap_or(0)));
                    cols.a1.push(a1);
                    cols.w1.push(w1);
                    cols.y1.push(y1);
                    cols.a2.push(a2);
                    cols.y2.push(y2);
                }
                _ => {
                    let a1 = bernoulli(rng, 0.5);
                    let y1 = bernoulli(rng, self.q1(a1, l));
                    let a2 = bernoulli(rng, 0.5);
                    let y2 = bernoulli(rng, self.q2(l, y1, a2));
                    cols.a1.push(a1);
                    cols.y1.push(y1);
                    cols.a2.push(Some(a2));
                    cols.y2.push(y2);
                }
            }
        }
        Ok(TrialDataset::from_columns(cols)?)
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Result<TrialDataset, SimError> {
        self.simulate_with(n, &mut stream_rng(seed, 0))
    }
}

pub fn simulate_dgp1(n: usize, seed: u64, q: u8) -> Result<TrialDataset, SimError> {
    Dgp::Sim1 { variant: q }.simulate(n, seed)
}

pub fn simulate_dgp2(n: usize, seed: u64) -> Result<TrialDataset, SimError> {
    Dgp::Sim2.simulate(n, seed)
}

/// The four equiprobable baseline cells of the binary designs.
pub const SIM1_CELLS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];

/// Baseline rows with equal weights: the exact cells for the binary designs,
/// `draws` sampled rows otherwise.
fn truth_support(dgp: Dgp, draws: usize, rng: &mut ChaCha8Rng) -> Matrix {
    match dgp {
        Dgp::Sim2 => dgp.baseline_sample(draws, rng),
        _ => Matrix::from_row_major(4, 2, SIM1_CELLS.iter().flatten().copied().collect()),
    }
}

/// Interaction coefficient of the working model projected from the true
/// counterfactual means with unit weights, at the given blip values.
pub fn project_truth(dgp: Dgp, support: &Matrix, blip: &[f64]) -> Result<[f64; 4], SimError> {
    let m1: Vec<f64> = (0..support.rows()).map(|i| dgp.counterfactual_mean(support.row(i), 1)).collect();
    let m0: Vec<f64> = (0..support.rows()).map(|i| dgp.counterfactual_mean(support.row(i), 0)).collect();
    let p = project_msm(&m1, &m0, blip, &HWeights::unit(blip.len()))
        .map_err(|e| SimError::Tmle(TmleError { stage: crate::msm::Stage::Projection, source: e }))?;
    Ok(p.beta)
}

/// Working-model coefficients with the true blip `B_0`. The binary designs
/// are enumerated exactly; the second design averages over `n_oracle` draws.
pub fn oracle_true_beta(dgp: Dgp, n_oracle: usize, seed: u64) -> Result<[f64; 4], SimError> {
    dgp.validate()?;
    let support = truth_support(dgp, n_oracle, &mut stream_rng(seed, ORACLE_STREAM));
    let blip: Vec<f64> = (0..support.rows()).map(|i| dgp.q1(1, support.row(i)) - dgp.q1(0, support.row(i))).collect();
    project_truth(dgp, &support, &blip)
}

pub fn oracle_true_beta3(dgp: Dgp, n_oracle: usize, seed: u64) -> Result<f64, SimError> {
    Ok(oracle_true_beta(dgp, n_oracle, seed)?[3])
}

/// Marginal oracle quantities computed from the design's regression functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalOracle {
    pub dgp: Dgp,
    /// `E[Y(1)_1 - Y(1)_0]`.
    pub first_stage_rd: f64,
    /// `E[Y(2)_{a2=1} - Y(2)_{a2=0}]` (first stage set to treatment for the second design).
    pub second_stage_rd: f64,
    /// Second-stage risk difference among subjects with positive true blip.
    pub rd_positive_blip: f64,
    /// Second-stage risk difference among subjects with negative true blip.
    pub rd_negative_blip: f64,
    pub mean_blip: f64,
}

pub fn marginal_oracle(dgp: Dgp, n_oracle: usize, seed: u64) -> Result<MarginalOracle, SimError> {
    dgp.validate()?;
    let support = truth_support(dgp, n_oracle, &mut stream_rng(seed, ORACLE_STREAM));
    let k = support.rows();
    let mut blip = Vec::with_capacity(k);
    let mut rd = Vec::with_capacity(k);
    for i in 0..k {
        let l = support.row(i);
        blip.push(dgp.q1(1, l) - dgp.q1(0, l));
        rd.push(dgp.counterfactual_mean(l, 1) - dgp.counterfactual_mean(l, 0));
    }
    let conditional = |keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = (0..k).filter(|&i| keep(blip[i])).map(|i| rd[i]).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    Ok(MarginalOracle {
        dgp,
        first_stage_rd: mean(&blip),
        second_stage_rd: mean(&rd),
        rd_positive_blip: conditional(&|b| b > 0.0),
        rd_negative_blip: conditional(&|b| b < 0.0),
        mean_blip: mean(&blip),
    })
}

/// Named simulation scenario: a design plus the estimator configuration used
/// on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sim1Dgp1,
    Sim1Dgp2,
    Sim2,
    /// First design with a coin-flip final outcome (no effect modification).
    Null,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Sim1Dgp1, Scenario::Sim1Dgp2, Scenario::Sim2, Scenario::Null];

    pub fn parse(name: &str) -> Result<Self, SimError> {
        match name {
            "sim1_dgp1" | "sim1_v1" => Ok(Scenario::Sim1Dgp1),
            "sim1_dgp2" | "sim1_v2" => Ok(Scenario::Sim1Dgp2),
            "sim2" => Ok(Scenario::Sim2),
            "null" | "sim1_null" => Ok(Scenario::Null),
            other => Err(SimError::UnknownScenario(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Sim1Dgp1 => "sim1_dgp1",
            Scenario::Sim1Dgp2 => "sim1_dgp2",
            Scenario::Sim2 => "sim2",
            Scenario::Null => "null",
        }
    }

    pub fn dgp(&self) -> Dgp {
        match self {
            Scenario::Sim1Dgp1 => Dgp::Sim1 { variant: 1 },
            Scenario::Sim1Dgp2 => Dgp::Sim1 { variant: 2 },
            Scenario::Sim2 => Dgp::Sim2,
            Scenario::Null => Dgp::Sim1Null,
        }
    }

    /// Estimator configuration.
    ///
    /// The binary designs use correctly specified parametric models: a
    /// saturated logistic blip model in `(a1, l1, l2)`, an intercept-only
    /// treatment mechanism and a logistic outcome model in `(a2, l1, a2 l1)`.
    /// The second design uses the stacked default library for the blip, a
    /// main-terms logistic outcome model (misspecified) and a logistic
    /// treatment mechanism on `y1` (correct) among initiators.
    pub fn config(&self) -> AnalysisConfig {
        let base = AnalysisConfig { h_weight_mode: HWeightMode::Unit, ..Default::default() };
        match self {
            Scenario::Sim2 => AnalysisConfig {
                population: Population::Initiators,
                blip_library: None,
                q_library: vec![NamedLearner::logistic("logistic_main", Terms::Main, None)],
                q_covariates: None,
                g_covariates: vec![String::from("y1")],
                ..base
            },
            _ => AnalysisConfig {
                population: Population::All,
                blip_library: Some(vec![NamedLearner::logistic("logistic_saturated", Terms::Saturated, None)]),
                q_library: vec![NamedLearner::logistic("logistic_a2_l1", Terms::TreatmentInteractions, Some(&["l1"]))],
                q_covariates: Some(vec![String::from("l1")]),
                g_covariates: Vec::new(),
                ..base
            },
        }
    }
}

/// Settings of one Monte Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub scenario: Scenario,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Baseline draws per replicate for the data-adaptive truth (continuous designs).
    pub truth_draws: usize,
    /// Baseline draws for the fixed-blip oracle (continuous designs).
    pub oracle_draws: usize,
    /// Estimator configuration; `None` uses [`Scenario::config`].
    pub config: Option<AnalysisConfig>,
}

impl McSettings {
    pub fn new(scenario: Scenario, reps: usize, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            reps,
            n,
            seed,
            alpha: 0.05,
            truth_draws: DEFAULT_TRUTH_DRAWS,
            oracle_draws: DEFAULT_ORACLE_DRAWS,
            config: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.reps < 2 {
            return Err(SimError::InvalidSpec(format!("need at least 2 replicates, got {}", self.reps)));
        }
        if self.n < 2 {
            return Err(SimError::InvalidSpec(format!("sample size must be at least 2, got {}", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.truth_draws < 2 || self.oracle_draws < 2 {
            return Err(SimError::InvalidSpec("truth and oracle draws must be at least 2".into()));
        }
        Ok(())
    }

    pub fn resolved_config(&self) -> AnalysisConfig {
        self.config.clone().unwrap_or_else(|| self.scenario.config())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Interaction coefficient of the projection with this replicate's blip.
    pub truth: f64,
    pub covered: bool,
    pub rejected: bool,
    pub max_abs_mean_ic: f64,
    pub blip_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

/// Data-adaptive truth: the projection of the true counterfactual means onto
/// the working model using the fitted blip.
pub fn adaptive_truth(dgp: Dgp, blip: &BlipEstimate, draws: usize, rng: &mut ChaCha8Rng) -> Result<f64, SimError> {
    let support = truth_support(dgp, draws, rng);
    let values = blip.predict(&support).map_err(|e| SimError::Blip(format!("{e}")))?;
    Ok(project_truth(dgp, &support, &values)?[3])
}

pub fn run_replicate(settings: &McSettings, config: &AnalysisConfig, r: usize) -> Result<ReplicateResult, SimError> {
    let dgp = settings.scenario.dgp();
    let data = dgp.simulate_with(settings.n, &mut stream_rng(settings.seed, 2 * r as u64))?;
    let config = AnalysisConfig { seed: splitmix64(settings.seed.wrapping_add(r as u64)), ..config.clone() };
    let blip = fit_blip(&data, &config).map_err(|e| {
        SimError::Tmle(TmleError { stage: crate::msm::Stage::Blip, source: e.into() })
    })?;
    let fit = tmle_msm_with_blip(&data, &config, &blip)?;
    let truth = adaptive_truth(dgp, &blip, settings.truth_draws, &mut stream_rng(settings.seed, 2 * r as u64 + 1))?;
    let c = fit.beta3();
    let z = crate::math::normal_quantile(1.0 - settings.alpha / 2.0);
    let (lo, hi) = (c.estimate - z * c.se, c.estimate + z * c.se);
    Ok(ReplicateResult {
        replicate: r,
        estimate: c.estimate,
        se: c.se,
        ci_lower: lo,
        ci_upper: hi,
        truth,
        covered: lo <= truth && truth <= hi,
        rejected: lo > 0.0 || hi < 0.0,
        max_abs_mean_ic: fit.diagnostics.max_abs_mean_ic,
        blip_sd: blip.variance().sqrt(),
    })
}

/// Aggregate performance of the interaction-coefficient estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Interaction coefficient with the true blip.
    pub fixed_truth: f64,
    /// Mean data-adaptive truth over successful replicates.
    pub mean_truth: f64,
    /// `mean(estimate - truth)` against each replicate's data-adaptive truth.
    pub bias: f64,
    /// Monte Carlo standard error of `bias`.
    pub bias_mc_se: f64,
    /// `mean(estimate) - fixed_truth`.
    pub bias_fixed: f64,
    /// Variance of the estimates (divisor = number of successful replicates).
    pub variance: f64,
    /// `bias^2 + variance`.
    pub mse: f64,
    /// `mean((estimate - truth)^2)`.
    pub empirical_mse: f64,
    pub mean_se: f64,
    /// Percent of intervals containing the data-adaptive truth.
    pub coverage: f64,
    /// Percent of replicates rejecting a zero interaction.
    pub power: f64,
    pub max_abs_mean_ic: f64,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
}

/// Reduce replicate outcomes (in replicate order) into a report, refusing when
/// more than [`MAX_FAILURE_RATE`] of them failed.
pub fn summarize(
    settings: &McSettings,
    fixed_truth: f64,
    outcomes: Vec<Result<ReplicateResult, ReplicateFailure>>,
) -> Result<McReport, SimError> {
    let total = outcomes.len();
    let mut replicates = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => replicates.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 || replicates.len() < 2 {
        return Err(SimError::TooManyFailures {
            failed: failures.len(),
            total,
            limit: 100.0 * MAX_FAILURE_RATE,
            first: failures.first().map(|f| f.message.clone()).unwrap_or_default(),
        });
    }
    let k = replicates.len() as f64;
    let est: Vec<f64> = replicates.iter().map(|r| r.estimate).collect();
    let err: Vec<f64> = replicates.iter().map(|r| r.estimate - r.truth).collect();
    let bias = mean(&err);
    let variance = crate::math::population_variance(&est);
    let err_var = crate::math::population_variance(&err);
    Ok(McReport {
        scenario: settings.scenario,
        reps: total,
        n: settings.n,
        seed: settings.seed,
        alpha: settings.alpha,
        fixed_truth,
        mean_truth: mean(&replicates.iter().map(|r| r.truth).collect::<Vec<_>>()),
        bias,
        bias_mc_se: (err_var * k / (k - 1.0) / k).sqrt(),
        bias_fixed: mean(&est) - fixed_truth,
        variance,
        mse: bias * bias + variance,
        empirical_mse: err.iter().map(|e| e * e).sum::<f64>() / k,
        mean_se: mean(&replicates.iter().map(|r| r.se).collect::<Vec<_>>()),
        coverage: 100.0 * replicates.iter().filter(|r| r.covered).count() as f64 / k,
        power: 100.0 * replicates.iter().filter(|r| r.rejected).count() as f64 / k,
        max_abs_mean_ic: replicates.iter().fold(0.0, |m, r| m.max(r.max_abs_mean_ic)),
        replicates,
        failures,
    })
}

pub fn fixed_truth(settings: &McSettings) -> Result<f64, SimError> {
    oracle_true_beta3(settings.scenario.dgp(), settings.oracle_draws, settings.seed)
}

/// Run every replicate in order on the current thread.
pub fn run_monte_carlo(settings: &McSettings) -> Result<McReport, SimError> {
    settings.validate()?;
    let config = settings.resolved_config();
    config.validate().map_err(|e| SimError::InvalidSpec(format!("{e}")))?;
    let truth = fixed_truth(settings)?;
    let outcomes = (0..settings.reps)
        .map(|r| run_replicate(settings, &config, r).map_err(|e| ReplicateFailure { replicate: r, message: format!("{e}") }))
        .collect();
    summarize(settings, truth, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate_dgp1(300, 9, 1).unwrap();
        let b = simulate_dgp1(300, 9, 1).unwrap();
        assert_eq!(a, b);
        let c = simulate_dgp2(300, 9).unwrap();
        assert_eq!(c, simulate_dgp2(300, 9).unwrap());
        assert_ne!(c, simulate_dgp2(300, 10).unwrap());
    }

    #[test]
    fn never_rerandomized_cell_has_no_a2() {
        let d = simulate_dgp2(2000, 3).unwrap();
        for i in 0..d.n() {
            assert_eq!(d.a2()[i].is_none(), d.a1()[i] == 0 && d.y1()[i] == 0);
        }
    }

    #[test]
    fn sim1_oracles_by_enumeration() {
        assert!((oracle_true_beta3(Dgp::Sim1 { variant: 1 }, 0, 0).unwrap() + 1.91695).abs() < 1e-4);
        assert!((oracle_true_beta3(Dgp::Sim1 { variant: 2 }, 0, 0).unwrap() - 1.76227).abs() < 1e-4);
        assert!(oracle_true_beta3(Dgp::Sim1Null, 0, 0).unwrap().abs() < 1e-9);
        let m = marginal_oracle(Dgp::Sim1 { variant: 1 }, 0, 0).unwrap();
        assert!((m.second_stage_rd - 0.11553).abs() < 1e-4);
        assert!((m.rd_negative_blip - 0.23106).abs() < 1e-4);
    }

    #[test]
    fn invalid_variant_and_names() {
        assert!(simulate_dgp1(10, 0, 3).is_err());
        assert!(matches!(Scenario::parse("sim3"), Err(SimError::UnknownScenario(_))));
        assert_eq!(Scenario::parse("sim1_dgp2").unwrap().dgp(), Dgp::Sim1 { variant: 2 });
    }
}
