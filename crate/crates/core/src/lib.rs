#![no_std]
//! Targeted estimation of how the effect of a second-stage treatment varies with
//! an estimated first-stage conditional average treatment effect (the "blip"),
//! for two-stage sequentially randomized trials.
//!
//! The crate is `no_std` with `alloc`. Everything here is a pure function of its
//! inputs; file formats, configuration files, parallel Monte Carlo and the CLI
//! live in the `smart-tmle` companion crate.
//!
//! Pipeline, in module order:
//!
//! - [`data`]: the trial record, row subsetting, fold assignment.
//! - [`learners`]: weighted/offset logistic IRLS, a candidate library and a
//!   cross-validated stacking ensemble.
//! - [`cate`]: plug-in blip estimation.
//! - [`msm`]: targeting of the logistic working model coefficients and their
//!   influence-curve inference.
//! - [`effects`]: average-effect TMLEs and the benefit-minus-harm contrast.
//! - [`sim`]: data-generating processes, oracle truths and the replicate harness.

extern crate alloc;

pub mod cate;
pub mod config;
pub mod data;
pub mod effects;
pub mod learners;
pub mod linalg;
pub mod math;
pub mod msm;
pub mod sim;

pub use cate::{fit_blip, BlipEstimate};
pub use config::{AnalysisConfig, HWeightMode, Population};
pub use data::{make_folds, subset_initiators, DataError, Folds, TrialDataset};
pub use effects::{ate_tmle, benefit_harm_contrast, two_stage_mean_tmle, EffectEstimate};
pub use learners::{fit_logistic, predict_proba, DesignMatrix, EnsembleFit, LogisticFit};
pub use msm::{tmle_msm, MsmFit, TmleError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
