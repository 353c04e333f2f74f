//! JSON and CSV report emission.
//!
//! Key names in the JSON reports are part of the interface; see the README.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smart_tmle_core::cate::BlipEstimate;
use smart_tmle_core::config::{AnalysisConfig, HWeightMode, Population};
use smart_tmle_core::data::TrialDataset;
use smart_tmle_core::effects::EffectEstimate;
use smart_tmle_core::learners::OutcomeModel;
use smart_tmle_core::math::{mean, population_variance};
use smart_tmle_core::msm::{Coefficient, MsmDiagnostics, MsmFit};
use smart_tmle_core::sim::McReport;

use crate::error::IoError;

pub const HISTOGRAM_BINS: usize = 20;
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTest {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
    pub learners: Vec<String>,
    /// Ensemble weights, absent for a single learner.
    pub weights: Option<Vec<f64>>,
}

impl BlipSummary {
    pub fn new(blip: &BlipEstimate) -> Self {
        let v = &blip.values;
        let (learners, weights) = match &blip.model {
            OutcomeModel::Single(c) => (vec![c.name.clone()], None),
            OutcomeModel::Ensemble(e) => (e.names(), Some(e.weights.clone())),
        };
        Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: mean(v),
            sd: population_variance(v).sqrt(),
            learners,
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_subjects: usize,
    pub n_second_stage: usize,
    pub population: Population,
    pub h_weight_mode: HWeightMode,
    pub coefficients: Vec<Coefficient>,
    pub interaction: InteractionTest,
    pub covariance: Vec<Vec<f64>>,
    pub diagnostics: MsmDiagnostics,
    pub blip: BlipSummary,
    pub effects: Vec<EffectEstimate>,
}

impl AnalysisReport {
    pub fn new(
        data: &TrialDataset,
        config: &AnalysisConfig,
        blip: &BlipEstimate,
        fit: &MsmFit,
        effects: Vec<EffectEstimate>,
        alpha: f64,
    ) -> Self {
        let c = fit.beta3();
        let z = smart_tmle_core::math::normal_quantile(1.0 - alpha / 2.0);
        let (lo, hi) = (c.estimate - z * c.se, c.estimate + z * c.se);
        Self {
            n_subjects: data.n(),
            n_second_stage: fit.n,
            population: config.population,
            h_weight_mode: fit.h_weight_mode,
            coefficients: fit.coefficients.clone(),
            interaction: InteractionTest {
                estimate: c.estimate,
                se: c.se,
                ci_lower: lo,
                ci_upper: hi,
                p_value: c.p_value,
                alpha,
                reject: c.p_value < alpha,
            },
            covariance: (0..4).map(|i| (0..4).map(|j| fit.sigma[(i, j)]).collect()).collect(),
            diagnostics: fit.diagnostics.clone(),
            blip: BlipSummary::new(blip),
            effects,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut f = File::create(path).map_err(|e| IoError::file(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f).map_err(|e| IoError::file(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    let f = File::create(path).map_err(|e| IoError::file(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::file(path, e))
}

/// Per-subject blip values keyed by input row.
pub fn write_blip_values(path: &Path, data: &TrialDataset, blip: &BlipEstimate) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["row", "blip"])?;
    for (i, b) in blip.values.iter().enumerate() {
        w.write_record([data.row_ids()[i].to_string(), b.to_string()])?;
    }
    finish(w, path)
}

/// Equal-width histogram counts `(lower, upper, count)`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
}

pub fn write_blip_histogram(path: &Path, values: &[f64]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_lower", "bin_upper", "count"])?;
    for (lo, hi, c) in histogram(values, HISTOGRAM_BINS) {
        w.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
    }
    finish(w, path)
}

/// Fitted working model `m(a, b)` for both arms over the observed blip range.
pub fn write_msm_curve(path: &Path, fit: &MsmFit, blip: &[f64]) -> Result<(), IoError> {
    let lo = blip.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = blip.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = csv_writer(path)?;
    w.write_record(["blip", "m_a1", "m_a0"])?;
    for (b, m1, m0) in fit.curve(lo, hi, CURVE_POINTS) {
        w.write_record([b.to_string(), m1.to_string(), m0.to_string()])?;
    }
    finish(w, path)
}

pub fn write_replicates(path: &Path, report: &McReport) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for r in &report.replicates {
        w.serialize(r)?;
    }
    finish(w, path)
}

/// One row per study in the layout of a simulation summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub reps: usize,
    pub n: usize,
    pub failures: usize,
    pub bias: f64,
    pub bias_mc_se: f64,
    pub bias_fixed: f64,
    pub variance: f64,
    pub mse: f64,
    pub empirical_mse: f64,
    pub coverage: f64,
    pub power: f64,
    pub mean_se: f64,
    pub fixed_truth: f64,
    pub mean_truth: f64,
}

impl SummaryRow {
    pub fn new(r: &McReport) -> Self {
        Self {
            scenario: r.scenario.name().into(),
            reps: r.reps,
            n: r.n,
            failures: r.failures.len(),
            bias: r.bias,
            bias_mc_se: r.bias_mc_se,
            bias_fixed: r.bias_fixed,
            variance: r.variance,
            mse: r.mse,
            empirical_mse: r.empirical_mse,
            coverage: r.coverage,
            power: r.power,
            mean_se: r.mean_se,
            fixed_truth: r.fixed_truth,
            mean_truth: r.mean_truth,
        }
    }
}

pub fn write_summary(path: &Path, reports: &[McReport]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for r in reports {
        w.serialize(SummaryRow::new(r))?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let v = [0.0, 0.1, 0.5, 0.99, 1.0];
        let h = histogram(&v, 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[3].2, 2);
        assert_eq!(histogram(&[0.3, 0.3], 3).iter().map(|b| b.2).sum::<usize>(), 2);
    }
}
