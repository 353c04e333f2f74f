//! Two-stage trial records: baseline covariates, first-stage treatment and
//! outcome, intermediate covariates, second-stage treatment and final outcome.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Name of the first-stage treatment column in history designs.
pub const A1: &str = "a1";
/// Name of the first-stage outcome column in history designs.
pub const Y1: &str = "y1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("column `{0}` named in the role map is not present")]
    MissingColumn(String),
    #[error("column `{column}` row {row}: `{token}` is not a 0/1 value")]
    NonBinaryValue { column: String, row: usize, token: String },
    #[error("column `{column}` row {row}: `{token}` is not a finite number")]
    NonNumericValue { column: String, row: usize, token: String },
    #[error("column `{column}` row {row}: missing value")]
    MissingValue { column: String, row: usize },
    #[error("column `{column}` has {found} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, found: usize },
    #[error("column name `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("no subject received the first-stage treatment")]
    EmptySubset,
    #[error("cannot split {n} subjects into {k} folds")]
    InvalidFoldCount { n: usize, k: usize },
}

/// Column-wise input to [`TrialDataset::from_columns`].
///
/// `baseline` and `w1` are stored row-major with `baseline_names.len()` and
/// `w1_names.len()` columns respectively.
#[derive(Debug, Clone, Default)]
pub struct TrialColumns {
    pub baseline_names: Vec<String>,
    pub baseline: Vec<f64>,
    pub a1: Vec<u8>,
    pub y1: Vec<u8>,
    pub w1_names: Vec<String>,
    pub w1: Vec<f64>,
    /// `None` marks a subject who was never re-randomized.
    pub a2: Vec<Option<u8>>,
    pub y2: Vec<u8>,
}

/// Validated, immutable trial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    baseline_names: Vec<String>,
    baseline: Vec<f64>,
    a1: Vec<u8>,
    y1: Vec<u8>,
    w1_names: Vec<String>,
    w1: Vec<f64>,
    a2: Vec<Option<u8>>,
    y2: Vec<u8>,
    row_ids: Vec<usize>,
}

fn check_binary(name: &str, xs: &[u8]) -> Result<(), DataError> {
    match xs.iter().position(|&v| v > 1) {
        Some(row) => Err(DataError::NonBinaryValue {
            column: name.to_string(),
            row,
            token: xs[row].to_string(),
        }),
        None => Ok(()),
    }
}

fn check_len(name: &str, expected: usize, found: usize) -> Result<(), DataError> {
    if expected == found {
        Ok(())
    } else {
        Err(DataError::LengthMismatch { column: name.to_string(), expected, found })
    }
}

fn check_finite(names: &[String], values: &[f64]) -> Result<(), DataError> {
    if names.is_empty() {
        return Ok(());
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(DataError::NonNumericValue {
            column: names[pos % names.len()].clone(),
            row: pos / names.len(),
            token: alloc::format!("{}", values[pos]),
        }),
        None => Ok(()),
    }
}

impl TrialDataset {
    pub fn from_columns(cols: TrialColumns) -> Result<Self, DataError> {
        let n = cols.a1.len();
        if n == 0 {
            return Err(DataError::EmptyDataset);
        }
        check_len(Y1, n, cols.y1.len())?;
        check_len("a2", n, cols.a2.len())?;
        check_len("y2", n, cols.y2.len())?;
        check_len("baseline", n * cols.baseline_names.len(), cols.baseline.len())?;
        check_len("w1", n * cols.w1_names.len(), cols.w1.len())?;
        check_binary(A1, &cols.a1)?;
        check_binary(Y1, &cols.y1)?;
        check_binary("y2", &cols.y2)?;
        if let Some(row) = cols.a2.iter().position(|v| matches!(v, Some(x) if *x > 1)) {
            return Err(DataError::NonBinaryValue {
                column: "a2".to_string(),
                row,
                token: cols.a2[row].unwrap_or(0).to_string(),
            });
        }
        check_finite(&cols.baseline_names, &cols.baseline)?;
        check_finite(&cols.w1_names, &cols.w1)?;

        let mut seen: Vec<&str> = Vec::new();
        for name in cols.baseline_names.iter().chain(&cols.w1_names) {
            if seen.contains(&name.as_str()) || name == A1 || name == Y1 {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
            seen.push(name);
        }

        Ok(Self {
            baseline_names: cols.baseline_names,
            baseline: cols.baseline,
            a1: cols.a1,
            y1: cols.y1,
            w1_names: cols.w1_names,
            w1: cols.w1,
            a2: cols.a2,
            y2: cols.y2,
            row_ids: (0..n).collect(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a1.len()
    }

    /// Number of baseline covariates.
    #[inline]
    pub fn p(&self) -> usize {
        self.baseline_names.len()
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn w1_names(&self) -> &[String] {
        &self.w1_names
    }

    pub fn baseline_row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.baseline[i * p..(i + 1) * p]
    }

    pub fn baseline_matrix(&self) -> Matrix {
        Matrix::from_row_major(self.n(), self.p(), self.baseline.clone())
    }

    pub fn w1_row(&self, i: usize) -> &[f64] {
        let q = self.w1_names.len();
        &self.w1[i * q..(i + 1) * q]
    }

    pub fn a1(&self) -> &[u8] {
        &self.a1
    }

    pub fn y1(&self) -> &[u8] {
        &self.y1
    }

    pub fn a2(&self) -> &[Option<u8>] {
        &self.a2
    }

    pub fn y2(&self) -> &[u8] {
        &self.y2
    }

    /// Row indices in the dataset this one was derived from (identity for a
    /// freshly loaded dataset).
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    /// Names of all columns available to a second-stage history:
    /// baseline covariates, `a1`, `y1`, then intermediate covariates.
    pub fn history_names(&self) -> Vec<String> {
        let mut out = self.baseline_names.clone();
        out.push(A1.to_string());
        out.push(Y1.to_string());
        out.extend(self.w1_names.iter().cloned());
        out
    }

    /// Value of a named history column for subject `i`.
    pub fn history_value(&self, name: &str, i: usize) -> Option<f64> {
        if name == A1 {
            return Some(f64::from(self.a1[i]));
        }
        if name == Y1 {
            return Some(f64::from(self.y1[i]));
        }
        if let Some(j) = self.baseline_names.iter().position(|c| c == name) {
            return Some(self.baseline_row(i)[j]);
        }
        self.w1_names
            .iter()
            .position(|c| c == name)
            .map(|j| self.w1_row(i)[j])
    }

    /// Gather the named history columns for the given rows.
    pub fn history_matrix(&self, names: &[String], rows: &[usize]) -> Result<Matrix, DataError> {
        for name in names {
            if self.history_value(name, 0).is_none() {
                return Err(DataError::MissingColumn(name.clone()));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * names.len());
        for &i in rows {
            for name in names {
                data.push(self.history_value(name, i).unwrap_or(f64::NAN));
            }
        }
        Ok(Matrix::from_row_major(rows.len(), names.len(), data))
    }

    /// Keep the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let p = self.p();
        let q = self.w1_names.len();
        let mut out = Self {
            baseline_names: self.baseline_names.clone(),
            baseline: Vec::with_capacity(rows.len() * p),
            a1: Vec::with_capacity(rows.len()),
            y1: Vec::with_capacity(rows.len()),
            w1_names: self.w1_names.clone(),
            w1: Vec::with_capacity(rows.len() * q),
            a2: Vec::with_capacity(rows.len()),
            y2: Vec::with_capacity(rows.len()),
            row_ids: Vec::with_capacity(rows.len()),
        };
        for &i in rows {
            out.baseline.extend_from_slice(self.baseline_row(i));
            out.w1.extend_from_slice(self.w1_row(i));
            out.a1.push(self.a1[i]);
            out.y1.push(self.y1[i]);
            out.a2.push(self.a2[i]);
            out.y2.push(self.y2[i]);
            out.row_ids.push(self.row_ids[i]);
        }
        out
    }

    /// Copy with every first-stage treatment label flipped.
    pub fn with_a1_recoded(&self) -> Self {
        let mut out = self.clone();
        out.a1.iter_mut().for_each(|a| *a = 1 - *a);
        out
    }

    /// Copy with the final outcome replaced.
    pub fn with_y2(&self, y2: Vec<u8>) -> Result<Self, DataError> {
        check_len("y2", self.n(), y2.len())?;
        check_binary("y2", &y2)?;
        let mut out = self.clone();
        out.y2 = y2;
        Ok(out)
    }
}

/// Rows with `a1 = 1`. The result keeps the original row indices in
/// [`TrialDataset::row_ids`].
pub fn subset_initiators(data: &TrialDataset) -> Result<TrialDataset, DataError> {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.a1[i] == 1).collect();
    if rows.is_empty() {
        return Err(DataError::EmptySubset);
    }
    Ok(data.select_rows(&rows))
}

/// Assignment of subjects to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    k: usize,
    seed: u64,
    assignment: Vec<usize>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Deterministic balanced fold assignment: a seeded shuffle of `0..n` dealt
/// round-robin into `k` folds, so fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Folds, DataError> {
    if k < 2 || n < k {
        return Err(DataError::InvalidFoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = alloc::vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(Folds { k, seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy(a1: Vec<u8>) -> TrialDataset {
        let n = a1.len();
        TrialDataset::from_columns(TrialColumns {
            baseline_names: vec!["l1".into()],
            baseline: (0..n).map(|i| i as f64).collect(),
            a1,
            y1: vec![1; n],
            a2: vec![Some(0); n],
            y2: vec![0; n],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn initiator_subset_keeps_rows_one_and_three() {
        let d = toy(vec![1, 0, 1]);
        let s = subset_initiators(&d).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.row_ids(), &[0, 2]);
        assert_eq!(s.baseline_row(1), &[2.0]);
    }

    #[test]
    fn initiator_subset_of_untreated_is_error() {
        assert_eq!(subset_initiators(&toy(vec![0, 0])).unwrap_err(), DataError::EmptySubset);
    }

    #[test]
    fn non_binary_outcome_rejected() {
        let err = TrialDataset::from_columns(TrialColumns {
            a1: vec![0, 1],
            y1: vec![0, 2],
            a2: vec![None, None],
            y2: vec![0, 0],
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, DataError::NonBinaryValue { ref column, row: 1, .. } if column == "y1"));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert_eq!(
            TrialDataset::from_columns(TrialColumns::default()).unwrap_err(),
            DataError::EmptyDataset
        );
    }

    #[test]
    fn fold_sizes() {
        let f = make_folds(10, 5, 3).unwrap();
        for k in 0..5 {
            assert_eq!(f.validation(k).len(), 2);
        }
        let f = make_folds(7, 3, 3).unwrap();
        let mut sizes: Vec<usize> = (0..3).map(|k| f.validation(k).len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert_eq!(make_folds(7, 3, 3).unwrap(), f);
        assert!(make_folds(3, 1, 0).is_err());
        assert!(make_folds(2, 3, 0).is_err());
    }

    #[test]
    fn history_lookup() {
        let d = toy(vec![1, 0, 1]);
        assert_eq!(d.history_names(), vec!["l1", "a1", "y1"]);
        let m = d.history_matrix(&["a1".into(), "l1".into()], &[1, 2]).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 2.0]);
        assert!(matches!(d.history_matrix(&["zz".into()], &[0]), Err(DataError::MissingColumn(_))));
    }
}
