//! Design-matrix construction from raw feature columns.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Features, LearnerError};
use crate::linalg::Matrix;

/// Which terms a parametric learner builds from its feature columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    /// Intercept and every column as a main term.
    #[default]
    Main,
    /// Main terms plus the treatment column times every other column.
    TreatmentInteractions,
    /// One term per subset of columns (all interactions of every order).
    /// Only sensible for a handful of binary columns.
    Saturated,
}

const MAX_SATURATED_COLUMNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Factor {
    Raw(usize),
    /// `max(0, x - knot)`
    Above(usize, f64),
}

impl Factor {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Factor::Raw(j) => x[j],
            Factor::Above(j, k) => (x[j] - k).max(0.0),
        }
    }
}

/// A product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Term(Vec<Factor>);

/// Recipe mapping a feature row to a design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    terms: Vec<Term>,
    labels: Vec<String>,
}

fn factor_label(f: &Factor, names: &[String]) -> String {
    match f {
        Factor::Raw(j) => names[*j].clone(),
        Factor::Above(j, k) => alloc::format!("h({}-{:.4})", names[*j], k),
    }
}

impl Basis {
    fn from_terms(terms: Vec<Term>, names: &[String]) -> Self {
        let labels = terms
            .iter()
            .map(|t| {
                if t.0.is_empty() {
                    String::from("(intercept)")
                } else {
                    t.0.iter().map(|f| factor_label(f, names)).collect::<Vec<_>>().join(":")
                }
            })
            .collect();
        Self { terms, labels }
    }

    /// Parametric terms over `columns` (indices into the feature matrix).
    pub fn parametric(terms: Terms, features: &Features, columns: &[usize]) -> Result<Self, LearnerError> {
        let mut out = alloc::vec![Term(Vec::new())];
        match terms {
            Terms::Main => out.extend(columns.iter().map(|&j| Term(alloc::vec![Factor::Raw(j)]))),
            Terms::TreatmentInteractions => {
                out.extend(columns.iter().map(|&j| Term(alloc::vec![Factor::Raw(j)])));
                if let Some(t) = features.treatment.filter(|t| columns.contains(t)) {
                    for &j in columns.iter().filter(|&&j| j != t) {
                        out.push(Term(alloc::vec![Factor::Raw(t), Factor::Raw(j)]));
                    }
                }
            }
            Terms::Saturated => {
                if columns.len() > MAX_SATURATED_COLUMNS {
                    return Err(LearnerError::InvalidInput(alloc::format!(
                        "saturated design over {} columns is too large",
                        columns.len()
                    )));
                }
                // Subsets ordered by size, then lexicographically by mask.
                let mut masks: Vec<u32> = (1..(1u32 << columns.len())).collect();
                masks.sort_by_key(|m| (m.count_ones(), *m));
                for m in masks {
                    let factors = columns
                        .iter()
                        .enumerate()
                        .filter(|(bit, _)| m & (1 << bit) != 0)
                        .map(|(_, &j)| Factor::Raw(j))
                        .collect();
                    out.push(Term(factors));
                }
            }
        }
        Ok(Self::from_terms(out, &features.names))
    }

    /// Piecewise-linear hinge basis: each non-binary column gets hinge terms at
    /// `knots` interior quantiles of the training data, and every non-treatment
    /// term is also multiplied by the treatment column.
    pub fn hinge(features: &Features, knots: usize) -> Self {
        let x = &features.matrix;
        let mut base: Vec<Term> = Vec::new();
        for j in 0..x.cols() {
            if Some(j) == features.treatment {
                continue;
            }
            base.push(Term(alloc::vec![Factor::Raw(j)]));
            let mut col = x.column(j);
            let binary = col.iter().all(|v| *v == 0.0 || *v == 1.0);
            if binary || knots == 0 {
                continue;
            }
            col.sort_by(f64::total_cmp);
            let mut last = f64::NEG_INFINITY;
            for q in 1..=knots {
                let pos = (q * (col.len() - 1)) / (knots + 1);
                let k = col[pos];
                if k > last {
                    base.push(Term(alloc::vec![Factor::Above(j, k)]));
                    last = k;
                }
            }
        }
        let mut terms = alloc::vec![Term(Vec::new())];
        if let Some(t) = features.treatment {
            terms.push(Term(alloc::vec![Factor::Raw(t)]));
            let interactions: Vec<Term> = base
                .iter()
                .map(|b| {
                    let mut f = alloc::vec![Factor::Raw(t)];
                    f.extend(b.0.iter().cloned());
                    Term(f)
                })
                .collect();
            terms.extend(base);
            terms.extend(interactions);
        } else {
            terms.extend(base);
        }
        Self::from_terms(terms, &features.names)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.0.iter().map(|f| f.eval(x)).product();
        }
    }

    pub fn design(&self, features: &Features) -> Matrix {
        let n = features.matrix.rows();
        let mut m = Matrix::zeros(n, self.len());
        for i in 0..n {
            self.row_into(features.matrix.row(i), m.row_mut(i));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feats() -> Features {
        Features::new(
            Matrix::from_row_major(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]),
            vec!["a".into(), "l1".into(), "l2".into()],
            Some(0),
        )
        .unwrap()
    }

    #[test]
    fn saturated_has_all_subsets() {
        let f = feats();
        let b = Basis::parametric(Terms::Saturated, &f, &[0, 1, 2]).unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.labels()[7], "a:l1:l2");
        let d = b.design(&f);
        assert_eq!(d.row(0), &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn interactions_with_treatment() {
        let f = feats();
        let b = Basis::parametric(Terms::TreatmentInteractions, &f, &[0, 2]).unwrap();
        assert_eq!(b.labels(), &["(intercept)", "a", "l2", "a:l2"]);
    }
}
