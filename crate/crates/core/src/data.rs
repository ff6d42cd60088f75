//! Observation sets and coefficient vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the linear log-odds `f(x) = intercept + slopes' x`.
///
/// The intercept is stored apart from the slopes; feature matrices never
/// carry an intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl ModelParams {
    pub fn new(intercept: f64, slopes: Vec<f64>) -> Self {
        Self { intercept, slopes }
    }

    pub fn zeros(p: usize) -> Self {
        Self::new(0.0, vec![0.0; p])
    }

    /// Builds parameters from `[intercept, slopes...]`.
    pub fn from_slice(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "parameter vector needs an intercept");
        Self::new(values[0], values[1..].to_vec())
    }

    /// Number of slopes.
    pub fn dim(&self) -> usize {
        self.slopes.len()
    }

    /// `[intercept, slopes...]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.slopes.len() + 1);
        v.push(self.intercept);
        v.extend_from_slice(&self.slopes);
        v
    }

    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.slopes.len());
        self.intercept
            + self
                .slopes
                .iter()
                .zip(x)
                .map(|(b, xi)| b * xi)
                .sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.slopes.iter().all(|b| b.is_finite())
    }

    pub fn check_dim(&self, p: usize) -> Result<()> {
        if self.slopes.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: self.slopes.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &ModelParams) -> ModelParams {
        assert_eq!(self.dim(), other.dim());
        ModelParams::new(
            self.intercept + other.intercept,
            self.slopes
                .iter()
                .zip(&other.slopes)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        assert_eq!(self.dim(), other.dim());
        ModelParams::new(
            self.intercept - other.intercept,
            self.slopes
                .iter()
                .zip(&other.slopes)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> ModelParams {
        ModelParams::new(
            self.intercept * k,
            self.slopes.iter().map(|b| b * k).collect(),
        )
    }

    /// Euclidean norm over intercept and slopes.
    pub fn norm(&self) -> f64 {
        (self.intercept * self.intercept + self.slopes.iter().map(|b| b * b).sum::<f64>()).sqrt()
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.sub(other).norm()
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.sub(other)
            .to_vec()
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Feature matrix (row-major, no intercept column) with binary labels and
/// per-row weights and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    p: usize,
    features: Vec<f64>,
    labels: Vec<bool>,
    weights: Vec<f64>,
    offsets: Vec<f64>,
}

impl ObservationSet {
    /// Unit weights and zero offsets. `features` is row-major with `p`
    /// columns.
    pub fn new(features: Vec<f64>, p: usize, labels: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("observation set is empty".into()));
        }
        if features.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            p,
            features,
            labels,
            weights: vec![1.0; n],
            offsets: vec![0.0; n],
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                actual: offsets.len(),
            });
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("offsets"));
        }
        self.offsets = offsets;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact rejects a zero chunk size
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn n_cases(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rows `idx` in the given order, with their weights and offsets.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptySubsample);
        }
        let mut features = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Ok(Self {
            p: self.p,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            offsets: idx.iter().map(|&i| self.offsets[i]).collect(),
        })
    }

    /// All rows except `excluded` (which must be sorted ascending).
    pub fn without_rows(&self, excluded: &[usize]) -> Result<Self> {
        let mut keep = Vec::with_capacity(self.n().saturating_sub(excluded.len()));
        let mut e = excluded.iter().peekable();
        for i in 0..self.n() {
            if e.peek() == Some(&&i) {
                e.next();
            } else {
                keep.push(i);
            }
        }
        self.subset(&keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(ObservationSet::new(vec![], 1, vec![]).is_err());
        assert!(ObservationSet::new(vec![1.0], 2, vec![true]).is_err());
        assert!(ObservationSet::new(vec![f64::NAN], 1, vec![true]).is_err());
        let d = ObservationSet::new(vec![1.0, 2.0], 1, vec![true, false]).unwrap();
        assert!(d.clone().with_weights(vec![1.0, 0.0]).is_err());
        assert!(d.clone().with_offsets(vec![1.0]).is_err());
    }

    #[test]
    fn subset_and_exclusion() {
        let d = ObservationSet::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![false, true, false, true])
            .unwrap();
        let s = d.subset(&[3, 1]).unwrap();
        assert_eq!(s.features(), &[3.0, 1.0]);
        let w = d.without_rows(&[0, 2]).unwrap();
        assert_eq!(w.features(), &[1.0, 3.0]);
        assert_eq!(w.n_cases(), 2);
    }

    #[test]
    fn zero_feature_rows() {
        let d = ObservationSet::new(vec![], 0, vec![true, false]).unwrap();
        assert_eq!(d.rows().count(), 2);
        assert!(d.row(1).is_empty());
    }
}
