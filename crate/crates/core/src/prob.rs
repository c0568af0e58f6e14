use serde::{Deserialize, Serialize};

use crate::{CalibError, Result};

/// A point on the probability simplex with at least two classes.
///
/// Construction validates the entries and divides by their sum unless that sum
/// is already one up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Builds a vector whose mass may deviate from one by at most `tol`.
    pub fn with_tolerance(values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(CalibError::invalid(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CalibError::NonFinite("probability vector"));
        }
        if let Some(v) = values.iter().find(|&&v| !(0.0..=1.0 + tol).contains(&v)) {
            return Err(CalibError::invalid(format!("probability {v} outside [0, 1]")));
        }
        let mass: f64 = values.iter().sum();
        if (mass - 1.0).abs() > tol {
            return Err(CalibError::invalid(format!(
                "probability mass {mass} deviates from 1 by more than {tol:e}"
            )));
        }
        // Vectors already normalized up to rounding are kept bit-for-bit, so
        // re-ingesting serialized probabilities is lossless.
        if (mass - 1.0).abs() <= values.len() as f64 * f64::EPSILON {
            return Ok(Self(values.into_iter().map(|v| v.min(1.0)).collect()));
        }
        Ok(Self(values.into_iter().map(|v| (v / mass).min(1.0)).collect()))
    }

    /// Builds a vector with the default ingestion tolerance of `1e-6`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(values, 1e-6)
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(CalibError::NonFinite("logits"));
        }
        Self::new(softmax(logits))
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(CalibError::invalid(format!("class {class} out of range for K={k}")));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self::new(v)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Largest probability and its class; ties go to the lowest index.
    pub fn top(&self) -> (usize, f64) {
        let mut best = (0, self.0[0]);
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    pub fn argmax(&self) -> usize {
        self.top().0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = CalibError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax of `logits / t`.
pub fn softmax_scaled(logits: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / t).collect();
    softmax(&scaled)
}
