//! Probability vectors: attention over tokens and predictions over classes.

use crate::error::{Error, Result};

/// Allowed deviation of a probability vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

fn check_simplex(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::NotSimplex("empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::NotSimplex(format!("entry {i} = {}", v[i])));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NotSimplex(format!("sum = {s}")));
    }
    Ok(())
}

/// Non-negative weights over visual tokens summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector(Vec<f64>);

impl AttentionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights)?;
        Ok(AttentionVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        AttentionVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for AttentionVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Probability of each class.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution(Vec<f64>);

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs)?;
        Ok(PredictionDistribution(probs))
    }

    /// Empirical frequencies `counts[j] / total`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::ZeroVector);
        }
        let m = total as f64;
        PredictionDistribution::new(counts.iter().map(|&c| c as f64 / m).collect())
    }

    /// Numerically stable softmax of `logits`.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        let mut out = logits.to_vec();
        softmax_in_place(&mut out);
        PredictionDistribution::new(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the smaller index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Largest and second-largest probabilities. A single class reports `p2 = 0`.
    pub fn top_two(&self) -> (f64, f64) {
        let mut p1 = f64::NEG_INFINITY;
        let mut p2 = 0.0;
        for &p in &self.0 {
            if p > p1 {
                if p1.is_finite() {
                    p2 = p1;
                }
                p1 = p;
            } else if p > p2 {
                p2 = p;
            }
        }
        (p1, p2)
    }
}

impl AsRef<[f64]> for PredictionDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Rescales `v` to sum to one.
///
/// Negative entries are clamped to zero first; fused or averaged maps can
/// dip below zero through floating-point arithmetic and the top-k
/// certificate needs a genuine probability vector.
pub fn normalize_simplex(v: &[f64]) -> Result<AttentionVector> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clamped.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroVector);
    }
    AttentionVector::new(clamped.into_iter().map(|x| x / s).collect())
}
