//! Numerically stable primitives: log-sum-exp, temperature softmax, KL
//! divergence, cross-entropy, and their analytic gradients.
//!
//! Everything here is a pure function over immutable inputs and accumulates
//! in `f64`. KL divergence near its minimum is cancellation-prone, so no
//! 32-bit shortcuts are taken anywhere in this module.

use std::ops::Deref;

use crate::error::{Error, Result};

/// A finite-valued vector. Construction rejects NaN and infinities, so every
/// downstream operation can assume finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Vector(values))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major matrix of finite values with checked shape arithmetic.
/// An N×K matrix of pre-softmax scores doubles as the logit table for a
/// dataset under one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows.checked_mul(cols).ok_or(Error::Truncated)? {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "ragged rows: expected {} columns, got {}",
                    cols,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A probability distribution over classes: entries in [0, 1] summing to 1
/// within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Malformed(
                "distribution entries must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Malformed(format!(
                "distribution sums to {total}, expected 1"
            )));
        }
        Ok(Distribution(probs))
    }

    /// Wraps probabilities already known to be normalized (softmax outputs).
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        Distribution(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Distribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp_slice(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log Σ exp(z_j) via max-shift; never overflows for |z_j| ≤ 1e6.
pub fn log_sum_exp(z: &Vector) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(log_sum_exp_slice(z))
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidTemperature(t));
    }
    Ok(())
}

pub(crate) fn softmax_t_slice(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| ((v - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Temperature softmax: probs_j = exp(z_j/T) / Σ_k exp(z_k/T).
///
/// The argmax of the output equals the argmax of `z` for every T > 0.
pub fn softmax_t(z: &Vector, t: f64) -> Result<Distribution> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_temperature(t)?;
    Ok(Distribution::from_normalized(softmax_t_slice(z, t)))
}

/// Σ p_j ln(p_j/q_j) with the 0·ln 0 := 0 convention. Nonnegative, and zero
/// exactly when p = q.
pub fn kl_div(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "kl_div lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_div_slices(p, q))
}

pub(crate) fn kl_div_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            total += pi * (pi.ln() - qi.ln());
        }
    }
    total
}

/// Gradient of KL(σ(z_t/T) ‖ σ(z_s/T)) with respect to the student logits:
/// (σ(z_s/T) − σ(z_t/T)) / T per component.
pub fn kl_grad_wrt_student_logits(z_t: &Vector, z_s: &Vector, t: f64) -> Result<Vector> {
    if z_t.len() != z_s.len() {
        return Err(Error::ShapeMismatch(format!(
            "logit lengths {} vs {}",
            z_t.len(),
            z_s.len()
        )));
    }
    if z_t.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_temperature(t)?;
    let p_t = softmax_t_slice(z_t, t);
    let p_s = softmax_t_slice(z_s, t);
    let grad = p_s
        .iter()
        .zip(p_t.iter())
        .map(|(&s, &te)| (s - te) / t)
        .collect();
    Ok(Vector(grad))
}

/// −ln softmax(z)[label], computed as log_sum_exp(z) − z[label].
pub fn cross_entropy(z: &Vector, label: usize) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    Ok(log_sum_exp_slice(z) - z[label])
}

/// Gradient of `cross_entropy` with respect to the logits: σ(z) − onehot(label).
pub fn cross_entropy_grad(z: &Vector, label: usize) -> Result<Vector> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let mut grad = softmax_t_slice(z, 1.0);
    grad[label] -= 1.0;
    Ok(Vector(grad))
}

/// Cross-entropy against a mixed label: −Σ_j w_j ln softmax(z)_j.
/// Reduces to `cross_entropy` when the weights are a one-hot vector.
pub fn cross_entropy_weighted(z: &Vector, weights: &Distribution) -> Result<f64> {
    if z.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "logit length {} vs weight length {}",
            z.len(),
            weights.len()
        )));
    }
    let lse = log_sum_exp_slice(z);
    let weighted: f64 = z.iter().zip(weights.iter()).map(|(&zi, &wi)| wi * zi).sum();
    Ok(lse - weighted)
}

/// Gradient of `cross_entropy_weighted`: σ(z) − w.
pub fn cross_entropy_weighted_grad(z: &Vector, weights: &Distribution) -> Result<Vector> {
    if z.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "logit length {} vs weight length {}",
            z.len(),
            weights.len()
        )));
    }
    let mut grad = softmax_t_slice(z, 1.0);
    for (g, &w) in grad.iter_mut().zip(weights.iter()) {
        *g -= w;
    }
    Ok(Vector(grad))
}

/// Shannon entropy −Σ p ln p of a distribution, with 0·ln 0 := 0.
pub fn entropy(p: &Distribution) -> f64 {
    p.iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| -pi * pi.ln())
        .sum()
}
