//! Distillation objectives: constant-temperature KD, energy-scored KD with
//! per-sample temperatures, and segment-wise temperature gradation.
//!
//! Per-sample KL terms are scaled by T² by default (the usual convention
//! that keeps gradient magnitudes comparable across temperatures); the
//! `t_squared` flag turns this off so both readings of the loss can be
//! reproduced.

use crate::energy::Bucket;
use crate::error::{Error, Result};
use crate::num::{
    self, cross_entropy, cross_entropy_grad, kl_div_slices, softmax_t_slice, Matrix, Vector,
};

/// How a temperature is assigned to each training sample.
#[derive(Debug, Clone, PartialEq)]
pub enum TemperaturePolicy {
    /// One temperature for every sample.
    Constant { base_t: f64 },
    /// Raise the temperature for low-energy (confident) samples by `t_plus`
    /// and lower it for high-energy (uncertain) samples by `t_minus`;
    /// everything in between keeps `base_t`. `t_minus` is stored signed, so
    /// a lowering offset is a negative integer.
    EnergyTwoSided { base_t: f64, t_plus: i64, t_minus: i64 },
    /// Split the energy-ranked dataset into `segments` equal slices and
    /// assign evenly spaced temperatures from `t_min` (lowest energy) to
    /// `t_max` (highest rank).
    Gradation {
        segments: usize,
        t_min: f64,
        t_max: f64,
    },
}

impl TemperaturePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemperaturePolicy::Constant { base_t } => {
                num::check_temperature(base_t)?;
            }
            TemperaturePolicy::EnergyTwoSided {
                base_t,
                t_plus,
                t_minus,
            } => {
                num::check_temperature(base_t)?;
                for offset in [t_plus, t_minus] {
                    let t = base_t + offset as f64;
                    if t <= 0.0 {
                        return Err(Error::InvalidTemperature(t));
                    }
                }
            }
            TemperaturePolicy::Gradation {
                segments,
                t_min,
                t_max,
            } => {
                num::check_temperature(t_min)?;
                num::check_temperature(t_max)?;
                if t_min > t_max {
                    return Err(Error::InvalidPolicy(format!(
                        "gradation needs t_min <= t_max, got {t_min} > {t_max}"
                    )));
                }
                if segments < 2 {
                    return Err(Error::InvalidPolicy(format!(
                        "gradation needs at least 2 segments, got {segments}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Temperature for a sample given its bucket and ascending energy rank
    /// (1-based) in a dataset of `n` samples.
    pub fn assign_temperature(&self, bucket: Bucket, rank: usize, n: usize) -> Result<f64> {
        self.validate()?;
        if rank == 0 || rank > n {
            return Err(Error::ShapeMismatch(format!(
                "rank {rank} outside 1..={n}"
            )));
        }
        let t = match *self {
            TemperaturePolicy::Constant { base_t } => base_t,
            TemperaturePolicy::EnergyTwoSided {
                base_t,
                t_plus,
                t_minus,
            } => match bucket {
                Bucket::Low => base_t + t_plus as f64,
                Bucket::High => base_t + t_minus as f64,
                Bucket::Else => base_t,
            },
            TemperaturePolicy::Gradation {
                segments,
                t_min,
                t_max,
            } => {
                let segment = ((rank - 1) * segments / n).min(segments - 1);
                t_min + segment as f64 * (t_max - t_min) / (segments - 1) as f64
            }
        };
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidTemperature(t));
        }
        Ok(t)
    }

    /// The temperature used for samples outside the ranked set (e.g. freshly
    /// augmented samples, which have no energy rank).
    pub fn base_temperature(&self) -> f64 {
        match *self {
            TemperaturePolicy::Constant { base_t } => base_t,
            TemperaturePolicy::EnergyTwoSided { base_t, .. } => base_t,
            TemperaturePolicy::Gradation { t_min, t_max, .. } => 0.5 * (t_min + t_max),
        }
    }

    /// Compact descriptor recorded in manifest headers and echoed configs.
    pub fn descriptor(&self) -> String {
        match *self {
            TemperaturePolicy::Constant { base_t } => format!("constant(T={base_t})"),
            TemperaturePolicy::EnergyTwoSided {
                base_t,
                t_plus,
                t_minus,
            } => format!("energy_two_sided(T={base_t},T_plus={t_plus},T_minus={t_minus})"),
            TemperaturePolicy::Gradation {
                segments,
                t_min,
                t_max,
            } => format!("gradation(segments={segments},T_min={t_min},T_max={t_max})"),
        }
    }
}

/// Supervised target for one sample: a plain class index, or a sparse mix of
/// class weights produced by label-mixing augmentation.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Hard(usize),
    Mixed(Vec<(usize, f64)>),
}

fn supervised_loss_grad(z: &Vector, target: &Target) -> Result<(f64, Vector)> {
    match target {
        Target::Hard(label) => Ok((cross_entropy(z, *label)?, cross_entropy_grad(z, *label)?)),
        Target::Mixed(weights) => {
            let mut total_w = 0.0;
            for &(class, w) in weights {
                if class >= z.len() {
                    return Err(Error::LabelOutOfRange {
                        label: class,
                        classes: z.len(),
                    });
                }
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Malformed(format!("mixed label weight {w}")));
                }
                total_w += w;
            }
            if (total_w - 1.0).abs() > 1e-9 {
                return Err(Error::Malformed(format!(
                    "mixed label weights sum to {total_w}"
                )));
            }
            let lse = num::log_sum_exp(z)?;
            let mut loss = lse;
            let mut grad = softmax_t_slice(z, 1.0);
            for &(class, w) in weights {
                loss -= w * z[class];
                grad[class] -= w;
            }
            Ok((loss, Vector::new(grad)?))
        }
    }
}

/// KL(σ(z_t/T) ‖ σ(z_s/T)) for one sample, with its gradient with respect to
/// the student logits. With `t_squared` both are multiplied by T².
pub fn kd_loss_constant(
    z_t: &Vector,
    z_s: &Vector,
    temperature: f64,
    t_squared: bool,
) -> Result<(f64, Vector)> {
    if z_t.len() != z_s.len() {
        return Err(Error::ShapeMismatch(format!(
            "teacher logits {} vs student logits {}",
            z_t.len(),
            z_s.len()
        )));
    }
    if z_t.is_empty() {
        return Err(Error::EmptyInput);
    }
    num::check_temperature(temperature)?;
    let scale = if t_squared {
        temperature * temperature
    } else {
        1.0
    };
    let p_t = softmax_t_slice(z_t, temperature);
    let p_s = softmax_t_slice(z_s, temperature);
    let loss = scale * kl_div_slices(&p_t, &p_s);
    let grad: Vec<f64> = p_s
        .iter()
        .zip(p_t.iter())
        .map(|(&s, &t)| scale * (s - t) / temperature)
        .collect();
    Ok((loss, Vector::new(grad)?))
}

/// Batch distillation loss with one temperature per sample.
#[derive(Debug, Clone)]
pub struct DistillLossBatch {
    /// Per-sample loss values (each ≥ 0).
    pub per_sample: Vec<f64>,
    /// The temperature each sample was evaluated at.
    pub temperatures: Vec<f64>,
    /// Sequential mean of `per_sample`, in sample order.
    pub mean: f64,
    /// Gradient of the batch mean with respect to every student logit.
    pub grad: Matrix,
}

/// Per-sample-temperature KD loss over a batch: sample i contributes
/// KL(σ(z_t,i/T_i) ‖ σ(z_s,i/T_i)) at its own temperature T_i.
pub fn energy_kd_loss(
    z_t: &Matrix,
    z_s: &Matrix,
    temperatures: &[f64],
    t_squared: bool,
) -> Result<DistillLossBatch> {
    if z_t.rows() != z_s.rows() || z_t.cols() != z_s.cols() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {}x{} vs student {}x{}",
            z_t.rows(),
            z_t.cols(),
            z_s.rows(),
            z_s.cols()
        )));
    }
    if z_t.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if temperatures.len() != z_t.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} temperatures",
            z_t.rows(),
            temperatures.len()
        )));
    }
    let n = z_t.rows();
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = Matrix::zeros(n, z_t.cols());
    for (i, &t) in temperatures.iter().enumerate() {
        num::check_temperature(t)?;
        let scale = if t_squared { t * t } else { 1.0 };
        let p_t = softmax_t_slice(z_t.row(i), t);
        let p_s = softmax_t_slice(z_s.row(i), t);
        per_sample.push(scale * kl_div_slices(&p_t, &p_s));
        let row = grad.row_mut(i);
        for ((g, &s), &te) in row.iter_mut().zip(p_s.iter()).zip(p_t.iter()) {
            *g = scale * (s - te) / t / n as f64;
        }
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(DistillLossBatch {
        per_sample,
        temperatures: temperatures.to_vec(),
        mean,
        grad,
    })
}

/// Full training objective: (1−alpha)·mean cross-entropy + alpha·mean KD
/// loss, with the matching gradient for every student logit.
pub fn total_objective(
    z_t: &Matrix,
    z_s: &Matrix,
    labels: &[usize],
    temperatures: &[f64],
    alpha: f64,
    t_squared: bool,
) -> Result<(f64, Matrix)> {
    let targets: Vec<Target> = labels.iter().map(|&l| Target::Hard(l)).collect();
    total_objective_targets(z_t, z_s, &targets, temperatures, alpha, t_squared)
}

/// Mean cross-entropy over a batch with its per-logit gradient. Accumulates
/// in the same order as `total_objective_targets`, so a distillation run at
/// alpha = 0 reproduces supervised training bit for bit.
pub fn supervised_objective(z: &Matrix, targets: &[Target]) -> Result<(f64, Matrix)> {
    if targets.len() != z.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} targets",
            z.rows(),
            targets.len()
        )));
    }
    if z.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let n = z.rows();
    let mut ce_sum = 0.0;
    let mut grad = Matrix::zeros(n, z.cols());
    for (i, target) in targets.iter().enumerate() {
        let zi = Vector::new(z.row(i).to_vec())?;
        let (ce, ce_grad) = supervised_loss_grad(&zi, target)?;
        ce_sum += ce;
        let row = grad.row_mut(i);
        for j in 0..row.len() {
            row[j] = ce_grad[j] / n as f64;
        }
    }
    Ok((ce_sum / n as f64, grad))
}

/// `total_objective` generalized to mixed-label targets.
pub fn total_objective_targets(
    z_t: &Matrix,
    z_s: &Matrix,
    targets: &[Target],
    temperatures: &[f64],
    alpha: f64,
    t_squared: bool,
) -> Result<(f64, Matrix)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if targets.len() != z_s.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} targets",
            z_s.rows(),
            targets.len()
        )));
    }
    let kd = energy_kd_loss(z_t, z_s, temperatures, t_squared)?;
    let n = z_s.rows();
    let mut ce_sum = 0.0;
    let mut grad = Matrix::zeros(n, z_s.cols());
    for (i, target) in targets.iter().enumerate() {
        let z = Vector::new(z_s.row(i).to_vec())?;
        let (ce, ce_grad) = supervised_loss_grad(&z, target)?;
        ce_sum += ce;
        let row = grad.row_mut(i);
        for j in 0..row.len() {
            row[j] = (1.0 - alpha) * ce_grad[j] / n as f64 + alpha * kd.grad.row(i)[j];
        }
    }
    let loss = (1.0 - alpha) * ce_sum / n as f64 + alpha * kd.mean;
    Ok((loss, grad))
}
