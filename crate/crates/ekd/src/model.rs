//! Desk-scale ReLU MLP classifiers with analytic backprop, the SGD training
//! loops for teacher pretraining and student distillation, and the `EKDM`
//! checkpoint / `EKDL` logit-dump file formats.
//!
//! Every source of randomness is a `ChaCha8Rng` seeded from the config's
//! 64-bit seed: parameter initialization draws weights layer by layer in
//! row-major order, then each epoch draws one shuffle permutation. Given
//! (seed, config, dataset), every reported number is reproducible.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{AugTemperatureMode, AugmentPlan, ProvenanceRow};
use crate::binio;
use crate::data::Dataset;
use crate::energy::EnergyManifest;
use crate::error::{Error, Result};
use crate::loss::{self, Target, TemperaturePolicy};
use crate::num::{self, Matrix};

const CHECKPOINT_MAGIC: &str = "EKDM";
const LOGITS_MAGIC: &str = "EKDL";
const FORMAT_VERSION: u32 = 1;

/// Dense feed-forward classifier: ReLU on hidden layers, identity on the
/// output layer (logits). Weights are row-major (out × in) per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-parameter gradients, same shapes as the model.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(model: &MlpModel) -> ParamGrads {
        ParamGrads {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl MlpModel {
    /// He-uniform initialization: each weight drawn from
    /// U(−√(6/fan_in), √(6/fan_in)), biases zero. Draw order is layer by
    /// layer, weights in row-major order, which pins the parameters to the
    /// seed.
    pub fn new_seeded(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        if weights.len() != layer_dims.len() - 1 || biases.len() != layer_dims.len() - 1 {
            return Err(Error::ShapeMismatch("layer count mismatch".into()));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(Error::ShapeMismatch(format!("bad shapes at layer {l}")));
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(MlpModel {
            layer_dims,
            weights,
            biases,
        })
    }

    /// The inverse of `from_parts`: (layer_dims, weights, biases) clones.
    pub fn to_parts(&self) -> (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.layer_dims.clone(),
            self.weights.clone(),
            self.biases.clone(),
        )
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::ShapeMismatch(
                "model needs at least input and output dims".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::ShapeMismatch("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Activations a_0 (input), a_1..a_{L−1} (post-ReLU), a_L (logits).
    /// The ReLU mask is recoverable from the activations: a > 0 iff the
    /// pre-activation was > 0, with the subgradient at 0 taken as 0.
    fn forward_trace(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        if features.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {}, model expects {}",
                features.len(),
                self.input_dim()
            )));
        }
        let layers = self.weights.len();
        let mut trace = Vec::with_capacity(layers + 1);
        trace.push(features.to_vec());
        for l in 0..layers {
            let input = &trace[l];
            let fan_in = self.layer_dims[l];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (o, val) in out.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0.0;
                for (x, wi) in input.iter().zip(row.iter()) {
                    acc += x * wi;
                }
                *val += acc;
                if l + 1 < layers {
                    *val = val.max(0.0);
                }
            }
            trace.push(out);
        }
        Ok(trace)
    }

    /// Deterministic logits for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(features)?.pop().unwrap())
    }

    /// Logits for every dataset row, as an N×K matrix. Row i is exactly
    /// `forward(features_row(i))`.
    pub fn logit_matrix(&self, dataset: &Dataset) -> Result<Matrix> {
        let k = self.output_dim();
        let mut data = Vec::with_capacity(dataset.len() * k);
        for i in 0..dataset.len() {
            data.extend(self.forward(dataset.features_row(i))?);
        }
        Matrix::new(dataset.len(), k, data)
    }

    /// Fraction of dataset rows whose argmax logit equals the label.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for i in 0..dataset.len() {
            let logits = self.forward(dataset.features_row(i))?;
            if num::argmax(&logits) == dataset.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    fn backward_into(
        &self,
        trace: &[Vec<f64>],
        upstream: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient of length {}, model outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let layers = self.weights.len();
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let input = &trace[l];
            let fan_in = self.layer_dims[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for (g, &x) in row.iter_mut().zip(input.iter()) {
                    *g += d * x;
                }
                grads.biases[l][o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                let w = &self.weights[l];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (p, &wi) in prev.iter_mut().zip(row.iter()) {
                        *p += d * wi;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(trace[l].iter()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Exact reverse-mode parameter gradients for one sample, given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, features: &[f64], upstream_logit_grad: &[f64]) -> Result<ParamGrads> {
        let trace = self.forward_trace(features)?;
        let mut grads = ParamGrads::zeros_like(self);
        self.backward_into(&trace, upstream_logit_grad, &mut grads)?;
        Ok(grads)
    }

    /// Checkpoint bytes: magic `EKDM`, version u32, layer count u32, dims as
    /// u32s, then per layer the row-major weights followed by the biases,
    /// all 64-bit little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        binio::write_u32(&mut out, FORMAT_VERSION).unwrap();
        binio::write_u32(&mut out, self.layer_dims.len() as u32).unwrap();
        for &d in &self.layer_dims {
            binio::write_u32(&mut out, d as u32).unwrap();
        }
        for l in 0..self.weights.len() {
            for &w in &self.weights[l] {
                binio::write_f64(&mut out, w).unwrap();
            }
            for &b in &self.biases[l] {
                binio::write_f64(&mut out, b).unwrap();
            }
        }
        out
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = binio::read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim_count = binio::read_u32(r)? as usize;
        if dim_count < 2 {
            return Err(Error::Malformed("checkpoint with fewer than 2 dims".into()));
        }
        let mut layer_dims = Vec::with_capacity(dim_count);
        for _ in 0..dim_count {
            layer_dims.push(binio::read_u32(r)? as usize);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let mut w = Vec::with_capacity(pair[0] * pair[1]);
            for _ in 0..pair[0] * pair[1] {
                w.push(binio::read_f64(r)?);
            }
            let mut b = Vec::with_capacity(pair[1]);
            for _ in 0..pair[1] {
                b.push(binio::read_f64(r)?);
            }
            weights.push(w);
            biases.push(b);
        }
        MlpModel::from_parts(layer_dims, weights, biases)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let model = Self::from_reader(&mut r)?;
        let mut extra = [0u8; 1];
        match r.read(&mut extra)? {
            0 => Ok(model),
            _ => Err(Error::Malformed("trailing bytes after payload".into())),
        }
    }

    /// Hex FNV-1a fingerprint of the checkpoint bytes.
    pub fn checksum(&self) -> String {
        format!("{:016x}", binio::fnv1a64(&self.to_bytes()))
    }
}

/// Writes an N×K logit matrix: magic `EKDL`, version u32, N u64, K u32,
/// then row-major 64-bit values.
pub fn save_logit_matrix(logits: &Matrix, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(LOGITS_MAGIC.as_bytes())?;
    binio::write_u32(&mut w, FORMAT_VERSION)?;
    binio::write_u64(&mut w, logits.rows() as u64)?;
    binio::write_u32(&mut w, logits.cols() as u32)?;
    for &v in logits.data() {
        binio::write_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_logit_matrix(path: &Path) -> Result<Matrix> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    binio::expect_magic(&mut r, LOGITS_MAGIC)?;
    let version = binio::read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = binio::read_u64(&mut r)? as usize;
    let cols = binio::read_u32(&mut r)? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Malformed("logit count overflow".into()))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(binio::read_f64(&mut r)?);
    }
    Matrix::new(rows, cols, data)
}

/// SGD with momentum and L2 weight decay. One step does, per parameter:
/// v ← momentum·v + grad + weight_decay·θ, then θ ← θ − lr·v.
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: ParamGrads,
}

impl Sgd {
    pub fn new(model: &MlpModel, learning_rate: f64, momentum: f64, weight_decay: f64) -> Sgd {
        Sgd {
            learning_rate,
            momentum,
            weight_decay,
            velocity: ParamGrads::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &ParamGrads) {
        for l in 0..model.weights.len() {
            for (i, w) in model.weights[l].iter_mut().enumerate() {
                let v = &mut self.velocity.weights[l][i];
                *v = self.momentum * *v + grads.weights[l][i] + self.weight_decay * *w;
                *w -= self.learning_rate * *v;
            }
            for (i, b) in model.biases[l].iter_mut().enumerate() {
                let v = &mut self.velocity.biases[l][i];
                *v = self.momentum * *v + grads.biases[l][i] + self.weight_decay * *b;
                *b -= self.learning_rate * *v;
            }
        }
    }
}

/// Everything a training run needs beyond the dataset and architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Weight of the distillation term in the total objective.
    pub alpha: f64,
    pub policy: TemperaturePolicy,
    /// Boundary fraction used when partitioning by energy.
    pub r: f64,
    /// Temperature of the energy function itself.
    pub t_e: f64,
    /// Scale each per-sample KL term by its own T².
    pub t_squared: bool,
    pub aug_temperature_mode: AugTemperatureMode,
    pub heda: Option<AugmentPlan>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 1,
            alpha: 0.9,
            policy: TemperaturePolicy::EnergyTwoSided {
                base_t: 4.0,
                t_plus: 2,
                t_minus: -2,
            },
            r: 0.2,
            t_e: 1.0,
            t_squared: true,
            aug_temperature_mode: AugTemperatureMode::Base,
            heda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.momentum.is_finite() && self.momentum >= 0.0) {
            return Err(Error::Config("momentum must be nonnegative".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.r > 0.0 && self.r <= 0.5) {
            return Err(Error::InvalidFraction(self.r));
        }
        num::check_temperature(self.t_e)?;
        self.policy.validate()?;
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn final_eval_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.eval_accuracy)
    }
}

/// Shared minibatch SGD loop. `objective` maps (batch sample indices, student
/// logits for the batch) to (batch mean loss, upstream logit gradients).
fn train_loop<F>(
    model: &mut MlpModel,
    dataset: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut objective: F,
) -> Result<TrainHistory>
where
    F: FnMut(&[usize], &Matrix) -> Result<(f64, Matrix)>,
{
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut sgd = Sgd::new(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut grads = ParamGrads::zeros_like(model);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut traces = Vec::with_capacity(batch.len());
            let mut logit_rows = Vec::with_capacity(batch.len());
            for &idx in batch {
                let trace = model.forward_trace(dataset.features_row(idx))?;
                let logits = trace.last().unwrap();
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { epoch });
                }
                logit_rows.push(logits.clone());
                traces.push(trace);
            }
            let student_logits = Matrix::from_rows(logit_rows)?;
            let (batch_loss, upstream) = objective(batch, &student_logits)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += batch_loss * batch.len() as f64;

            grads.reset();
            for (row, trace) in traces.iter().enumerate() {
                model.backward_into(trace, upstream.row(row), &mut grads)?;
            }
            sgd.step(model, &grads);
        }
        let train_loss = loss_sum / n as f64;
        let train_accuracy = model.accuracy(dataset)?;
        let eval_accuracy = match eval {
            Some(ds) => Some(model.accuracy(ds)?),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            eval_accuracy,
        });
    }
    Ok(history)
}

/// Trains a teacher with plain cross-entropy SGD and returns the frozen
/// model together with its logits over the full training set (the input to
/// energy scoring).
pub fn pretrain_teacher(
    train: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, Matrix)> {
    cfg.validate()?;
    let mut dims = vec![train.dim()];
    dims.extend_from_slice(hidden);
    dims.push(train.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::new_seeded(&dims, cfg.seed)?;
    let targets: Vec<Target> = (0..train.len()).map(|i| Target::Hard(train.label(i))).collect();
    train_loop(&mut model, train, None, cfg, &mut rng, |batch, logits| {
        let batch_targets: Vec<Target> = batch.iter().map(|&i| targets[i].clone()).collect();
        loss::supervised_objective(logits, &batch_targets)
    })?;
    let logits = model.logit_matrix(train)?;
    Ok((model, logits))
}

/// Trains a student against a frozen teacher with per-sample temperatures
/// from the manifest.
///
/// `train` may contain appended augmented rows; `provenance` must then carry
/// one row per appended sample, in order. Augmented samples use mixed label
/// targets reconstructed from provenance, teacher logits from a fresh
/// forward pass, and the temperature selected by `cfg.aug_temperature_mode`.
pub fn distill_student(
    train: &Dataset,
    provenance: &[ProvenanceRow],
    eval: Option<&Dataset>,
    teacher: &MlpModel,
    manifest: &EnergyManifest,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if teacher.input_dim() != train.dim() || teacher.output_dim() != train.classes() {
        return Err(Error::ShapeMismatch(format!(
            "teacher maps {}→{}, dataset is {}-dim with {} classes",
            teacher.input_dim(),
            teacher.output_dim(),
            train.dim(),
            train.classes()
        )));
    }
    let n_total = train.len();
    let n_orig = manifest.n;
    if n_orig + provenance.len() != n_total {
        return Err(Error::IdMismatch(format!(
            "manifest covers {n_orig} samples and provenance {} more, dataset has {n_total}",
            provenance.len()
        )));
    }
    for (idx, row) in manifest.rows.iter().enumerate() {
        if row.sample_id != idx as u64 {
            return Err(Error::IdMismatch(format!(
                "manifest ids are not contiguous at row {idx}"
            )));
        }
    }

    let mut targets = Vec::with_capacity(n_total);
    let mut temperatures = Vec::with_capacity(n_total);
    for i in 0..n_orig {
        targets.push(Target::Hard(train.label(i)));
        temperatures.push(manifest.temperature_of(i as u64)?);
    }
    for (idx, row) in provenance.iter().enumerate() {
        let expected_id = (n_orig + idx) as u64;
        if row.new_id != expected_id {
            return Err(Error::IdMismatch(format!(
                "provenance row {idx} has id {}, expected {expected_id}",
                row.new_id
            )));
        }
        let origin = &row.origin;
        if origin.src_a >= n_orig as u64 || origin.src_b >= n_orig as u64 {
            return Err(Error::IdMismatch(format!(
                "augmented sample {} mixes non-original sources",
                row.new_id
            )));
        }
        let label_a = train.label(origin.src_a as usize);
        let label_b = train.label(origin.src_b as usize);
        let target = if label_a == label_b {
            Target::Mixed(vec![(label_a, 1.0)])
        } else {
            Target::Mixed(vec![
                (label_a, origin.lambda),
                (label_b, 1.0 - origin.lambda),
            ])
        };
        targets.push(target);
        let temperature = match cfg.aug_temperature_mode {
            AugTemperatureMode::Base => cfg.policy.base_temperature(),
            AugTemperatureMode::Source => {
                let dominant = if origin.lambda >= 0.5 {
                    origin.src_a
                } else {
                    origin.src_b
                };
                manifest.temperature_of(dominant)?
            }
        };
        temperatures.push(temperature);
    }

    // The teacher is frozen: one forward pass over the (possibly augmented)
    // training set serves every epoch.
    let teacher_logits = teacher.logit_matrix(train)?;

    let mut dims = vec![train.dim()];
    dims.extend_from_slice(hidden);
    dims.push(train.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = MlpModel::new_seeded(&dims, cfg.seed)?;
    let history = train_loop(
        &mut student,
        train,
        eval,
        cfg,
        &mut rng,
        |batch, student_logits| {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| teacher_logits.row(i).to_vec()).collect();
            let z_t = Matrix::from_rows(rows)?;
            let batch_targets: Vec<Target> = batch.iter().map(|&i| targets[i].clone()).collect();
            let batch_temps: Vec<f64> = batch.iter().map(|&i| temperatures[i]).collect();
            loss::total_objective_targets(
                &z_t,
                student_logits,
                &batch_targets,
                &batch_temps,
                cfg.alpha,
                cfg.t_squared,
            )
        },
    )?;
    Ok((student, history))
}

/// Supervised training with the same loop, initialization, and shuffle
/// schedule as `distill_student`; the reference for alpha = 0 equivalence.
pub fn train_supervised(
    train: &Dataset,
    eval: Option<&Dataset>,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    let mut dims = vec![train.dim()];
    dims.extend_from_slice(hidden);
    dims.push(train.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::new_seeded(&dims, cfg.seed)?;
    let targets: Vec<Target> = (0..train.len()).map(|i| Target::Hard(train.label(i))).collect();
    let history = train_loop(&mut model, train, eval, cfg, &mut rng, |batch, logits| {
        let batch_targets: Vec<Target> = batch.iter().map(|&i| targets[i].clone()).collect();
        loss::supervised_objective(logits, &batch_targets)
    })?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blob_split, BlobSpec};
    use crate::energy::{build_manifest, partition, rank_dataset};
    use approx::assert_relative_eq;

    fn blob_spec(seed: u64, noise: f64) -> BlobSpec {
        BlobSpec {
            classes: 3,
            dim: 4,
            class_separation: 4.0,
            noise_sigma: noise,
            seed,
        }
    }

    fn quick_cfg(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let dims = vec![4usize, 8, 3];
        let weights = vec![vec![0.0; 32], vec![0.0; 24]];
        let biases = vec![vec![0.0; 8], vec![0.0; 3]];
        let model = MlpModel::from_parts(dims, weights, biases).unwrap();
        let logits = model.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine_map() {
        // 2→2 linear model checked against the matrix product by hand.
        let model = MlpModel::from_parts(
            vec![2, 2],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![vec![0.5, -0.5]],
        )
        .unwrap();
        let out = model.forward(&[2.0, -1.0]).unwrap();
        assert_eq!(out, vec![1.0 * 2.0 + -2.0 + 0.5, 3.0 * 2.0 + -4.0 - 0.5]);
    }

    #[test]
    fn forward_rejects_bad_shape() {
        let model = MlpModel::new_seeded(&[4, 8, 3], 0).unwrap();
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_zero_upstream_and_linearity() {
        let model = MlpModel::new_seeded(&[3, 6, 2], 5).unwrap();
        let x = [0.3, -0.7, 1.2];
        let zeros = model.backward(&x, &[0.0, 0.0]).unwrap();
        assert!(zeros.weights.iter().flatten().all(|&g| g == 0.0));
        assert!(zeros.biases.iter().flatten().all(|&g| g == 0.0));

        let g1 = model.backward(&x, &[0.4, -1.1]).unwrap();
        let g3 = model.backward(&x, &[1.2, -3.3000000000000003]).unwrap();
        for (a, b) in g1.weights.iter().flatten().zip(g3.weights.iter().flatten()) {
            assert_relative_eq!(3.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Full parameter gradient of a cross-entropy loss on a 2-16-3 model.
        let mut model = MlpModel::new_seeded(&[2, 16, 3], 11).unwrap();
        let x = [0.8, -1.3];
        let label = 2usize;
        let loss_of = |m: &MlpModel| {
            let z = crate::num::Vector::new(m.forward(&x).unwrap()).unwrap();
            num::cross_entropy(&z, label).unwrap()
        };
        let z = crate::num::Vector::new(model.forward(&x).unwrap()).unwrap();
        let upstream = num::cross_entropy_grad(&z, label).unwrap();
        let grads = model.backward(&x, &upstream).unwrap();

        let h = 1e-6;
        for l in 0..model.weights.len() {
            for i in 0..model.weights[l].len() {
                let orig = model.weights[l][i];
                model.weights[l][i] = orig + h;
                let up = loss_of(&model);
                model.weights[l][i] = orig - h;
                let down = loss_of(&model);
                model.weights[l][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.weights[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "layer {l} weight {i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn sgd_step_replayed_by_hand() {
        let mut model = MlpModel::from_parts(
            vec![1, 1],
            vec![vec![2.0]],
            vec![vec![1.0]],
        )
        .unwrap();
        let mut sgd = Sgd::new(&model, 0.1, 0.9, 0.01);
        let grads = ParamGrads {
            weights: vec![vec![0.5]],
            biases: vec![vec![-0.25]],
        };
        // v_w = 0.9*0 + 0.5 + 0.01*2.0 = 0.52; w = 2.0 - 0.1*0.52 = 1.948
        // v_b = 0.9*0 - 0.25 + 0.01*1.0 = -0.24; b = 1.0 + 0.1*0.24 = 1.024
        sgd.step(&mut model, &grads);
        assert_relative_eq!(model.weights[0][0], 1.948, epsilon = 1e-12);
        assert_relative_eq!(model.biases[0][0], 1.024, epsilon = 1e-12);
        // Second step exercises the momentum term.
        // v_w = 0.9*0.52 + 0.5 + 0.01*1.948 = 0.98748; w = 1.948 - 0.098748
        sgd.step(&mut model, &grads);
        assert_relative_eq!(model.weights[0][0], 1.849252, epsilon = 1e-12);
    }

    #[test]
    fn pretrain_reaches_high_accuracy_on_separable_blobs() {
        for seed in [1u64, 2] {
            let (train, _) = make_blob_split(&blob_spec(seed, 0.3), 100, 10).unwrap();
            let (teacher, logits) =
                pretrain_teacher(&train, &[16], &quick_cfg(seed, 30)).unwrap();
            assert!(teacher.accuracy(&train).unwrap() >= 0.99);
            assert_eq!(logits.rows(), train.len());
            assert_eq!(logits.cols(), train.classes());
            // Dump must match forward recomputation exactly.
            for i in 0..train.len() {
                assert_eq!(logits.row(i), teacher.forward(train.features_row(i)).unwrap());
            }
        }
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (train, _) = make_blob_split(&blob_spec(3, 0.5), 50, 10).unwrap();
        let (a, _) = pretrain_teacher(&train, &[8], &quick_cfg(9, 5)).unwrap();
        let (b, _) = pretrain_teacher(&train, &[8], &quick_cfg(9, 5)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let (c, _) = pretrain_teacher(&train, &[8], &quick_cfg(10, 5)).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn pretrain_reports_divergence_epoch() {
        let (train, _) = make_blob_split(&blob_spec(5, 0.5), 50, 10).unwrap();
        let mut cfg = quick_cfg(1, 10);
        cfg.learning_rate = 1e12;
        match pretrain_teacher(&train, &[8], &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ekdm");
        let model = MlpModel::new_seeded(&[4, 12, 3], 77).unwrap();
        model.save(&path).unwrap();
        let loaded = MlpModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.checksum(), model.checksum());

        let bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(MlpModel::load(&path), Err(Error::BadMagic { .. })));

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(MlpModel::load(&path), Err(Error::Truncated)));
    }

    #[test]
    fn logit_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logits.ekdl");
        let m = Matrix::from_rows(vec![vec![1.5, -2.25], vec![0.0, 1e-3]]).unwrap();
        save_logit_matrix(&m, &path).unwrap();
        let loaded = load_logit_matrix(&path).unwrap();
        assert_eq!(loaded, m);
    }

    fn distill_setup(
        seed: u64,
    ) -> (Dataset, Dataset, MlpModel, EnergyManifest) {
        let (train, test) = make_blob_split(&blob_spec(seed, 0.8), 60, 15).unwrap();
        let (teacher, logits) = pretrain_teacher(&train, &[16], &quick_cfg(seed, 20)).unwrap();
        let records = rank_dataset(&logits, 1.0).unwrap();
        let plan = partition(&records, 0.2).unwrap();
        let policy = TemperaturePolicy::EnergyTwoSided {
            base_t: 4.0,
            t_plus: 2,
            t_minus: -2,
        };
        let manifest = build_manifest(
            &plan,
            &records,
            &policy,
            train.classes(),
            1.0,
            &teacher.checksum(),
        )
        .unwrap();
        (train, test, teacher, manifest)
    }

    #[test]
    fn distillation_converges_and_freezes_teacher() {
        let (train, test, teacher, manifest) = distill_setup(13);
        let before = teacher.checksum();
        let cfg = quick_cfg(21, 25);
        let (student, history) =
            distill_student(&train, &[], Some(&test), &teacher, &manifest, &[8], &cfg).unwrap();
        assert_eq!(teacher.checksum(), before);
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.final_train_loss().unwrap();
        assert!(last.is_finite() && last < first);
        assert!(history.epochs.iter().all(|e| e.train_loss.is_finite()));
        assert!(student.accuracy(&test).unwrap() > 0.5);
        assert_eq!(history.epochs.len(), 25);
    }

    #[test]
    fn alpha_zero_matches_supervised_run_exactly() {
        let (train, test, teacher, manifest) = distill_setup(17);
        let mut cfg = quick_cfg(31, 8);
        cfg.alpha = 0.0;
        let (distilled, _) =
            distill_student(&train, &[], Some(&test), &teacher, &manifest, &[8], &cfg).unwrap();
        let (supervised, _) = train_supervised(&train, Some(&test), &[8], &cfg).unwrap();
        assert_eq!(distilled.checksum(), supervised.checksum());
    }

    #[test]
    fn distill_rejects_manifest_mismatch() {
        let (train, _, teacher, mut manifest) = distill_setup(19);
        manifest.n -= 1;
        manifest.rows.pop();
        let cfg = quick_cfg(1, 2);
        assert!(matches!(
            distill_student(&train, &[], None, &teacher, &manifest, &[8], &cfg),
            Err(Error::IdMismatch(_))
        ));
    }
}
