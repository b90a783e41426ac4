//! Selective data augmentation: split a dataset by energy bucket, apply
//! CutMix or MixUp to the high-energy subset only, and append the augmented
//! samples to the training set.
//!
//! Low-energy-only, mixed, and whole-dataset sources exist as experiment
//! flags for comparison runs; the production path augments the high-energy
//! bucket. Generation derives one `ChaCha8Rng` stream per augmented sample
//! from (seed, sample index), so output never depends on evaluation order.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::energy::{Bucket, PartitionPlan};
use crate::error::{Error, Result};
use crate::num::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMethod {
    CutMix,
    MixUp,
}

impl fmt::Display for AugmentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentMethod::CutMix => f.write_str("cutmix"),
            AugmentMethod::MixUp => f.write_str("mixup"),
        }
    }
}

impl std::str::FromStr for AugmentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cutmix" => Ok(AugmentMethod::CutMix),
            "mixup" => Ok(AugmentMethod::MixUp),
            other => Err(Error::Config(format!("unknown augmentation method {other:?}"))),
        }
    }
}

/// Which samples receive augmentation. `High` is the supported production
/// path; the others exist for comparison experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentSource {
    High,
    Low,
    /// Half lowest-rank LOW samples, half highest-rank HIGH samples.
    Mixed,
    /// Every sample, the conventional whole-dataset augmentation baseline.
    All,
}

impl fmt::Display for AugmentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AugmentSource::High => "high",
            AugmentSource::Low => "low",
            AugmentSource::Mixed => "mixed",
            AugmentSource::All => "all",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AugmentSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(AugmentSource::High),
            "low" => Ok(AugmentSource::Low),
            "mixed" => Ok(AugmentSource::Mixed),
            "all" => Ok(AugmentSource::All),
            other => Err(Error::Config(format!("unknown augmentation source {other:?}"))),
        }
    }
}

/// Temperature given to augmented samples during distillation, which have no
/// energy rank of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugTemperatureMode {
    /// The policy's base temperature.
    Base,
    /// The manifest temperature of the dominant mix partner.
    Source,
}

impl fmt::Display for AugTemperatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugTemperatureMode::Base => f.write_str("base"),
            AugTemperatureMode::Source => f.write_str("source"),
        }
    }
}

impl std::str::FromStr for AugTemperatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(AugTemperatureMode::Base),
            "source" => Ok(AugTemperatureMode::Source),
            other => Err(Error::Config(format!(
                "unknown augmentation temperature mode {other:?}"
            ))),
        }
    }
}

/// How an augmentation pass is to be run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub method: AugmentMethod,
    pub source: AugmentSource,
    pub seed: u64,
    /// (height, width, channels) interpretation of the feature vector for
    /// CutMix. When absent, a square single-channel shape is inferred.
    pub image_shape: Option<(usize, usize, usize)>,
}

/// Where a mixed sample came from: both source ids, the recorded mixing
/// weight, and the CutMix box if one was cut.
#[derive(Debug, Clone, PartialEq)]
pub struct MixOrigin {
    pub src_a: u64,
    pub src_b: u64,
    /// Weight on `src_a`'s label. For CutMix this is recomputed exactly as
    /// 1 − clipped_box_area / total_area.
    pub lambda: f64,
    pub method: AugmentMethod,
    /// (x1, y1, x2, y2), half-open, present only for CutMix.
    pub box_coords: Option<(usize, usize, usize, usize)>,
}

/// One augmented sample: mixed features, a mixed label distribution over all
/// K classes, and full provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub features: Vec<f64>,
    pub label_weights: Distribution,
    pub origin: MixOrigin,
}

fn mixed_label_weights(k: usize, label_a: usize, label_b: usize, lambda: f64) -> Result<Distribution> {
    if label_a >= k {
        return Err(Error::LabelOutOfRange { label: label_a, classes: k });
    }
    if label_b >= k {
        return Err(Error::LabelOutOfRange { label: label_b, classes: k });
    }
    let mut weights = vec![0.0; k];
    weights[label_a] += lambda;
    weights[label_b] += 1.0 - lambda;
    Distribution::new(weights)
}

/// Convex combination of two feature vectors: lambda·a + (1−lambda)·b, with
/// label weight lambda on `label_a`'s class. Output features are quantized
/// to f32 storage precision so augmented datasets serialize losslessly.
pub fn mixup(
    a: &[f64],
    b: &[f64],
    label_a: usize,
    label_b: usize,
    lambda: f64,
    k: usize,
    src: (u64, u64),
) -> Result<AugmentedSample> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "mixup inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Augment(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let features: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (lambda * x + (1.0 - lambda) * y) as f32 as f64)
        .collect();
    Ok(AugmentedSample {
        features,
        label_weights: mixed_label_weights(k, label_a, label_b, lambda)?,
        origin: MixOrigin {
            src_a: src.0,
            src_b: src.1,
            lambda,
            method: AugmentMethod::MixUp,
            box_coords: None,
        },
    })
}

/// Pastes a rectangular box from image `b` into image `a`. The box is sized
/// round(W·√(1−λ_target)) × round(H·√(1−λ_target)) around a uniformly drawn
/// center, clipped to the image; the recorded lambda is recomputed exactly
/// as 1 − clipped_box_area/(H·W). Features are interpreted as a row-major
/// H×W×C image.
#[allow(clippy::too_many_arguments)]
pub fn cutmix(
    a: &[f64],
    b: &[f64],
    label_a: usize,
    label_b: usize,
    lambda_target: f64,
    shape: (usize, usize, usize),
    k: usize,
    src: (u64, u64),
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    let (h, w, c) = shape;
    if h < 2 || w < 2 {
        return Err(Error::Augment(format!("image {h}x{w} smaller than 2x2")));
    }
    if a.len() != b.len() || a.len() != h * w * c {
        return Err(Error::ShapeMismatch(format!(
            "cutmix inputs of length {} and {} for shape {h}x{w}x{c}",
            a.len(),
            b.len()
        )));
    }
    if !(lambda_target > 0.0 && lambda_target < 1.0) {
        return Err(Error::Augment(format!(
            "cutmix lambda_target {lambda_target} outside (0, 1)"
        )));
    }

    let ratio = (1.0 - lambda_target).sqrt();
    let cut_w = (w as f64 * ratio).round() as usize;
    let cut_h = (h as f64 * ratio).round() as usize;
    let cx = rng.gen_range(0..w);
    let cy = rng.gen_range(0..h);
    let x1 = cx.saturating_sub(cut_w / 2);
    let x2 = (cx + (cut_w - cut_w / 2)).min(w);
    let y1 = cy.saturating_sub(cut_h / 2);
    let y2 = (cy + (cut_h - cut_h / 2)).min(h);

    let mut features = a.to_vec();
    for y in y1..y2 {
        for x in x1..x2 {
            let base = (y * w + x) * c;
            features[base..base + c].copy_from_slice(&b[base..base + c]);
        }
    }
    let area = (x2 - x1) * (y2 - y1);
    let lambda = 1.0 - area as f64 / (h * w) as f64;
    Ok(AugmentedSample {
        features,
        label_weights: mixed_label_weights(k, label_a, label_b, lambda)?,
        origin: MixOrigin {
            src_a: src.0,
            src_b: src.1,
            lambda,
            method: AugmentMethod::CutMix,
            box_coords: Some((x1, y1, x2, y2)),
        },
    })
}

/// The three disjoint views of a dataset under a partition plan. Ids are in
/// ascending order within each bucket; their union is 0..N−1.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSplit {
    pub low: Vec<u64>,
    pub else_: Vec<u64>,
    pub high: Vec<u64>,
}

/// Splits dataset ids into (x_low, x_else, x_high) per the plan's buckets.
pub fn split_by_bucket(dataset: &Dataset, plan: &PartitionPlan) -> Result<BucketSplit> {
    if plan.len() != dataset.len() {
        return Err(Error::IdMismatch(format!(
            "plan covers {} samples, dataset has {}",
            plan.len(),
            dataset.len()
        )));
    }
    let mut split = BucketSplit {
        low: Vec::new(),
        else_: Vec::new(),
        high: Vec::new(),
    };
    for id in 0..dataset.len() as u64 {
        match plan.bucket_of(id)? {
            Bucket::Low => split.low.push(id),
            Bucket::Else => split.else_.push(id),
            Bucket::High => split.high.push(id),
        }
    }
    Ok(split)
}

/// Provenance of one appended sample, as written to the side-file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceRow {
    pub new_id: u64,
    pub origin: MixOrigin,
}

/// A dataset extended with augmented rows: the first `base_len` rows are the
/// untouched originals, the rest are mixes with one provenance row each.
/// Appended rows carry the dominant source's hard label in the dataset
/// proper; training reconstructs the mixed label weights from provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub dataset: Dataset,
    pub base_len: usize,
    pub provenance: Vec<ProvenanceRow>,
}

impl AugmentedDataset {
    pub fn augmented_len(&self) -> usize {
        self.dataset.len() - self.base_len
    }

    pub fn save(&self, data_path: &Path, provenance_path: &Path) -> Result<()> {
        self.dataset.save(data_path)?;
        std::fs::write(provenance_path, provenance_to_csv(&self.provenance))?;
        Ok(())
    }

    pub fn load(data_path: &Path, provenance_path: &Path) -> Result<Self> {
        let dataset = Dataset::load(data_path)?;
        let provenance = provenance_from_csv(&std::fs::read_to_string(provenance_path)?)?;
        if provenance.len() > dataset.len() {
            return Err(Error::Malformed(
                "more provenance rows than dataset rows".into(),
            ));
        }
        let base_len = dataset.len() - provenance.len();
        for (idx, row) in provenance.iter().enumerate() {
            if row.new_id != (base_len + idx) as u64 {
                return Err(Error::Malformed(format!(
                    "provenance row {idx} has id {}, expected {}",
                    row.new_id,
                    base_len + idx
                )));
            }
        }
        Ok(AugmentedDataset {
            dataset,
            base_len,
            provenance,
        })
    }
}

pub fn provenance_to_csv(rows: &[ProvenanceRow]) -> String {
    let mut out = String::from("new_id,src_a,src_b,lambda,method,box\n");
    for row in rows {
        let box_str = match row.origin.box_coords {
            Some((x1, y1, x2, y2)) => format!("{x1}:{y1}:{x2}:{y2}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.new_id, row.origin.src_a, row.origin.src_b, row.origin.lambda, row.origin.method, box_str
        ));
    }
    out
}

pub fn provenance_from_csv(text: &str) -> Result<Vec<ProvenanceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("new_id,src_a,src_b,lambda,method,box") => {}
        other => {
            return Err(Error::Malformed(format!(
                "bad provenance header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Malformed(format!("bad provenance row {line:?}")));
        }
        let parse_u64 = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::Malformed(format!("bad id field {s:?}")))
        };
        let box_coords = if fields[5].is_empty() {
            None
        } else {
            let parts: Vec<&str> = fields[5].split(':').collect();
            if parts.len() != 4 {
                return Err(Error::Malformed(format!("bad box field {:?}", fields[5])));
            }
            let mut coords = [0usize; 4];
            for (slot, part) in coords.iter_mut().zip(parts.iter()) {
                *slot = part
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad box field {part:?}")))?;
            }
            Some((coords[0], coords[1], coords[2], coords[3]))
        };
        rows.push(ProvenanceRow {
            new_id: parse_u64(fields[0])?,
            origin: MixOrigin {
                src_a: parse_u64(fields[1])?,
                src_b: parse_u64(fields[2])?,
                lambda: fields[3]
                    .parse()
                    .map_err(|_| Error::Malformed(format!("bad lambda {:?}", fields[3])))?,
                method: fields[4].parse()?,
                box_coords,
            },
        });
    }
    Ok(rows)
}

fn infer_image_shape(plan: &AugmentPlan, dim: usize) -> Result<(usize, usize, usize)> {
    if let Some(shape) = plan.image_shape {
        let (h, w, c) = shape;
        if h * w * c != dim {
            return Err(Error::Augment(format!(
                "image shape {h}x{w}x{c} does not cover {dim} features"
            )));
        }
        return Ok(shape);
    }
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        Ok((side, side, 1))
    } else {
        Err(Error::Augment(format!(
            "feature dim {dim} is not square; pass an explicit image shape for cutmix"
        )))
    }
}

fn select_pool(split: &BucketSplit, dataset_len: usize, source: AugmentSource) -> Vec<u64> {
    match source {
        AugmentSource::High => split.high.clone(),
        AugmentSource::Low => split.low.clone(),
        AugmentSource::Mixed => {
            // Keep the budget at floor(N·r): the most extreme half of each end.
            let m = split.low.len();
            let take_low = m.div_ceil(2);
            let take_high = m / 2;
            let mut pool: Vec<u64> = split.low[..take_low].to_vec();
            pool.extend_from_slice(&split.high[split.high.len() - take_high..]);
            pool.sort_unstable();
            pool
        }
        AugmentSource::All => (0..dataset_len as u64).collect(),
    }
}

/// Builds the augmented training set: one mixed sample per pool member, with
/// the partner drawn uniformly from the same pool (never the sample itself),
/// appended after the untouched originals. |dataset'| = N + floor(N·r) for
/// the high/low/mixed sources, and 2N for `All`.
pub fn build_heda_dataset(
    dataset: &Dataset,
    plan: &PartitionPlan,
    aug: &AugmentPlan,
) -> Result<AugmentedDataset> {
    let split = split_by_bucket(dataset, plan)?;
    let pool = select_pool(&split, dataset.len(), aug.source);
    if pool.len() < 2 {
        return Err(Error::Augment(format!(
            "augmentation pool has {} samples; pairing needs at least 2",
            pool.len()
        )));
    }
    let shape = match aug.method {
        AugmentMethod::CutMix => Some(infer_image_shape(aug, dataset.dim())?),
        AugmentMethod::MixUp => None,
    };

    let base_len = dataset.len();
    let mut out = dataset.clone();
    let mut provenance = Vec::with_capacity(pool.len());
    // Iterate the pool in ascending id order; each sample gets its own RNG
    // stream so the output is independent of iteration order.
    let mut sorted_pool = pool.clone();
    sorted_pool.sort_unstable();
    for (idx, &src_a) in sorted_pool.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(aug.seed);
        rng.set_stream(idx as u64);
        // Partner uniform over the pool excluding the sample itself.
        let mut partner_idx = rng.gen_range(0..sorted_pool.len() - 1);
        if partner_idx >= idx {
            partner_idx += 1;
        }
        let src_b = sorted_pool[partner_idx];
        let a = dataset.features_row(src_a as usize);
        let b = dataset.features_row(src_b as usize);
        let label_a = dataset.label(src_a as usize);
        let label_b = dataset.label(src_b as usize);
        let sample = match aug.method {
            AugmentMethod::MixUp => {
                // Beta(1,1) is uniform on [0, 1).
                let lambda: f64 = rng.gen();
                mixup(a, b, label_a, label_b, lambda, dataset.classes(), (src_a, src_b))?
            }
            AugmentMethod::CutMix => {
                let lambda_target = loop {
                    let l: f64 = rng.gen();
                    if l > 0.0 {
                        break l;
                    }
                };
                cutmix(
                    a,
                    b,
                    label_a,
                    label_b,
                    lambda_target,
                    shape.unwrap(),
                    dataset.classes(),
                    (src_a, src_b),
                    &mut rng,
                )?
            }
        };
        let new_id = (base_len + idx) as u64;
        let hard_label = if sample.origin.lambda >= 0.5 {
            label_a
        } else {
            label_b
        } as u16;
        out.append_rows(&sample.features, &[hard_label])?;
        provenance.push(ProvenanceRow {
            new_id,
            origin: sample.origin,
        });
    }
    Ok(AugmentedDataset {
        dataset: out,
        base_len,
        provenance,
    })
}
