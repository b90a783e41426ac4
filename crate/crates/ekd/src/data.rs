//! Synthetic dataset generation (balanced Gaussian blobs and long-tailed
//! variants) and the `EKDS` dataset file format.
//!
//! All generators are driven by a `ChaCha8Rng` seeded with a caller-supplied
//! 64-bit seed, so a (spec, seed) pair pins every byte of the output.
//! Features are quantized to `f32` precision at generation time — the same
//! width the file format stores — which makes save→load→save byte-identical
//! and load(save(ds)) == ds.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::error::{Error, Result};

const MAGIC: &str = "EKDS";
const VERSION: u32 = 1;

/// A labeled feature dataset. Sample ids are the row indices 0..N−1 and are
/// stable across save/load.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    k: usize,
    /// Row-major N×d, every value exactly representable in f32.
    features: Vec<f64>,
    labels: Vec<u16>,
}

impl Dataset {
    pub fn new(d: usize, k: usize, features: Vec<f64>, labels: Vec<u16>) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::EmptyInput);
        }
        if features.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} labels of dim {}",
                features.len(),
                labels.len(),
                d
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        for &label in &labels {
            if usize::from(label) >= k {
                return Err(Error::LabelOutOfRange {
                    label: usize::from(label),
                    classes: k,
                });
            }
        }
        Ok(Dataset {
            n: labels.len(),
            d,
            k,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn features_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Appends rows produced by augmentation. Labels must stay below K.
    pub fn append_rows(&mut self, features: &[f64], labels: &[u16]) -> Result<()> {
        if features.len() != labels.len() * self.d {
            return Err(Error::ShapeMismatch(
                "appended rows do not match dataset dim".into(),
            ));
        }
        for &label in labels {
            if usize::from(label) >= self.k {
                return Err(Error::LabelOutOfRange {
                    label: usize::from(label),
                    classes: self.k,
                });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.features.extend_from_slice(features);
        self.labels.extend_from_slice(labels);
        self.n = self.labels.len();
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC.as_bytes())?;
        binio::write_u32(w, VERSION)?;
        binio::write_u64(w, self.n as u64)?;
        binio::write_u32(w, self.d as u32)?;
        binio::write_u32(w, self.k as u32)?;
        for &v in &self.features {
            binio::write_f32(w, v as f32)?;
        }
        for &label in &self.labels {
            binio::write_u16(w, label)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, MAGIC)?;
        let version = binio::read_u32(r)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n = binio::read_u64(r)? as usize;
        let d = binio::read_u32(r)? as usize;
        let k = binio::read_u32(r)? as usize;
        if d == 0 || k == 0 {
            return Err(Error::Malformed("zero dimension or class count".into()));
        }
        let count = n
            .checked_mul(d)
            .ok_or_else(|| Error::Malformed("feature count overflow".into()))?;
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            let v = binio::read_f32(r)?;
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            features.push(f64::from(v));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = binio::read_u16(r)?;
            if usize::from(label) >= k {
                return Err(Error::LabelOutOfRange {
                    label: usize::from(label),
                    classes: k,
                });
            }
            labels.push(label);
        }
        Dataset::new(d, k, features, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let ds = Self::read_from(&mut r)?;
        // Anything after the payload is a corruption signal.
        let mut extra = [0u8; 1];
        match r.read(&mut extra)? {
            0 => Ok(ds),
            _ => Err(Error::Malformed("trailing bytes after payload".into())),
        }
    }

    /// FNV-1a fingerprint of the canonical byte serialization.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).expect("in-memory write");
        binio::fnv1a64(&bytes)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &label in &self.labels {
            counts[usize::from(label)] += 1;
        }
        counts
    }
}

/// Geometry of a Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    /// Minimum pairwise distance between class centers.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < 2 {
            return Err(Error::Generation(format!(
                "need at least 2 classes and 2 dims, got K={} d={}",
                self.classes, self.dim
            )));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::Generation("class_separation must be positive".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Generation("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-class sample counts for an exponentially decaying class profile:
/// n_k = max(1, round(n_max · f^{k/(K−1)})). The rarest/most-frequent ratio
/// is the imbalance factor f up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub classes: usize,
    pub n_max: usize,
    pub imbalance_factor: f64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Generation("long tail needs at least 2 classes".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Generation("n_max must be positive".into()));
        }
        if !(self.imbalance_factor > 0.0 && self.imbalance_factor <= 1.0) {
            return Err(Error::Generation(format!(
                "imbalance factor must lie in (0, 1], got {}",
                self.imbalance_factor
            )));
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        let k = self.classes;
        (0..k)
            .map(|i| {
                let exponent = i as f64 / (k - 1) as f64;
                let raw = self.n_max as f64 * self.imbalance_factor.powf(exponent);
                (raw.round() as usize).max(1)
            })
            .collect()
    }
}

/// Standard normal via Box–Muller on two uniform draws.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn draw_centers(spec: &BlobSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    // Box sized so typical pairwise distances sit near the separation floor
    // regardless of dimension: E[dist] for U(−L, L)^d is √(2d/3)·L, so
    // L = 1.3·sep/√(2d/3) keeps the rejection rate low while the floor stays
    // binding. Centers are placed greedily with bounded retries.
    let span = 1.3 * spec.class_separation / (2.0 * spec.dim as f64 / 3.0).sqrt();
    for _ in 0..20 {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        'placing: while centers.len() < spec.classes {
            for _ in 0..500 {
                let candidate: Vec<f64> =
                    (0..spec.dim).map(|_| rng.gen_range(-span..span)).collect();
                let far_enough = centers.iter().all(|c| {
                    let dist2: f64 = c
                        .iter()
                        .zip(candidate.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    dist2.sqrt() >= spec.class_separation
                });
                if far_enough {
                    centers.push(candidate);
                    continue 'placing;
                }
            }
            break 'placing; // stuck; restart from scratch
        }
        if centers.len() == spec.classes {
            return Ok(centers);
        }
    }
    Err(Error::Generation(format!(
        "infeasible separation: could not place {} centers at separation {} after bounded retries",
        spec.classes, spec.class_separation
    )))
}

fn gen_rows(
    centers: &[Vec<f64>],
    counts: &[usize],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<u16>) {
    let d = centers[0].len();
    let total: usize = counts.iter().sum();
    let mut features = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for &c in &centers[class] {
                features.push(c + sigma * standard_normal(rng));
            }
            labels.push(class as u16);
        }
    }
    (features, labels)
}

/// Per-dimension mean/std computed on one dataset and applied to others, so
/// train and test share a single coordinate frame.
struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    fn fit(features: &[f64], d: usize) -> Standardizer {
        let n = features.len() / d;
        let mut means = vec![0.0; d];
        for row in features.chunks_exact(d) {
            for (m, &v) in means.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut vars = vec![0.0; d];
        for row in features.chunks_exact(d) {
            for ((var, &v), &m) in vars.iter_mut().zip(row.iter()).zip(means.iter()) {
                *var += (v - m) * (v - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, scales }
    }

    /// Standardizes in place and quantizes to f32 storage precision.
    fn apply(&self, features: &mut [f64], d: usize) {
        for row in features.chunks_exact_mut(d) {
            for ((v, &m), &s) in row.iter_mut().zip(self.means.iter()).zip(self.scales.iter()) {
                *v = ((*v - m) / s) as f32 as f64;
            }
        }
    }
}

/// Gaussian clusters at seeded random centers with pairwise center distance
/// at least `class_separation`, standardized to zero mean and unit variance
/// per dimension.
pub fn make_blobs(spec: &BlobSpec, n_per_class: usize) -> Result<Dataset> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Generation("n_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = draw_centers(spec, &mut rng)?;
    let counts = vec![n_per_class; spec.classes];
    let (mut features, labels) = gen_rows(&centers, &counts, spec.noise_sigma, &mut rng);
    Standardizer::fit(&features, spec.dim).apply(&mut features, spec.dim);
    Dataset::new(spec.dim, spec.classes, features, labels)
}

/// A (train, test) pair over the same class geometry: one set of centers,
/// independent noise draws, and the train split's standardization applied to
/// both.
pub fn make_blob_split(
    spec: &BlobSpec,
    n_train_per_class: usize,
    n_test_per_class: usize,
) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if n_train_per_class == 0 || n_test_per_class == 0 {
        return Err(Error::Generation("per-class counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = draw_centers(spec, &mut rng)?;
    let train_counts = vec![n_train_per_class; spec.classes];
    let test_counts = vec![n_test_per_class; spec.classes];
    let (mut train_features, train_labels) =
        gen_rows(&centers, &train_counts, spec.noise_sigma, &mut rng);
    let (mut test_features, test_labels) =
        gen_rows(&centers, &test_counts, spec.noise_sigma, &mut rng);
    let standardizer = Standardizer::fit(&train_features, spec.dim);
    standardizer.apply(&mut train_features, spec.dim);
    standardizer.apply(&mut test_features, spec.dim);
    Ok((
        Dataset::new(spec.dim, spec.classes, train_features, train_labels)?,
        Dataset::new(spec.dim, spec.classes, test_features, test_labels)?,
    ))
}

/// A long-tailed train split (class counts decaying exponentially) paired
/// with a balanced test split over the same geometry.
pub fn make_long_tail(
    tail: &LongTailSpec,
    blob: &BlobSpec,
    n_test_per_class: usize,
) -> Result<(Dataset, Dataset)> {
    tail.validate()?;
    blob.validate()?;
    if tail.classes != blob.classes {
        return Err(Error::Generation(format!(
            "long-tail classes {} != blob classes {}",
            tail.classes, blob.classes
        )));
    }
    if n_test_per_class == 0 {
        return Err(Error::Generation("per-class counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(blob.seed);
    let centers = draw_centers(blob, &mut rng)?;
    let train_counts = tail.counts();
    let test_counts = vec![n_test_per_class; blob.classes];
    let (mut train_features, train_labels) =
        gen_rows(&centers, &train_counts, blob.noise_sigma, &mut rng);
    let (mut test_features, test_labels) =
        gen_rows(&centers, &test_counts, blob.noise_sigma, &mut rng);
    let standardizer = Standardizer::fit(&train_features, blob.dim);
    standardizer.apply(&mut train_features, blob.dim);
    standardizer.apply(&mut test_features, blob.dim);
    Ok((
        Dataset::new(blob.dim, blob.classes, train_features, train_labels)?,
        Dataset::new(blob.dim, blob.classes, test_features, test_labels)?,
    ))
}
