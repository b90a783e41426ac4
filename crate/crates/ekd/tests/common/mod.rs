//! Shared helpers for integration tests: the synthetic benchmark task and
//! finite-difference utilities. Everything here is independent of the
//! library's gradient code paths.

#![allow(dead_code)]

use ekd::data::{make_blob_split, BlobSpec, Dataset};

/// The 6-class, 16-dimensional benchmark task. `seed` varies both the class
/// geometry (data seed 100+seed) and is reused by callers as the training
/// seed.
pub fn bench_task(seed: u64, noise: f64, per_class: usize, test_per_class: usize) -> (Dataset, Dataset) {
    let spec = BlobSpec {
        classes: 6,
        dim: 16,
        class_separation: 4.0,
        noise_sigma: noise,
        seed: 100 + seed,
    };
    make_blob_split(&spec, per_class, test_per_class).expect("benchmark task generation")
}

/// Relative error with a floor, the usual gradient-check metric.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite difference of `f` at `x` in coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}
