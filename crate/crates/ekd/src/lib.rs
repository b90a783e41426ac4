//! Energy-scored knowledge distillation and selective data augmentation.
//!
//! The pipeline: pretrain a teacher, score every training sample with the
//! teacher's energy function, rank and partition the dataset into
//! low/else/high-energy buckets, distill a student with per-sample softmax
//! temperatures driven by those buckets, and optionally augment only the
//! high-energy subset before distilling. The `book/` directory walks through
//! each concept; its code blocks compile and run as doctests.

pub mod augment;
pub mod config;
pub mod data;
pub mod energy;
pub mod error;
pub mod loss;
pub mod model;
pub mod num;
pub mod report;
pub mod run;

mod binio;

pub use error::{Error, Result};

// Every Rust block in the book runs under `cargo test --doc`, one module
// per chapter so a failure names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/energy-scores.md")]
    pub mod energy_scores {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    pub mod partitioning {}
    #[doc = include_str!("../../../book/src/temperature-policies.md")]
    pub mod temperature_policies {}
    #[doc = include_str!("../../../book/src/distillation-losses.md")]
    pub mod distillation_losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    pub mod augmentation {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    pub mod synthetic_data {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    pub mod file_formats {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
}
