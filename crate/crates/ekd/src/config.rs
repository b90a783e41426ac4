//! Run configuration: a flat `key = value` file format (with `#` comments,
//! no sections) merged with command-line overrides. Unknown keys are
//! rejected, and the fully resolved config echoes back to a file whose
//! reparse reproduces every field exactly — reruns from an echoed config are
//! bit-identical.

use std::fmt;
use std::path::Path;

use crate::augment::{AugTemperatureMode, AugmentMethod, AugmentPlan, AugmentSource};
use crate::data::{BlobSpec, LongTailSpec};
use crate::error::{Error, Result};
use crate::loss::TemperaturePolicy;
use crate::model::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    LongTail,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataKind::Blobs => f.write_str("blobs"),
            DataKind::LongTail => f.write_str("longtail"),
        }
    }
}

impl std::str::FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DataKind::Blobs),
            "longtail" => Ok(DataKind::LongTail),
            other => Err(Error::Config(format!("unknown data kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Constant,
    Energy,
    Gradation,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Constant => f.write_str("constant"),
            PolicyKind::Energy => f.write_str("energy"),
            PolicyKind::Gradation => f.write_str("gradation"),
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PolicyKind::Constant),
            "energy" => Ok(PolicyKind::Energy),
            "gradation" => Ok(PolicyKind::Gradation),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }
}

/// Augmentation switch: off, or one of the mixing methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedaMode {
    None,
    Method(AugmentMethod),
}

impl fmt::Display for HedaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HedaMode::None => f.write_str("none"),
            HedaMode::Method(m) => write!(f, "{m}"),
        }
    }
}

impl std::str::FromStr for HedaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(HedaMode::None),
            other => Ok(HedaMode::Method(other.parse()?)),
        }
    }
}

/// Every knob of a pipeline run. Field defaults double as the documented
/// CLI defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_kind: DataKind,
    pub classes: usize,
    /// Training samples per class; for long-tailed data this is the count of
    /// the most frequent class.
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub data_seed: u64,
    pub imbalance_factor: f64,

    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,

    pub alpha: f64,
    pub policy: PolicyKind,
    pub base_t: f64,
    pub t_plus: i64,
    pub t_minus: i64,
    pub segments: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub r: f64,
    pub t_e: f64,
    pub t_squared_scaling: bool,

    pub heda: HedaMode,
    pub heda_source: AugmentSource,
    pub heda_seed: u64,
    pub aug_temperature_mode: AugTemperatureMode,
    pub image_shape: Option<(usize, usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_kind: DataKind::Blobs,
            classes: 6,
            per_class: 500,
            test_per_class: 100,
            dim: 16,
            class_separation: 4.0,
            noise_sigma: 1.0,
            data_seed: 7,
            imbalance_factor: 0.5,
            teacher_hidden: vec![64],
            student_hidden: vec![16],
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 1,
            alpha: 0.9,
            policy: PolicyKind::Energy,
            base_t: 4.0,
            t_plus: 2,
            t_minus: -2,
            segments: 10,
            t_min: 2.0,
            t_max: 6.0,
            r: 0.2,
            t_e: 1.0,
            t_squared_scaling: true,
            heda: HedaMode::None,
            heda_source: AugmentSource::High,
            heda_seed: 99,
            aug_temperature_mode: AugTemperatureMode::Base,
            image_shape: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_hidden(key: &str, value: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = value
        .split(',')
        .map(|part| parse::<usize>(key, part.trim()))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config(format!("bad hidden dims {value:?}")));
    }
    Ok(dims)
}

fn parse_image_shape(value: &str) -> Result<Option<(usize, usize, usize)>> {
    if value.is_empty() {
        return Ok(None);
    }
    let parts: Vec<&str> = value.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "image shape must be HxWxC, got {value:?}"
        )));
    }
    let h = parse::<usize>("image_shape", parts[0])?;
    let w = parse::<usize>("image_shape", parts[1])?;
    let c = parse::<usize>("image_shape", parts[2])?;
    Ok(Some((h, w, c)))
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data_kind" => self.data_kind = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "per_class" => self.per_class = parse(key, value)?,
            "test_per_class" => self.test_per_class = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "class_separation" => self.class_separation = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "imbalance_factor" => self.imbalance_factor = parse(key, value)?,
            "teacher_hidden" => self.teacher_hidden = parse_hidden(key, value)?,
            "student_hidden" => self.student_hidden = parse_hidden(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "policy" => self.policy = parse(key, value)?,
            "base_t" => self.base_t = parse(key, value)?,
            "t_plus" => self.t_plus = parse(key, value)?,
            "t_minus" => self.t_minus = parse(key, value)?,
            "segments" => self.segments = parse(key, value)?,
            "t_min" => self.t_min = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "t_e" => self.t_e = parse(key, value)?,
            "t_squared_scaling" => self.t_squared_scaling = parse(key, value)?,
            "heda" => self.heda = parse(key, value)?,
            "heda_source" => self.heda_source = parse(key, value)?,
            "heda_seed" => self.heda_seed = parse(key, value)?,
            "aug_temperature_mode" => self.aug_temperature_mode = parse(key, value)?,
            "image_shape" => self.image_shape = parse_image_shape(value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` comments, no
    /// sections.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// All fields as sorted `key = value` lines; the echoed-config format.
    /// Reparsing the echo reproduces the config exactly.
    pub fn to_echo_string(&self) -> String {
        let image_shape = match self.image_shape {
            Some((h, w, c)) => format!("{h}x{w}x{c}"),
            None => String::new(),
        };
        let hidden = |dims: &[usize]| {
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut pairs = vec![
            ("alpha", self.alpha.to_string()),
            ("aug_temperature_mode", self.aug_temperature_mode.to_string()),
            ("base_t", self.base_t.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("class_separation", self.class_separation.to_string()),
            ("classes", self.classes.to_string()),
            ("data_kind", self.data_kind.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("dim", self.dim.to_string()),
            ("epochs", self.epochs.to_string()),
            ("heda", self.heda.to_string()),
            ("heda_seed", self.heda_seed.to_string()),
            ("heda_source", self.heda_source.to_string()),
            ("image_shape", image_shape),
            ("imbalance_factor", self.imbalance_factor.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("per_class", self.per_class.to_string()),
            ("policy", self.policy.to_string()),
            ("r", self.r.to_string()),
            ("seed", self.seed.to_string()),
            ("segments", self.segments.to_string()),
            ("student_hidden", hidden(&self.student_hidden)),
            ("t_e", self.t_e.to_string()),
            ("t_max", self.t_max.to_string()),
            ("t_min", self.t_min.to_string()),
            ("t_minus", self.t_minus.to_string()),
            ("t_plus", self.t_plus.to_string()),
            ("t_squared_scaling", self.t_squared_scaling.to_string()),
            ("teacher_hidden", hidden(&self.teacher_hidden)),
            ("test_per_class", self.test_per_class.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (key, value) in pairs {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if self.per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("per-class counts must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        self.train_config().validate()?;
        if self.data_kind == DataKind::LongTail {
            self.long_tail_spec().validate()?;
        }
        Ok(())
    }

    pub fn temperature_policy(&self) -> TemperaturePolicy {
        match self.policy {
            PolicyKind::Constant => TemperaturePolicy::Constant { base_t: self.base_t },
            PolicyKind::Energy => TemperaturePolicy::EnergyTwoSided {
                base_t: self.base_t,
                t_plus: self.t_plus,
                t_minus: self.t_minus,
            },
            PolicyKind::Gradation => TemperaturePolicy::Gradation {
                segments: self.segments,
                t_min: self.t_min,
                t_max: self.t_max,
            },
        }
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            dim: self.dim,
            class_separation: self.class_separation,
            noise_sigma: self.noise_sigma,
            seed: self.data_seed,
        }
    }

    pub fn long_tail_spec(&self) -> LongTailSpec {
        LongTailSpec {
            classes: self.classes,
            n_max: self.per_class,
            imbalance_factor: self.imbalance_factor,
        }
    }

    pub fn augment_plan(&self) -> Option<AugmentPlan> {
        match self.heda {
            HedaMode::None => None,
            HedaMode::Method(method) => Some(AugmentPlan {
                method,
                source: self.heda_source,
                seed: self.heda_seed,
                image_shape: self.image_shape,
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            alpha: self.alpha,
            policy: self.temperature_policy(),
            r: self.r,
            t_e: self.t_e,
            t_squared: self.t_squared_scaling,
            aug_temperature_mode: self.aug_temperature_mode,
            heda: self.augment_plan(),
        }
    }
}
