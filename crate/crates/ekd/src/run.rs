//! Pipeline orchestration: the run-directory layout, the individual stages
//! (data, pretrain, score, partition, augment, distill, eval), and the
//! r-sweep driver.
//!
//! Every stage reads its inputs from files in the run directory and writes
//! its outputs back, so a full pipeline and a stage-by-stage rerun produce
//! identical artifacts. Nothing written to the run directory contains
//! timestamps or measured durations; a rerun from the echoed config is
//! bit-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::{build_heda_dataset, AugmentedDataset};
use crate::config::{DataKind, HedaMode, PolicyKind, RunConfig};
use crate::data::{make_blob_split, make_long_tail, Dataset};
use crate::energy::{build_manifest, partition, rank_dataset, EnergyManifest, EnergyRecord};
use crate::error::{Error, Result};
use crate::model::{
    distill_student, load_logit_matrix, pretrain_teacher, save_logit_matrix, MlpModel,
};
use crate::report::{
    bucket_confidence, correlation_disparity, to_json_lines, MetricRecord,
};

/// Fixed file layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.resolved")
    }

    pub fn train_data(&self) -> PathBuf {
        self.dir.join("train.ekds")
    }

    pub fn test_data(&self) -> PathBuf {
        self.dir.join("test.ekds")
    }

    pub fn data_meta(&self) -> PathBuf {
        self.dir.join("data.meta")
    }

    pub fn teacher(&self) -> PathBuf {
        self.dir.join("teacher.ekdm")
    }

    pub fn teacher_logits(&self) -> PathBuf {
        self.dir.join("teacher_logits.ekdl")
    }

    pub fn energy_scores(&self) -> PathBuf {
        self.dir.join("energy_scores.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("energy_manifest.csv")
    }

    pub fn heda_data(&self) -> PathBuf {
        self.dir.join("heda.ekds")
    }

    pub fn heda_provenance(&self) -> PathBuf {
        self.dir.join("heda_provenance.csv")
    }

    pub fn student(&self) -> PathBuf {
        self.dir.join("student.ekdm")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.jsonl")
    }

    pub fn metrics_jsonl(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn metrics_txt(&self) -> PathBuf {
        self.dir.join("metrics.txt")
    }

    pub fn bucket_csv(&self) -> PathBuf {
        self.dir.join("bucket_confidence.csv")
    }

    pub fn disparity_csv(&self) -> PathBuf {
        self.dir.join("disparity.csv")
    }

    pub fn failed_marker(&self) -> PathBuf {
        self.dir.join("FAILED")
    }
}

/// Writes the fully resolved config into the run directory.
pub fn echo_config(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    std::fs::create_dir_all(paths.dir())?;
    std::fs::write(paths.config(), cfg.to_echo_string())?;
    Ok(())
}

fn data_meta_string(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# kind={}", cfg.data_kind);
    let _ = writeln!(out, "# classes={}", cfg.classes);
    let _ = writeln!(out, "# per_class={}", cfg.per_class);
    let _ = writeln!(out, "# test_per_class={}", cfg.test_per_class);
    let _ = writeln!(out, "# dim={}", cfg.dim);
    let _ = writeln!(out, "# class_separation={}", cfg.class_separation);
    let _ = writeln!(out, "# noise_sigma={}", cfg.noise_sigma);
    let _ = writeln!(out, "# data_seed={}", cfg.data_seed);
    if cfg.data_kind == DataKind::LongTail {
        let _ = writeln!(out, "# imbalance_factor={}", cfg.imbalance_factor);
    }
    let _ = writeln!(out, "# n_train={}", train.len());
    let _ = writeln!(out, "# n_test={}", test.len());
    let _ = writeln!(out, "# train_checksum={:016x}", train.checksum());
    let _ = writeln!(out, "# test_checksum={:016x}", test.checksum());
    out
}

/// Generates the configured dataset pair into explicit paths.
pub fn generate_data(
    cfg: &RunConfig,
    train_path: &Path,
    test_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    let (train, test) = match cfg.data_kind {
        DataKind::Blobs => make_blob_split(&cfg.blob_spec(), cfg.per_class, cfg.test_per_class)?,
        DataKind::LongTail => {
            make_long_tail(&cfg.long_tail_spec(), &cfg.blob_spec(), cfg.test_per_class)?
        }
    };
    train.save(train_path)?;
    test.save(test_path)?;
    std::fs::write(meta_path, data_meta_string(cfg, &train, &test))?;
    Ok(())
}

pub fn stage_data(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    generate_data(
        cfg,
        &paths.train_data(),
        &paths.test_data(),
        &paths.data_meta(),
    )
}

pub fn stage_pretrain(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let train = Dataset::load(&paths.train_data())?;
    let (teacher, logits) = pretrain_teacher(&train, &cfg.teacher_hidden, &cfg.train_config())?;
    teacher.save(&paths.teacher())?;
    save_logit_matrix(&logits, &paths.teacher_logits())?;
    Ok(())
}

fn scores_file_string(records: &[EnergyRecord], k: usize, t_e: f64, checksum: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# N={}", records.len());
    let _ = writeln!(out, "# K={k}");
    let _ = writeln!(out, "# T_E={t_e}");
    let _ = writeln!(out, "# teacher_checksum={checksum}");
    out.push_str("sample_id,energy,rank\n");
    for rec in records {
        let _ = writeln!(out, "{},{:.8e},{}", rec.sample_id, rec.energy, rec.rank);
    }
    out
}

/// Parses an energy scores file back into (records, k, t_e, checksum).
pub fn parse_scores_file(text: &str) -> Result<(Vec<EnergyRecord>, usize, f64, String)> {
    let mut n = None;
    let mut k = None;
    let mut t_e = None;
    let mut checksum = None;
    let mut saw_header = false;
    let mut records = Vec::new();
    for line in text.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            let (key, value) = comment
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("bad header line {line:?}")))?;
            match key.trim() {
                "N" => {
                    n = Some(value.trim().parse::<usize>().map_err(|_| {
                        Error::Malformed(format!("bad N {value:?}"))
                    })?)
                }
                "K" => {
                    k = Some(value.trim().parse::<usize>().map_err(|_| {
                        Error::Malformed(format!("bad K {value:?}"))
                    })?)
                }
                "T_E" => {
                    t_e = Some(value.trim().parse::<f64>().map_err(|_| {
                        Error::Malformed(format!("bad T_E {value:?}"))
                    })?)
                }
                "teacher_checksum" => checksum = Some(value.trim().to_string()),
                other => return Err(Error::Malformed(format!("unknown header key {other:?}"))),
            }
            continue;
        }
        if !saw_header {
            if line != "sample_id,energy,rank" {
                return Err(Error::Malformed(format!("bad column header {line:?}")));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Malformed(format!("bad score row {line:?}")));
        }
        records.push(EnergyRecord {
            sample_id: fields[0]
                .parse()
                .map_err(|_| Error::Malformed(format!("bad id {:?}", fields[0])))?,
            energy: fields[1]
                .parse()
                .map_err(|_| Error::Malformed(format!("bad energy {:?}", fields[1])))?,
            rank: fields[2]
                .parse()
                .map_err(|_| Error::Malformed(format!("bad rank {:?}", fields[2])))?,
        });
    }
    let n = n.ok_or_else(|| Error::Malformed("missing N header".into()))?;
    if records.len() != n {
        return Err(Error::Malformed(format!(
            "header says N={n} but found {} rows",
            records.len()
        )));
    }
    Ok((
        records,
        k.ok_or_else(|| Error::Malformed("missing K header".into()))?,
        t_e.ok_or_else(|| Error::Malformed("missing T_E header".into()))?,
        checksum.ok_or_else(|| Error::Malformed("missing teacher_checksum header".into()))?,
    ))
}

pub fn stage_score(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let logits = load_logit_matrix(&paths.teacher_logits())?;
    let teacher = MlpModel::load(&paths.teacher())?;
    let records = rank_dataset(&logits, cfg.t_e)?;
    std::fs::write(
        paths.energy_scores(),
        scores_file_string(&records, logits.cols(), cfg.t_e, &teacher.checksum()),
    )?;
    Ok(())
}

pub fn stage_partition(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let text = std::fs::read_to_string(paths.energy_scores())?;
    let (records, k, t_e, checksum) = parse_scores_file(&text)?;
    let plan = partition(&records, cfg.r)?;
    let manifest = build_manifest(
        &plan,
        &records,
        &cfg.temperature_policy(),
        k,
        t_e,
        &checksum,
    )?;
    manifest.write(&paths.manifest())?;
    Ok(())
}

pub fn stage_augment(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let plan_cfg = cfg.augment_plan().ok_or_else(|| {
        Error::Config("augment stage requires heda = cutmix or mixup".into())
    })?;
    let train = Dataset::load(&paths.train_data())?;
    let manifest = EnergyManifest::read(&paths.manifest())?;
    let plan = manifest.to_partition_plan()?;
    let augmented = build_heda_dataset(&train, &plan, &plan_cfg)?;
    augmented.save(&paths.heda_data(), &paths.heda_provenance())?;
    Ok(())
}

pub fn stage_distill(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let teacher = MlpModel::load(&paths.teacher())?;
    let manifest = EnergyManifest::read(&paths.manifest())?;
    let test = Dataset::load(&paths.test_data())?;
    let (train, provenance) = if cfg.heda == HedaMode::None {
        (Dataset::load(&paths.train_data())?, Vec::new())
    } else {
        let augmented = AugmentedDataset::load(&paths.heda_data(), &paths.heda_provenance())?;
        (augmented.dataset, augmented.provenance)
    };
    let (student, history) = distill_student(
        &train,
        &provenance,
        Some(&test),
        &teacher,
        &manifest,
        &cfg.student_hidden,
        &cfg.train_config(),
    )?;
    student.save(&paths.student())?;
    let records: Vec<MetricRecord> = history
        .epochs
        .iter()
        .map(|e| MetricRecord::DistillEpoch {
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_accuracy: e.train_accuracy,
            eval_accuracy: e.eval_accuracy,
        })
        .collect();
    std::fs::write(paths.history(), to_json_lines(&records)?)?;
    Ok(())
}

/// Headline numbers produced by the eval stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub teacher_train_accuracy: f64,
    pub teacher_test_accuracy: f64,
    pub student_train_accuracy: f64,
    pub student_test_accuracy: f64,
    pub disparity_mean_off_diagonal: f64,
}

pub fn stage_eval(cfg: &RunConfig, paths: &RunPaths) -> Result<EvalSummary> {
    let teacher = MlpModel::load(&paths.teacher())?;
    let student = MlpModel::load(&paths.student())?;
    let train = Dataset::load(&paths.train_data())?;
    let test = Dataset::load(&paths.test_data())?;
    let manifest = EnergyManifest::read(&paths.manifest())?;
    let teacher_logits = load_logit_matrix(&paths.teacher_logits())?;

    let plan = manifest.to_partition_plan()?;
    let buckets = bucket_confidence(&teacher_logits, &plan)?;

    let teacher_test_logits = teacher.logit_matrix(&test)?;
    let student_test_logits = student.logit_matrix(&test)?;
    let disparity = correlation_disparity(&student_test_logits, &teacher_test_logits)?;

    let base_n = train.len();
    let (augmented_n, effective_r) = match cfg.heda {
        HedaMode::None => (base_n, 0.0),
        HedaMode::Method(_) => {
            let augmented =
                AugmentedDataset::load(&paths.heda_data(), &paths.heda_provenance())?;
            (augmented.dataset.len(), cfg.r)
        }
    };
    let step_increase = (augmented_n - base_n) as f64 / base_n as f64;

    let summary = EvalSummary {
        teacher_train_accuracy: teacher.accuracy(&train)?,
        teacher_test_accuracy: teacher.accuracy(&test)?,
        student_train_accuracy: student.accuracy(&train)?,
        student_test_accuracy: student.accuracy(&test)?,
        disparity_mean_off_diagonal: disparity.mean_off_diagonal,
    };

    let mut records = vec![
        MetricRecord::TeacherEval {
            train_accuracy: summary.teacher_train_accuracy,
            test_accuracy: summary.teacher_test_accuracy,
            checksum: teacher.checksum(),
        },
        MetricRecord::StudentEval {
            train_accuracy: summary.student_train_accuracy,
            test_accuracy: summary.student_test_accuracy,
            checksum: student.checksum(),
        },
    ];
    for stats in [&buckets.low, &buckets.else_, &buckets.high] {
        records.push(MetricRecord::BucketConfidence(stats.clone()));
    }
    records.push(MetricRecord::CorrelationDisparity {
        mean_off_diagonal: disparity.mean_off_diagonal,
    });
    records.push(MetricRecord::Cost {
        r: effective_r,
        base_n,
        augmented_n,
        step_increase,
    });
    std::fs::write(paths.metrics_jsonl(), to_json_lines(&records)?)?;
    std::fs::write(paths.bucket_csv(), buckets.to_csv())?;
    std::fs::write(paths.disparity_csv(), disparity.to_csv())?;

    let mut txt = String::new();
    let _ = writeln!(txt, "== accuracy ==");
    let _ = writeln!(txt, "model    train    test");
    let _ = writeln!(
        txt,
        "teacher  {:.4}   {:.4}",
        summary.teacher_train_accuracy, summary.teacher_test_accuracy
    );
    let _ = writeln!(
        txt,
        "student  {:.4}   {:.4}",
        summary.student_train_accuracy, summary.student_test_accuracy
    );
    let _ = writeln!(txt);
    let _ = writeln!(txt, "== bucket confidence (teacher logits, train set) ==");
    let _ = writeln!(txt, "bucket  count  mean_max_prob  mean_entropy");
    for stats in [&buckets.low, &buckets.else_, &buckets.high] {
        let _ = writeln!(
            txt,
            "{:<6}  {:<5}  {:<13}  {}",
            stats.bucket,
            stats.count,
            stats
                .mean_max_prob
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            stats
                .mean_entropy
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    let _ = writeln!(txt);
    let _ = writeln!(txt, "== correlation disparity (student vs teacher, test set) ==");
    let _ = writeln!(txt, "mean_off_diagonal = {:.6}", disparity.mean_off_diagonal);
    let _ = writeln!(txt);
    let _ = writeln!(txt, "== augmentation cost ==");
    let _ = writeln!(
        txt,
        "r = {}, base_n = {}, augmented_n = {}, step_increase = {:.4}",
        effective_r, base_n, augmented_n, step_increase
    );
    std::fs::write(paths.metrics_txt(), txt)?;

    Ok(summary)
}

/// Runs every stage in order. On failure the run directory keeps its partial
/// outputs plus a `FAILED` marker naming the stage.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    let paths = RunPaths::new(dir);
    echo_config(cfg, &paths)?;
    // A fresh run clears any stale failure marker.
    let _ = std::fs::remove_file(paths.failed_marker());

    let fail = |stage: &str, err: Error| -> Error {
        let _ = std::fs::write(paths.failed_marker(), format!("{stage}: {err}\n"));
        eprintln!("pipeline stage {stage} failed: {err}");
        err
    };

    stage_data(cfg, &paths).map_err(|e| fail("data", e))?;
    stage_pretrain(cfg, &paths).map_err(|e| fail("pretrain", e))?;
    stage_score(cfg, &paths).map_err(|e| fail("score", e))?;
    stage_partition(cfg, &paths).map_err(|e| fail("partition", e))?;
    if cfg.heda != HedaMode::None {
        stage_augment(cfg, &paths).map_err(|e| fail("augment", e))?;
    }
    stage_distill(cfg, &paths).map_err(|e| fail("distill", e))?;
    stage_eval(cfg, &paths).map_err(|e| fail("eval", e))
}

/// One sweep cell: accuracy or the failure message.
#[derive(Debug, Clone)]
struct SweepCell {
    accuracy: Option<f64>,
}

/// Runs the pipeline per (r, seed) plus a constant-temperature baseline per
/// seed, and formats the mean ± sd summary table. Returns (table, all_ok).
pub fn run_sweep(
    base: &RunConfig,
    r_values: &[f64],
    seed_count: usize,
    dir: &Path,
) -> Result<(String, bool)> {
    if r_values.is_empty() || seed_count == 0 {
        return Err(Error::Config("sweep needs at least one r and one seed".into()));
    }
    base.validate()?;
    std::fs::create_dir_all(dir)?;

    let seeds: Vec<u64> = (0..seed_count as u64).map(|i| base.seed + i).collect();
    let mut all_ok = true;

    let mut run_cell = |cfg: &RunConfig, name: &str| -> SweepCell {
        let cell_dir = dir.join(name);
        match run_pipeline(cfg, &cell_dir) {
            Ok(summary) => SweepCell {
                accuracy: Some(summary.student_test_accuracy),
            },
            Err(err) => {
                eprintln!("sweep cell {name} failed: {err}");
                all_ok = false;
                SweepCell { accuracy: None }
            }
        }
    };

    let mut baseline_cells = Vec::new();
    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.policy = PolicyKind::Constant;
        cfg.seed = seed;
        baseline_cells.push(run_cell(&cfg, &format!("baseline_seed{seed}")));
    }

    // Sweep rows keep the base policy unless it is the baseline itself.
    let row_policy = if base.policy == PolicyKind::Constant {
        PolicyKind::Energy
    } else {
        base.policy
    };
    let mut rows = Vec::new();
    for &r in r_values {
        let mut cells = Vec::new();
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.policy = row_policy;
            cfg.r = r;
            cfg.seed = seed;
            cells.push(run_cell(&cfg, &format!("r{r}_seed{seed}")));
        }
        rows.push((r, cells));
    }

    let stats = |cells: &[SweepCell]| -> (String, String, usize) {
        let values: Vec<f64> = cells.iter().filter_map(|c| c.accuracy).collect();
        if values.is_empty() {
            return ("FAILED".into(), "-".into(), 0);
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let marker = if n < cells.len() { "*" } else { "" };
        (format!("{mean:.4}{marker}"), format!("{sd:.4}"), n)
    };

    let mut table = String::new();
    let _ = writeln!(table, "policy      r      mean_acc   sd        seeds");
    let (mean, sd, n) = stats(&baseline_cells);
    let _ = writeln!(table, "{:<10}  {:<5}  {:<9}  {:<8}  {}", "constant", "-", mean, sd, n);
    for (r, cells) in &rows {
        let (mean, sd, n) = stats(cells);
        let _ = writeln!(
            table,
            "{:<10}  {:<5}  {:<9}  {:<8}  {}",
            row_policy.to_string(),
            r,
            mean,
            sd,
            n
        );
    }
    std::fs::write(dir.join("sweep_summary.txt"), &table)?;
    Ok((table, all_ok))
}
