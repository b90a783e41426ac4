//! `ekd` — energy-scored knowledge distillation pipeline.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 runtime or
//! training failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ekd::config::RunConfig;
use ekd::error::Error;
use ekd::run::{
    run_pipeline, run_sweep, stage_augment, stage_distill, stage_eval, stage_partition,
    stage_pretrain, stage_score, RunPaths,
};

#[derive(Parser)]
#[command(
    name = "ekd",
    version,
    about = "Energy-scored knowledge distillation: score, partition, distill, augment, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset pair (train + test) and a manifest.
    GenData(GenDataArgs),
    /// Run the full pipeline: data, pretrain, score, partition,
    /// augment (optional), distill, eval.
    Pipeline(PipelineArgs),
    /// Pretrain the teacher in an existing run directory.
    Pretrain(StageArgs),
    /// Compute and rank energy scores from the teacher logit dump.
    Score(StageArgs),
    /// Partition ranked scores and build the energy manifest.
    Partition(StageArgs),
    /// Build the high-energy augmented dataset.
    Augment(StageArgs),
    /// Distill the student against the frozen teacher.
    Distill(StageArgs),
    /// Evaluate models and emit metrics.
    Eval(StageArgs),
    /// Run the pipeline over a grid of r values and seeds; emit a summary
    /// table with a constant-temperature baseline row.
    SweepR(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (key = value lines); flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Temperature policy: constant | energy | gradation.
    #[arg(long)]
    policy: Option<String>,
    /// Boundary fraction of the energy partition, in (0, 0.5].
    #[arg(long)]
    r: Option<String>,
    #[arg(long = "base-t")]
    base_t: Option<String>,
    #[arg(long = "t-plus", allow_hyphen_values = true)]
    t_plus: Option<String>,
    #[arg(long = "t-minus", allow_hyphen_values = true)]
    t_minus: Option<String>,
    #[arg(long)]
    segments: Option<String>,
    #[arg(long = "t-min")]
    t_min: Option<String>,
    #[arg(long = "t-max")]
    t_max: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Augmentation: none | cutmix | mixup.
    #[arg(long)]
    heda: Option<String>,
    /// Augmentation source: high | low | mixed | all.
    #[arg(long = "heda-source")]
    heda_source: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let overrides: [(&str, &Option<String>); 13] = [
            ("policy", &self.policy),
            ("r", &self.r),
            ("base_t", &self.base_t),
            ("t_plus", &self.t_plus),
            ("t_minus", &self.t_minus),
            ("segments", &self.segments),
            ("t_min", &self.t_min),
            ("t_max", &self.t_max),
            ("alpha", &self.alpha),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("heda", &self.heda),
            ("heda_source", &self.heda_source),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                cfg.set(key, value)?;
            }
        }
        for assignment in &self.sets {
            let (key, value) = assignment.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got {assignment:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output prefix; writes <out>.train.ekds, <out>.test.ekds, <out>.meta.
    #[arg(long)]
    out: PathBuf,
    /// Dataset kind: blobs | longtail.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    classes: Option<String>,
    /// Train samples per class (most frequent class for longtail).
    #[arg(long = "per-class")]
    per_class: Option<String>,
    #[arg(long = "test-per-class")]
    test_per_class: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    separation: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Imbalance factor in (0, 1] for longtail data.
    #[arg(long)]
    imbalance: Option<String>,
}

#[derive(Args)]
struct RunDirArgs {
    /// Run directory name (or absolute path).
    #[arg(long = "run-dir")]
    run_dir: PathBuf,
    /// Root for relative run directories; defaults to $EKD_RUN_ROOT or
    /// ./runs.
    #[arg(long = "run-root")]
    run_root: Option<PathBuf>,
}

impl RunDirArgs {
    fn resolve(&self) -> PathBuf {
        if self.run_dir.is_absolute() {
            return self.run_dir.clone();
        }
        let root = self
            .run_root
            .clone()
            .or_else(|| std::env::var_os("EKD_RUN_ROOT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("./runs"));
        root.join(&self.run_dir)
    }
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    run: RunDirArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StageArgs {
    /// Existing run directory holding config.resolved and prior stage
    /// outputs.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunDirArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated r values, e.g. 0.1,0.2,0.3.
    #[arg(long = "r-list")]
    r_list: String,
    /// Number of seeds per cell (seed, seed+1, ...).
    #[arg(long, default_value = "5")]
    seeds: usize,
}

fn load_run_config(run: &Path) -> Result<(RunConfig, RunPaths), Error> {
    let paths = RunPaths::new(run);
    let config_path = paths.config();
    if !config_path.exists() {
        return Err(Error::Config(format!(
            "no config.resolved in {}; run `ekd pipeline` first",
            run.display()
        )));
    }
    let cfg = RunConfig::from_file(&config_path)?;
    Ok((cfg, paths))
}

fn real_main() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let mut cfg = RunConfig::default();
            let overrides: [(&str, &Option<String>); 9] = [
                ("data_kind", &args.kind),
                ("classes", &args.classes),
                ("per_class", &args.per_class),
                ("test_per_class", &args.test_per_class),
                ("dim", &args.dim),
                ("class_separation", &args.separation),
                ("noise_sigma", &args.noise),
                ("data_seed", &args.seed),
                ("imbalance_factor", &args.imbalance),
            ];
            for (key, value) in overrides {
                if let Some(value) = value {
                    cfg.set(key, value)?;
                }
            }
            cfg.validate()?;
            let stem = args.out.as_os_str().to_string_lossy().into_owned();
            let train = PathBuf::from(format!("{stem}.train.ekds"));
            let test = PathBuf::from(format!("{stem}.test.ekds"));
            let meta = PathBuf::from(format!("{stem}.meta"));
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            ekd::run::generate_data(&cfg, &train, &test, &meta)?;
            println!("wrote {} {} {}", train.display(), test.display(), meta.display());
            Ok(())
        }
        Command::Pipeline(args) => {
            let cfg = args.config.resolve()?;
            let dir = args.run.resolve();
            let started = std::time::Instant::now();
            let summary = run_pipeline(&cfg, &dir)?;
            eprintln!("pipeline finished in {:.2}s", started.elapsed().as_secs_f64());
            println!("run_dir {}", dir.display());
            println!(
                "teacher_test_accuracy {:.4}",
                summary.teacher_test_accuracy
            );
            println!(
                "student_test_accuracy {:.4}",
                summary.student_test_accuracy
            );
            Ok(())
        }
        Command::Pretrain(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            stage_pretrain(&cfg, &paths)
        }
        Command::Score(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            stage_score(&cfg, &paths)
        }
        Command::Partition(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            stage_partition(&cfg, &paths)
        }
        Command::Augment(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            stage_augment(&cfg, &paths)
        }
        Command::Distill(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            stage_distill(&cfg, &paths)
        }
        Command::Eval(args) => {
            let (cfg, paths) = load_run_config(&args.run)?;
            let summary = stage_eval(&cfg, &paths)?;
            println!(
                "student_test_accuracy {:.4}",
                summary.student_test_accuracy
            );
            Ok(())
        }
        Command::SweepR(args) => {
            let cfg = args.config.resolve()?;
            let r_values: Vec<f64> = args
                .r_list
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad r value {part:?}")))
                })
                .collect::<Result<_, Error>>()?;
            let dir = args.run.resolve();
            let (table, all_ok) = run_sweep(&cfg, &r_values, args.seeds, &dir)?;
            print!("{table}");
            if all_ok {
                Ok(())
            } else {
                Err(Error::Generation("one or more sweep cells failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
