//! `prcnn` command-line driver.
//!
//! Every subcommand resolves its flags and files into a [`jobs::Job`], runs it
//! in a fresh output directory and leaves a `manifest.json` there describing
//! the run. `prcnn rerun` repeats a job from such a manifest.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (divergence, failed gradient check).

mod jobs;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prcnn::analysis::{OrbitGrid, DEFAULT_MAX_PAIRS};
use prcnn::gradcheck::GradcheckOptions;
use prcnn::train::TrainConfig;
use prcnn::{DType, Error, ErrorClass, NetworkSpec};
use serde::de::DeserializeOwned;

use jobs::{AblationGrid, GridKind, Job, TransformKind};
use manifest::{claim_run_dir, git_describe, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "prcnn", version, about = "Patch-reordering CNN experiments")]
struct Cli {
    /// Worker threads for the compute pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a distorted MNIST variant from the IDX files.
    PrepareData {
        /// Directory holding train-images-idx3-ubyte and friends (optionally .gz).
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long, value_enum)]
        transform: TransformKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        limit_train: Option<usize>,
        #[arg(long)]
        limit_test: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network with SGD.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// TOML training config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Directory written by prepare-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_dtype, default_value = "f32")]
        dtype: DType,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        /// TOML gradcheck options; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invariance scores of one layer's units over a transformation orbit.
    Invariance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "rotation")]
        grid: GridKind,
        #[arg(long, default_value = "pool2")]
        layer: String,
        /// Number of test images used as orbit centres.
        #[arg(long, default_value_t = 1000)]
        limit: usize,
        /// Share of top-scoring units averaged.
        #[arg(long, default_value_t = 0.2)]
        p: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of pairwise |cosine| between weight rows.
    Redundancy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "dense1")]
        layer: String,
        #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
        max_pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per grid cell and tabulate test errors.
    Ablate {
        /// TOML grid file.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the job recorded in a run manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Network description file, JSON or TOML.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Built-in network: mnist_cnn, mnist_prcnn, tiny_cnn or tiny_prcnn.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long)]
    total_iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_batch: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { cfg.$f = v; } )*};
        }
        set!(base_lr, lr_decay_factor, lr_step, total_iters, batch, momentum, weight_decay, seed, eval_every, eval_batch);
    }
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        _ => Err(format!("unknown dtype {s:?} (expected f32 or f64)")),
    }
}

/// Parses a TOML file, or JSON when the extension says so.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|msg| CliError::Usage(format!("{}: {}", path.display(), msg.trim_end())))
}

fn resolve_spec(model: &ModelArgs, side: Option<usize>, default: &str) -> Result<NetworkSpec, CliError> {
    let spec = match (&model.spec, &model.preset) {
        (Some(path), _) => {
            let spec: NetworkSpec = if path.extension().is_some_and(|e| e == "toml") {
                read_config(path)?
            } else {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            };
            spec.validate()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            spec
        }
        (None, preset) => {
            let name = preset.as_deref().unwrap_or(default);
            NetworkSpec::preset(name, side.unwrap_or(28)).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown preset {name:?} (expected mnist_cnn, mnist_prcnn, tiny_cnn or tiny_prcnn)"
                ))
            })?
        }
    };
    Ok(spec)
}

fn data_side(data: &Path) -> Result<usize, CliError> {
    Ok(jobs::load_split(data, jobs::TEST_STEM)?.side().0)
}

/// Turns parsed arguments into a job and its output directory.
fn resolve(command: Command) -> Result<(Job, PathBuf), CliError> {
    Ok(match command {
        Command::PrepareData {
            mnist_dir,
            transform,
            seed,
            limit_train,
            limit_test,
            out,
        } => (
            Job::PrepareData {
                mnist_dir,
                transform,
                seed,
                limit_train,
                limit_test,
            },
            out,
        ),
        Command::Train {
            model,
            config,
            overrides,
            data,
            dtype,
            out,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(path) => read_config(path)?,
                None => TrainConfig::default(),
            };
            overrides.apply(&mut cfg);
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let side = if model.spec.is_none() { Some(data_side(&data)?) } else { None };
            let spec = resolve_spec(&model, side, "mnist_prcnn")?;
            (
                Job::Train {
                    spec,
                    config: cfg,
                    data,
                    dtype,
                },
                out,
            )
        }
        Command::Eval { checkpoint, data, out } => (
            Job::Eval {
                checkpoint: jobs::resolve_checkpoint(&checkpoint),
                data,
            },
            out,
        ),
        Command::Gradcheck {
            model,
            config,
            tolerance,
            seed,
            out,
        } => {
            let mut options: GradcheckOptions = match &config {
                Some(path) => read_config(path)?,
                None => GradcheckOptions::default(),
            };
            if let Some(t) = tolerance {
                options.tolerance = t;
            }
            if let Some(s) = seed {
                options.seed = s;
            }
            let spec = resolve_spec(&model, None, "tiny_prcnn")?;
            (Job::Gradcheck { spec, options }, out)
        }
        Command::Invariance {
            checkpoint,
            data,
            grid,
            layer,
            limit,
            p,
            out,
        } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(CliError::Usage(format!("--p must lie in (0, 1], got {p}")));
            }
            let grid = match grid {
                GridKind::Rotation => OrbitGrid::rotation(),
                GridKind::Translation => OrbitGrid::translation(),
            };
            (
                Job::Invariance {
                    checkpoint: jobs::resolve_checkpoint(&checkpoint),
                    data,
                    grid,
                    layer,
                    limit: Some(limit),
                    p,
                },
                out,
            )
        }
        Command::Redundancy {
            checkpoint,
            layer,
            max_pairs,
            seed,
            out,
        } => (
            Job::Redundancy {
                checkpoint: jobs::resolve_checkpoint(&checkpoint),
                layer,
                max_pairs,
                seed,
            },
            out,
        ),
        Command::Ablate { grid, data, out } => {
            let grid: AblationGrid = read_config(&grid)?;
            grid.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            (Job::Ablate { grid, data }, out)
        }
        Command::Rerun { manifest, out } => (RunManifest::load(&manifest)?.job, out),
    })
}

fn run(cli: Cli, argv: String) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let (job, out) = resolve(cli.command)?;
    claim_run_dir(&out)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let result = jobs::execute(&job, &out);
    let (outputs, err) = match result {
        Ok(o) => (o.outputs, o.failure),
        Err(e) => (Vec::new(), Some(e)),
    };
    let manifest = RunManifest {
        command: argv,
        seed: job.seed(),
        job,
        threads: rayon::current_num_threads(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: outputs
            .iter()
            .map(|p| p.strip_prefix(&out).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
            .collect(),
        status: match &err {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        },
        exit_code: err.as_ref().map_or(0, |e| e.exit_code() as i32),
    };
    manifest.write(&out)?;
    err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let argv = std::env::args().collect::<Vec<_>>().join(" ");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
