use std::fs;
use std::path::{Path, PathBuf};

use prcnn::analysis::{
    ablation_sweep, collect_responses, invariance_score, weight_redundancy, OrbitGrid, ABLATION_HEADER,
};
use prcnn::data::{load_set, make_distorted_set, parse_idx, save_set, MnistSet, TransformSpec};
use prcnn::gradcheck::{gradcheck, GradcheckOptions};
use prcnn::network::{CheckpointManifest, MnistArch, CHECKPOINT_MANIFEST};
use prcnn::train::{evaluate, train, MetricsWriter, TrainConfig};
use prcnn::{DType, Error, Network, NetworkSpec, PatchReorderConfig, Rng, Scalar};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::CliError;

pub const TRAIN_STEM: &str = "train";
pub const TEST_STEM: &str = "test";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    /// Rotation by a uniform angle in [-90, 90] degrees.
    R,
    /// Placement at a uniform offset on a 42x42 canvas.
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Rotation,
    Translation,
}

/// Sweep description read from a grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_kernels")]
    pub kernels: (usize, usize),
    /// Conv layers (1-based) to follow with a reorder layer, one per model.
    #[serde(default)]
    pub placements: Vec<usize>,
    #[serde(default)]
    pub levels: Vec<PatchReorderConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_filters() -> usize {
    64
}

fn default_kernels() -> (usize, usize) {
    (9, 7)
}

/// A fully resolved unit of work. Stored in the run manifest so the run can
/// be repeated from the manifest alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    PrepareData {
        mnist_dir: PathBuf,
        transform: TransformKind,
        seed: u64,
        limit_train: Option<usize>,
        limit_test: Option<usize>,
    },
    Train {
        spec: NetworkSpec,
        config: TrainConfig,
        data: PathBuf,
        dtype: DType,
    },
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
    },
    Gradcheck {
        spec: NetworkSpec,
        options: GradcheckOptions,
    },
    Invariance {
        checkpoint: PathBuf,
        data: PathBuf,
        grid: OrbitGrid,
        layer: String,
        limit: Option<usize>,
        p: f64,
    },
    Redundancy {
        checkpoint: PathBuf,
        layer: String,
        max_pairs: usize,
        seed: u64,
    },
    Ablate {
        grid: AblationGrid,
        data: PathBuf,
    },
}

impl Job {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::PrepareData { seed, .. } | Job::Redundancy { seed, .. } => Some(*seed),
            Job::Train { config, .. } => Some(config.seed),
            Job::Gradcheck { options, .. } => Some(options.seed),
            Job::Ablate { grid, .. } => Some(grid.train.seed),
            _ => None,
        }
    }
}

/// What a finished job produced.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    /// Set when the job ran to completion but its result is a failure.
    pub failure: Option<CliError>,
}

impl Outcome {
    fn ok(outputs: Vec<PathBuf>) -> Self {
        Outcome { outputs, failure: None }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// Resolves `train-images-idx3-ubyte` and its common spellings, gzipped or not.
fn find_idx(dir: &Path, split: &str, kind: &str) -> Result<PathBuf, CliError> {
    let (tag, dims) = if kind == "images" { ("images", "idx3") } else { ("labels", "idx1") };
    let split = if split == "train" { "train" } else { "t10k" };
    let stems = [format!("{split}-{tag}-{dims}-ubyte"), format!("{split}-{tag}.{dims}-ubyte")];
    for stem in &stems {
        for name in [stem.clone(), format!("{stem}.gz")] {
            let p = dir.join(&name);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(Error::format(dir.join(&stems[0]), "MNIST file not found (also tried .gz and dotted names)").into())
}

pub fn load_split(dir: &Path, stem: &str) -> Result<MnistSet, CliError> {
    Ok(load_set(dir, stem)?)
}

fn checkpoint_dtype(dir: &Path) -> Result<DType, CliError> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(m.dtype)
}

/// Accepts either a checkpoint directory or a train run directory holding one.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.join(CHECKPOINT_MANIFEST).is_file() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

pub fn execute(job: &Job, out: &Path) -> Result<Outcome, CliError> {
    match job {
        Job::PrepareData {
            mnist_dir,
            transform,
            seed,
            limit_train,
            limit_test,
        } => prepare_data(mnist_dir, *transform, *seed, *limit_train, *limit_test, out),
        Job::Train {
            spec,
            config,
            data,
            dtype,
        } => match dtype {
            DType::F32 => run_train::<f32>(spec, config, data, out),
            DType::F64 => run_train::<f64>(spec, config, data, out),
        },
        Job::Eval { checkpoint, data } => match checkpoint_dtype(checkpoint)? {
            DType::F32 => run_eval::<f32>(checkpoint, data, out),
            DType::F64 => run_eval::<f64>(checkpoint, data, out),
        },
        Job::Gradcheck { spec, options } => run_gradcheck(spec, options, out),
        Job::Invariance {
            checkpoint,
            data,
            grid,
            layer,
            limit,
            p,
        } => match checkpoint_dtype(checkpoint)? {
            DType::F32 => run_invariance::<f32>(checkpoint, data, grid, layer, *limit, *p, out),
            DType::F64 => run_invariance::<f64>(checkpoint, data, grid, layer, *limit, *p, out),
        },
        Job::Redundancy {
            checkpoint,
            layer,
            max_pairs,
            seed,
        } => run_redundancy(checkpoint, layer, *max_pairs, *seed, out),
        Job::Ablate { grid, data } => run_ablate(grid, data, out),
    }
}

fn prepare_data(
    mnist_dir: &Path,
    transform: TransformKind,
    seed: u64,
    limit_train: Option<usize>,
    limit_test: Option<usize>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let spec = match transform {
        TransformKind::R => TransformSpec::rotation(),
        TransformKind::T => TransformSpec::translation(),
    };
    let root = Rng::new(seed);
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    for (split, stem, limit, stream) in [
        ("train", TRAIN_STEM, limit_train, 1u64),
        ("test", TEST_STEM, limit_test, 2u64),
    ] {
        let raw = parse_idx(&find_idx(mnist_dir, split, "images")?, &find_idx(mnist_dir, split, "labels")?)?;
        let raw = match limit {
            Some(n) => raw.head(n.min(raw.len()))?,
            None => raw,
        };
        let split_seed = root.derive(stream).next_u64();
        let (set, _) = make_distorted_set(&raw, &spec, split_seed)?;
        save_set(&set, out, stem)?;
        outputs.push(out.join(format!("{stem}.prt4")));
        outputs.push(out.join(format!("{stem}-labels.idx1")));
        summary.insert(
            split.into(),
            json!({ "samples": set.len(), "side": set.side(), "seed": split_seed }),
        );
    }
    summary.insert("transform".into(), serde_json::to_value(spec).map_err(Error::from)?);
    let path = out.join("data.json");
    write_json(&path, &serde_json::Value::Object(summary))?;
    outputs.push(path);
    Ok(Outcome::ok(outputs))
}

fn run_train<T: Scalar>(spec: &NetworkSpec, cfg: &TrainConfig, data: &Path, out: &Path) -> Result<Outcome, CliError> {
    let train_set = load_split(data, TRAIN_STEM)?;
    let test_set = load_split(data, TEST_STEM)?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let result = train::<T>(spec, cfg, &train_set, Some(&test_set), |row| metrics.write(row))?;
    let ckpt = out.join(CHECKPOINT_DIR);
    result.network.save_checkpoint(&ckpt)?;
    let last = result.log.last();
    let summary = json!({
        "iterations": result.log.len(),
        "final_train_loss": last.map(|r| r.train_loss),
        "final_eval_error": last.and_then(|r| r.eval_error),
        "diverged": result.diverged.map(|(iter, loss)| json!({ "iter": iter, "loss": loss.to_string() })),
    });
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    let outputs = vec![metrics_path, ckpt, summary_path];
    let failure = result.diverged.map(|(iter, loss)| {
        CliError::Core(Error::Divergence { iter, loss })
    });
    Ok(Outcome { outputs, failure })
}

fn run_eval<T: Scalar>(checkpoint: &Path, data: &Path, out: &Path) -> Result<Outcome, CliError> {
    let mut net = Network::<T>::load_checkpoint(checkpoint)?;
    let set = load_split(data, TEST_STEM)?;
    let error = evaluate(&mut net, &set, 500)?;
    let path = out.join("eval.json");
    write_json(&path, &json!({ "split": TEST_STEM, "samples": set.len(), "error_percent": error }))?;
    println!("test error {error}% on {} samples", set.len());
    Ok(Outcome::ok(vec![path]))
}

fn run_gradcheck(spec: &NetworkSpec, options: &GradcheckOptions, out: &Path) -> Result<Outcome, CliError> {
    let report = gradcheck(spec, options)?;
    let path = out.join("gradcheck.json");
    write_json(&path, &serde_json::to_value(&report).map_err(Error::from)?)?;
    for c in &report.checks {
        println!(
            "{:<14} checked {:>5}  kink skips {:>3}  max rel {:.3e}",
            c.name, c.checked, c.kink_skips, c.max_rel_error
        );
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_rel_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    let failure = (!report.passed).then(|| {
        CliError::Numeric(match &report.skipped {
            Some(why) => format!("gradient check skipped: {why}"),
            None => format!(
                "max relative error {:.3e} exceeds {:.0e}",
                report.max_rel_error, report.tolerance
            ),
        })
    });
    Ok(Outcome {
        outputs: vec![path],
        failure,
    })
}

fn run_invariance<T: Scalar>(
    checkpoint: &Path,
    data: &Path,
    grid: &OrbitGrid,
    layer: &str,
    limit: Option<usize>,
    p: f64,
    out: &Path,
) -> Result<Outcome, CliError> {
    let mut net = Network::<T>::load_checkpoint(checkpoint)?;
    let depth = net.layer_depth(layer)?;
    let set = load_split(data, TEST_STEM)?;
    let set = match limit {
        Some(n) => set.head(n.min(set.len()))?,
        None => set,
    };
    let responses = collect_responses(&mut net, &set.images, depth, grid, 100)?;
    let report = invariance_score(&responses, p)?;
    let csv = out.join("invariance.csv");
    write_text(&csv, &report.csv())?;
    let summary = out.join("invariance.json");
    write_json(
        &summary,
        &json!({
            "layer": layer,
            "inputs": report.inputs,
            "orbit": report.orbit,
            "grid": grid,
            "p": report.p,
            "included": report.neurons.len(),
            "excluded": report.excluded,
            "top_count": report.top_count,
            "top_mean": report.top_mean,
        }),
    )?;
    match report.top_mean {
        Some(m) => println!("{layer}: top-{p} mean invariance score {m} over {} neurons", report.top_count),
        None => println!("{layer}: no neuron passed the selectivity filter"),
    }
    Ok(Outcome::ok(vec![csv, summary]))
}

fn run_redundancy(checkpoint: &Path, layer: &str, max_pairs: usize, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let net = match checkpoint_dtype(checkpoint)? {
        DType::F32 => Network::<f32>::load_checkpoint(checkpoint)?.cast::<f64>()?,
        DType::F64 => Network::<f64>::load_checkpoint(checkpoint)?,
    };
    let name = format!("{layer}.weight");
    let (_, w) = net
        .param_tensors()
        .into_iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::Usage(format!("checkpoint has no weights named {name}")))?;
    let d = w.dims();
    let hist = weight_redundancy(w.data(), d.n, d.sample_len(), max_pairs, &mut Rng::new(seed))?;
    let csv = out.join("redundancy.csv");
    write_text(&csv, &hist.csv())?;
    let summary = out.join("redundancy.json");
    write_json(&summary, &serde_json::to_value(&hist).map_err(Error::from)?)?;
    println!(
        "{layer}: {} pairs of {}-dim rows, mean |cos| {}",
        hist.pairs, hist.cols, hist.mean_abs_cos
    );
    Ok(Outcome::ok(vec![csv, summary]))
}

fn run_ablate(grid: &AblationGrid, data: &Path, out: &Path) -> Result<Outcome, CliError> {
    let train_set = load_split(data, TRAIN_STEM)?;
    let test_set = load_split(data, TEST_STEM)?;
    let arch = MnistArch {
        side: train_set.side().0,
        filters: grid.filters,
        kernels: grid.kernels,
    };
    let path = out.join("ablation.csv");
    let mut text = format!("{ABLATION_HEADER}\n");
    write_text(&path, &text)?;
    let rows = ablation_sweep(arch, &grid.placements, &grid.levels, &grid.train, &train_set, &test_set, |row| {
        text += &row.csv();
        text.push('\n');
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))
    })?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} cells, {failed} failed", rows.len());
    Ok(Outcome::ok(vec![path]))
}
