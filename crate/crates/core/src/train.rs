//! Minibatch SGD with a step learning-rate schedule.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MnistSet;
use crate::error::{Error, Result};
use crate::network::{Init, Network, NetworkSpec};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_step: usize,
    pub total_iters: usize,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate every this many iterations and after the last one.
    pub eval_every: usize,
    pub eval_batch: usize,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            lr_decay_factor: 0.1,
            lr_step: 50_000,
            total_iters: 150_000,
            batch: 256,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            eval_every: 1000,
            eval_batch: 500,
            init: Init::default(),
        }
    }
}

impl TrainConfig {
    /// `base_lr * decay^floor(iter / step)` for a 0-based iteration.
    pub fn lr_at(&self, iter: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi((iter / self.lr_step) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_step == 0 || self.batch == 0 || self.eval_every == 0 || self.eval_batch == 0 {
            return bad("lr_step, batch, eval_every and eval_batch must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Number of completed iterations.
    pub iter: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Percent misclassified on the evaluation set.
    pub eval_error: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,lr,train_loss,eval_error";

impl LogRow {
    pub fn csv(&self) -> String {
        let eval = self.eval_error.map(|e| e.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.iter, self.lr, self.train_loss, eval)
    }
}

/// Streams [`LogRow`]s to a CSV file, flushing after each row.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        self.line(&row.csv())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Final parameters, or the last ones that gave a finite loss if training
    /// diverged.
    pub network: Network<T>,
    pub log: Vec<LogRow>,
    /// `(iteration, loss)` of the first non-finite loss.
    pub diverged: Option<(usize, f64)>,
}

/// Percent of `set` misclassified by `net`.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, set: &MnistSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let labels = set.labels_usize();
    let mut wrong = 0usize;
    let mut start = 0;
    while start < set.len() {
        let end = (start + batch.max(1)).min(set.len());
        let x = set.images.slice_samples(start..end)?.cast::<T>();
        let pred = net.predict(&x)?;
        wrong += pred.iter().zip(&labels[start..end]).filter(|(p, l)| p != l).count();
        start = end;
    }
    Ok(100.0 * wrong as f64 / set.len() as f64)
}

/// Cycles through a training set in freshly shuffled epochs.
struct BatchSampler {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(len: usize, rng: Rng) -> Self {
        BatchSampler {
            rng,
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            let take = (batch - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Initializes a network from `cfg.seed` and trains it.
///
/// `on_row` sees every log row as it is produced.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train_set: &MnistSet,
    eval_set: Option<&MnistSet>,
    on_row: impl FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let root = Rng::new(cfg.seed);
    let net = Network::<T>::new(spec, &mut root.derive(1), cfg.init)?;
    train_from(net, cfg, train_set, eval_set, on_row)
}

/// Trains an existing network in place of [`train`]'s fresh initialization.
pub fn train_from<T: Scalar>(
    mut net: Network<T>,
    cfg: &TrainConfig,
    train_set: &MnistSet,
    eval_set: Option<&MnistSet>,
    mut on_row: impl FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (c, h, w) = net.spec().input;
    let (sh, sw) = train_set.side();
    if (c, h, w) != (1, sh, sw) {
        return Err(Error::Shape(format!(
            "network expects {c}x{h}x{w} inputs, data is 1x{sh}x{sw}"
        )));
    }
    let labels = train_set.labels_usize();
    let mut sampler = BatchSampler::new(train_set.len(), Rng::new(cfg.seed).derive(2));
    let mut velocity: Vec<Vec<T>> = net.params_mut().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
    let mut log = Vec::with_capacity(cfg.total_iters);
    let mut last_good: Vec<Vec<T>> = Vec::new();
    let wd = T::from_f64(cfg.weight_decay);
    let mu = T::from_f64(cfg.momentum);

    for t in 0..cfg.total_iters {
        let idx = sampler.next(cfg.batch);
        let x = train_set.images.gather_samples(&idx)?.cast::<T>();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let loss = match net.loss_and_grad(&x, &y) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Ok(diverged(net, &last_good, log, t + 1, l)),
            Err(Error::NonFinite { .. }) => return Ok(diverged(net, &last_good, log, t + 1, f64::NAN)),
            Err(e) => return Err(e),
        };
        let lr = cfg.lr_at(t);
        let step = T::from_f64(lr);
        last_good = net.params_mut().iter().map(|p| p.value.to_vec()).collect();
        for (p, v) in net.params_mut().into_iter().zip(&mut velocity) {
            for ((w, &g), vel) in p.value.iter_mut().zip(p.grad).zip(v.iter_mut()) {
                let g = g + wd * *w;
                *vel = mu * *vel - step * g;
                *w += *vel;
            }
        }
        if net.params_mut().iter().any(|p| p.value.iter().any(|v| !v.is_finite())) {
            return Ok(diverged(net, &last_good, log, t + 1, f64::NAN));
        }
        let done = t + 1;
        let eval_error = match eval_set {
            Some(set) if done % cfg.eval_every == 0 || done == cfg.total_iters => {
                Some(evaluate(&mut net, set, cfg.eval_batch)?)
            }
            _ => None,
        };
        let row = LogRow {
            iter: done,
            lr,
            train_loss: loss,
            eval_error,
        };
        on_row(&row)?;
        log.push(row);
    }
    Ok(TrainOutcome {
        network: net,
        log,
        diverged: None,
    })
}

fn diverged<T: Scalar>(
    mut net: Network<T>,
    last_good: &[Vec<T>],
    log: Vec<LogRow>,
    iter: usize,
    loss: f64,
) -> TrainOutcome<T> {
    if !last_good.is_empty() {
        for (p, good) in net.params_mut().into_iter().zip(last_good) {
            p.value.copy_from_slice(good);
        }
    }
    TrainOutcome {
        network: net,
        log,
        diverged: Some((iter, loss)),
    }
}
