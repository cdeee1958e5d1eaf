//! Central-difference gradient checking in f64.
//!
//! Reordering is piecewise constant in its input: the loss is differentiable
//! only where no two sibling energies tie and no finite-difference step
//! flips their ranking. Points that violate this are reported as skipped and
//! [`gradcheck`] draws a fresh one. Steps that cross a ReLU or max-pool kink
//! are excluded element by element and counted.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{Init, Network, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub batch: usize,
    pub seed: u64,
    pub init: Init,
    /// Sibling energies closer than this (relative) count as tied.
    pub min_energy_gap: f64,
    pub max_attempts: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            batch: 2,
            seed: 0,
            init: Init {
                weight_std: 0.3,
                bias: 0.05,
            },
            min_energy_gap: 1e-6,
            max_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub kink_skips: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub attempts: usize,
    pub min_energy_gap: Option<f64>,
    /// Why the point was unusable, if it was.
    pub skipped: Option<String>,
}

impl GradcheckReport {
    fn skipped(reason: String, gap: Option<f64>, tolerance: f64) -> Self {
        GradcheckReport {
            checks: Vec::new(),
            max_rel_error: f64::NAN,
            tolerance,
            passed: false,
            attempts: 1,
            min_energy_gap: gap,
            skipped: Some(reason),
        }
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

enum Probe {
    Value(f64),
    Kink,
    Flip,
}

/// Checks every parameter and input gradient of `net` at `(x, labels)`.
pub fn gradcheck_at(
    net: &mut Network<f64>,
    x: &Tensor4<f64>,
    labels: &[usize],
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    net.set_input_grad(true);
    net.loss(x, labels)?;
    let grad_x = net.backward(labels)?.expect("input gradient enabled");
    let base = net.branch_signature();
    let gap = net.min_energy_gap();
    if let Some(g) = gap.filter(|&g| g < opts.min_energy_gap) {
        return Ok(GradcheckReport::skipped(
            format!("patch energies tie (relative gap {g:.3e}); the loss is not differentiable here"),
            gap,
            opts.tolerance,
        ));
    }
    let analytic: Vec<(String, Vec<f64>)> =
        net.params_mut().into_iter().map(|p| (p.name, p.grad.to_vec())).collect();

    let h = opts.step;
    let probe = |net: &mut Network<f64>, x: &Tensor4<f64>| -> Result<Probe> {
        let l = net.loss(x, labels)?;
        let sig = net.branch_signature();
        Ok(if sig.reorder != base.reorder {
            Probe::Flip
        } else if sig.kinks != base.kinks {
            Probe::Kink
        } else {
            Probe::Value(l)
        })
    };
    let flipped = |what: &str| {
        GradcheckReport::skipped(
            format!("a step of {h:e} on {what} changes the patch ranking; the point is not energy-separated"),
            gap,
            opts.tolerance,
        )
    };

    let mut checks = Vec::new();
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            kink_skips: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: None,
        };
        for (j, &a) in grads.iter().enumerate() {
            let orig = net.params_mut()[pi].value[j];
            net.params_mut()[pi].value[j] = orig + h;
            let plus = probe(net, x)?;
            net.params_mut()[pi].value[j] = orig - h;
            let minus = probe(net, x)?;
            net.params_mut()[pi].value[j] = orig;
            match (plus, minus) {
                (Probe::Flip, _) | (_, Probe::Flip) => return Ok(flipped(&format!("{name}[{j}]"))),
                (Probe::Value(lp), Probe::Value(lm)) => record(&mut check, j, a, (lp - lm) / (2.0 * h), opts.floor),
                _ => check.kink_skips += 1,
            }
        }
        checks.push(check);
    }

    let mut check = TensorCheck {
        name: "input".into(),
        checked: 0,
        kink_skips: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
    };
    let mut xp = x.clone();
    for (j, &a) in grad_x.data().iter().enumerate() {
        let orig = x.data()[j];
        xp.data_mut()[j] = orig + h;
        let plus = probe(net, &xp)?;
        xp.data_mut()[j] = orig - h;
        let minus = probe(net, &xp)?;
        xp.data_mut()[j] = orig;
        match (plus, minus) {
            (Probe::Flip, _) | (_, Probe::Flip) => return Ok(flipped(&format!("input[{j}]"))),
            (Probe::Value(lp), Probe::Value(lm)) => record(&mut check, j, a, (lp - lm) / (2.0 * h), opts.floor),
            _ => check.kink_skips += 1,
        }
    }
    checks.push(check);
    // Leave the caches describing the unperturbed point.
    net.loss(x, labels)?;

    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        checks,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
        attempts: 1,
        min_energy_gap: gap,
        skipped: None,
    })
}

fn record(check: &mut TensorCheck, j: usize, analytic: f64, numeric: f64, floor: f64) {
    let rel = rel_error(analytic, numeric, floor);
    check.checked += 1;
    check.max_abs_error = check.max_abs_error.max((analytic - numeric).abs());
    if rel > check.max_rel_error || check.worst_index.is_none() {
        check.max_rel_error = check.max_rel_error.max(rel);
        check.worst_index = Some(j);
    }
}

/// Draws random networks and inputs from `opts.seed` until one is
/// differentiable, then checks it.
pub fn gradcheck(spec: &NetworkSpec, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    spec.validate()?;
    let classes = spec.num_classes().unwrap_or(1);
    let mut last = None;
    for attempt in 0..opts.max_attempts.max(1) {
        let mut rng = Rng::new(opts.seed).derive(attempt as u64);
        let mut net = Network::<f64>::new(spec, &mut rng, opts.init)?;
        let x = Tensor4::gaussian(net.input_dims(opts.batch.max(1)), 0.0, 1.0, &mut rng)?;
        let labels: Vec<usize> = (0..opts.batch.max(1)).map(|_| rng.below(classes)).collect();
        let mut report = gradcheck_at(&mut net, &x, &labels, opts)?;
        report.attempts = attempt + 1;
        if report.skipped.is_none() {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one attempt"))
}
