use serde::{Deserialize, Serialize};

use crate::data::{rotate_image, shift_image};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::{Dims4, Tensor4};

/// Target share of base inputs on which a neuron fires.
pub const FIRING_FRACTION: f64 = 0.01;

/// Transforms applied to every base input. Both grids contain the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OrbitGrid {
    /// Angles in degrees.
    Rotation { angles: Vec<f64> },
    /// `(dy, dx)` shifts as fractions of the image height and width.
    Translation { shifts: Vec<(f64, f64)> },
}

impl OrbitGrid {
    /// -45 to 45 degrees in steps of 9.
    pub fn rotation() -> Self {
        OrbitGrid::Rotation {
            angles: (-5..=5).map(|k| 9.0 * k as f64).collect(),
        }
    }

    /// Every `(dy, dx)` pair from -0.2 to 0.2 in steps of 0.04.
    pub fn translation() -> Self {
        let steps: Vec<f64> = (-5..=5).map(|k| 0.04 * k as f64).collect();
        OrbitGrid::Translation {
            shifts: steps.iter().flat_map(|&dy| steps.iter().map(move |&dx| (dy, dx))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OrbitGrid::Rotation { angles } => angles.len(),
            OrbitGrid::Translation { shifts } => shifts.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, k: usize, img: &[f32], h: usize, w: usize) -> Vec<f32> {
        match self {
            OrbitGrid::Rotation { angles } => rotate_image(img, h, w, angles[k]),
            OrbitGrid::Translation { shifts } => {
                let (dy, dx) = shifts[k];
                shift_image(img, h, w, dy * h as f64, dx * w as f64)
            }
        }
    }
}

/// Layer responses to base inputs and to their transformed copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Responses {
    pub inputs: usize,
    pub orbit: usize,
    pub neurons: usize,
    /// `inputs x neurons`.
    pub base: Vec<f64>,
    /// `inputs x orbit x neurons`.
    pub transformed: Vec<f64>,
}

impl Responses {
    pub fn new(inputs: usize, orbit: usize, neurons: usize, base: Vec<f64>, transformed: Vec<f64>) -> Result<Self> {
        if base.len() != inputs * neurons || transformed.len() != inputs * orbit * neurons {
            return Err(Error::Shape(format!(
                "responses for {inputs} inputs, {orbit} transforms and {neurons} neurons need {} and {} values, got {} and {}",
                inputs * neurons,
                inputs * orbit * neurons,
                base.len(),
                transformed.len()
            )));
        }
        Ok(Responses {
            inputs,
            orbit,
            neurons,
            base,
            transformed,
        })
    }

    fn base_at(&self, input: usize, neuron: usize) -> f64 {
        self.base[input * self.neurons + neuron]
    }

    fn orbit_at(&self, input: usize, k: usize, neuron: usize) -> f64 {
        self.transformed[(input * self.orbit + k) * self.neurons + neuron]
    }
}

/// Runs the first `depth` layers of `net` on every image and every orbit
/// member of it.
pub fn collect_responses<T: Scalar>(
    net: &mut Network<T>,
    images: &Tensor4<f32>,
    depth: usize,
    grid: &OrbitGrid,
    batch: usize,
) -> Result<Responses> {
    let d = images.dims();
    if d.c != 1 {
        return Err(Error::Shape(format!("orbits need single-channel images, got {d}")));
    }
    if grid.is_empty() {
        return Err(Error::Config("orbit grid is empty".into()));
    }
    let (n, k) = (d.n, grid.len());
    let mut base = Vec::new();
    let mut transformed = Vec::new();
    let mut neurons = 0;
    let run = |net: &mut Network<T>, planes: Vec<f32>, count: usize| -> Result<Vec<f64>> {
        let x = Tensor4::from_vec(Dims4::new(count, 1, d.h, d.w), planes)?.cast::<T>();
        Ok(net.forward_to(&x, depth)?.data().iter().map(|v| v.as_f64()).collect())
    };
    let step = batch.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + step).min(n);
        let planes: Vec<f32> = (start..end).flat_map(|i| images.sample(i).to_vec()).collect();
        let out = run(net, planes, end - start)?;
        neurons = out.len() / (end - start);
        base.extend(out);
        for i in start..end {
            let img = images.sample(i);
            let planes: Vec<f32> = (0..k).flat_map(|j| grid.apply(j, img, d.h, d.w)).collect();
            transformed.extend(run(net, planes, k)?);
        }
        start = end;
    }
    Responses::new(n, k, neurons, base, transformed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronScore {
    pub neuron: usize,
    pub threshold: f64,
    pub selectivity: f64,
    pub local_firing: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub neuron: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub inputs: usize,
    pub orbit: usize,
    pub p: f64,
    pub neurons: Vec<NeuronScore>,
    pub excluded: Vec<Excluded>,
    /// Number of top-scoring neurons averaged.
    pub top_count: usize,
    /// Mean score of the top `p` share of included neurons.
    pub top_mean: Option<f64>,
}

impl InvarianceReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("neuron,threshold,selectivity,local_firing,score\n");
        for n in &self.neurons {
            s += &format!(
                "{},{},{},{},{}\n",
                n.neuron, n.threshold, n.selectivity, n.local_firing, n.score
            );
        }
        s
    }
}

/// Threshold for one neuron: the largest observed response that at least
/// `ceil(FIRING_FRACTION * N)` base responses exceed.
fn threshold(values: &mut [f64]) -> std::result::Result<f64, String> {
    values.sort_by(|a, b| b.total_cmp(a));
    let n = values.len();
    if values[0] == values[n - 1] {
        return Err("constant response".into());
    }
    let need = (FIRING_FRACTION * n as f64).ceil() as usize;
    // values[need..] holds the candidates; the first strictly below
    // values[need - 1] has at least `need` values above it.
    let pivot = values[need - 1];
    match values[need..].iter().find(|&&v| v < pivot) {
        Some(&t) => Ok(t),
        None => Err(format!(
            "fewer than {need} of {n} base responses exceed the minimum response"
        )),
    }
}

/// Scores every neuron by `L(i) / G(i)` and averages the top `p` share.
pub fn invariance_score(responses: &Responses, p: f64) -> Result<InvarianceReport> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("top fraction p = {p} outside (0, 1]")));
    }
    let r = responses;
    if r.inputs == 0 || r.orbit == 0 {
        return Err(Error::Config("invariance needs at least one base input and transform".into()));
    }
    if let Some(v) = r.base.iter().chain(&r.transformed).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: 0, value: *v });
    }
    let mut neurons = Vec::new();
    let mut excluded = Vec::new();
    let mut column = vec![0.0; r.inputs];
    for i in 0..r.neurons {
        for (x, slot) in column.iter_mut().enumerate() {
            *slot = r.base_at(x, i);
        }
        let t = match threshold(&mut column) {
            Ok(t) => t,
            Err(reason) => {
                excluded.push(Excluded { neuron: i, reason });
                continue;
            }
        };
        let firing: Vec<usize> = (0..r.inputs).filter(|&x| r.base_at(x, i) > t).collect();
        let hits: usize = firing
            .iter()
            .map(|&x| (0..r.orbit).filter(|&k| r.orbit_at(x, k, i) > t).count())
            .sum();
        let selectivity = firing.len() as f64 / r.inputs as f64;
        let local_firing = hits as f64 / (firing.len() * r.orbit) as f64;
        neurons.push(NeuronScore {
            neuron: i,
            threshold: t,
            selectivity,
            local_firing,
            score: local_firing / selectivity,
        });
    }
    let mut scores: Vec<f64> = neurons.iter().map(|n| n.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let top_count = (p * scores.len() as f64).ceil() as usize;
    let top_mean = (top_count > 0).then(|| scores[..top_count].iter().sum::<f64>() / top_count as f64);
    Ok(InvarianceReport {
        inputs: r.inputs,
        orbit: r.orbit,
        p,
        neurons,
        excluded,
        top_count,
        top_mean,
    })
}
