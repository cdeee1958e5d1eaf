//! Network descriptions, the stateful layer stack built from them, and
//! checkpoints.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_impl, conv2d_forward, conv_output_hw, dense_backward, dense_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_xent_backward,
    softmax_xent_forward, Conv2d, Dense, MaxPool,
};
use crate::reorder::{partition, pr_backward, pr_forward_with, EnergyMap, Hierarchy, PatchReorderConfig, PermutationRecord};
use crate::rng::Rng;
use crate::scalar::{DType, Scalar};
use crate::tensor::{Dims4, Tensor4};

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Pool {
        #[serde(default = "two")]
        window: usize,
        #[serde(default = "two")]
        stride: usize,
    },
    Relu,
    Dense {
        out: usize,
    },
    Reorder(PatchReorderConfig),
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `(channels, height, width)` of one input sample.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Kernel sizes and width of the two-conv MNIST family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MnistArch {
    pub side: usize,
    pub filters: usize,
    pub kernels: (usize, usize),
}

impl MnistArch {
    /// 9x9 then 7x7 convolutions with 64 filters.
    pub fn full(side: usize) -> Self {
        MnistArch {
            side,
            filters: 64,
            kernels: (9, 7),
        }
    }

    /// 12x12 inputs, 4 filters, 3x3 then 2x2 kernels: small enough for
    /// exhaustive finite differences.
    pub fn tiny() -> Self {
        MnistArch {
            side: 12,
            filters: 4,
            kernels: (3, 2),
        }
    }
}

impl NetworkSpec {
    /// conv → relu → pool → conv → relu → pool → dense(10) → softmax, with a
    /// reorder layer after the ReLU of each listed conv (1-based).
    pub fn mnist(arch: MnistArch, reorder_after: &[(usize, PatchReorderConfig)]) -> Self {
        let mut layers = Vec::new();
        for (i, k) in [arch.kernels.0, arch.kernels.1].into_iter().enumerate() {
            layers.push(LayerSpec::Conv {
                out_channels: arch.filters,
                kernel: k,
                stride: 1,
                padding: 0,
            });
            layers.push(LayerSpec::Relu);
            for (_, cfg) in reorder_after.iter().filter(|(at, _)| *at == i + 1) {
                layers.push(LayerSpec::Reorder(cfg.clone()));
            }
            layers.push(LayerSpec::Pool { window: 2, stride: 2 });
        }
        layers.push(LayerSpec::Dense { out: 10 });
        layers.push(LayerSpec::Softmax);
        NetworkSpec {
            input: (1, arch.side, arch.side),
            layers,
        }
    }

    pub fn mnist_cnn(side: usize) -> Self {
        Self::mnist(MnistArch::full(side), &[])
    }

    /// Baseline plus one level of 2x2 L1 reordering after the second conv.
    pub fn mnist_prcnn(side: usize) -> Self {
        Self::mnist(MnistArch::full(side), &[(2, PatchReorderConfig::pyramid(2, 1))])
    }

    pub fn tiny_cnn() -> Self {
        Self::mnist(MnistArch::tiny(), &[])
    }

    pub fn tiny_prcnn() -> Self {
        Self::mnist(MnistArch::tiny(), &[(2, PatchReorderConfig::pyramid(2, 1))])
    }

    /// Resolves a preset name for a given input side.
    pub fn preset(name: &str, side: usize) -> Option<Self> {
        match name {
            "mnist_cnn" => Some(Self::mnist_cnn(side)),
            "mnist_prcnn" => Some(Self::mnist_prcnn(side)),
            "tiny_cnn" => Some(Self::tiny_cnn()),
            "tiny_prcnn" => Some(Self::tiny_prcnn()),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Dense { out } => Some(*out),
            _ => None,
        })
    }

    /// Per-sample output `(c, h, w)` of every layer, checking compatibility.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (c0, h0, w0) = self.input;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::Config(format!("input {:?} has a zero dimension", self.input)));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return Err(Error::Config("layers: the last layer must be softmax".into())),
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let at = |msg: String| Error::Config(format!("layers[{i}]: {msg}"));
            let (c, h, w) = shape;
            shape = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if *out_channels == 0 || *stride == 0 {
                        return Err(at("conv needs out_channels >= 1 and stride >= 1".into()));
                    }
                    let (oh, ow) = conv_output_hw(h, w, *kernel, *kernel, *stride, *padding)
                        .map_err(|e| at(e.to_string()))?;
                    (*out_channels, oh, ow)
                }
                LayerSpec::Pool { window, stride } => {
                    let p = MaxPool::new(*window, *stride).map_err(|e| at(e.to_string()))?;
                    let (oh, ow) = p.output_hw(h, w).map_err(|e| at(e.to_string()))?;
                    (c, oh, ow)
                }
                LayerSpec::Relu => shape,
                LayerSpec::Dense { out } => {
                    if *out == 0 {
                        return Err(at("dense needs out >= 1".into()));
                    }
                    (*out, 1, 1)
                }
                LayerSpec::Reorder(cfg) => {
                    partition(h, w, cfg).map_err(|e| at(e.to_string()))?;
                    shape
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(at("softmax may only appear last".into()));
                    }
                    if h != 1 || w != 1 {
                        return Err(at(format!("softmax needs dense logits, got {c}x{h}x{w}")));
                    }
                    shape
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Indices of reorder layers.
    pub fn reorder_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Reorder(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Weight initialization: `N(0, weight_std^2)` weights, constant bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Init {
    pub weight_std: f64,
    pub bias: f64,
}

impl Default for Init {
    fn default() -> Self {
        Init {
            weight_std: 0.01,
            bias: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
enum Node<T: Scalar> {
    Conv {
        name: String,
        layer: Conv2d<T>,
        grad_kernels: Tensor4<T>,
        grad_bias: Vec<T>,
        input: Option<Tensor4<T>>,
    },
    Pool {
        pool: MaxPool,
        argmax: Vec<usize>,
        in_dims: Option<Dims4>,
    },
    Relu {
        input: Option<Tensor4<T>>,
    },
    Dense {
        name: String,
        layer: Dense<T>,
        grad_weights: Tensor4<T>,
        grad_bias: Vec<T>,
        input: Option<Tensor4<T>>,
    },
    Reorder {
        config: PatchReorderConfig,
        hierarchy: Hierarchy,
        record: Option<PermutationRecord>,
        energies: Vec<EnergyMap<T>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSignature {
    pub kinks: u64,
    pub reorder: u64,
}

/// Named view of one parameter tensor and its gradient.
pub struct ParamMut<'a, T: Scalar> {
    pub name: String,
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f64> {
    spec: NetworkSpec,
    nodes: Vec<Node<T>>,
    input_grad: bool,
    probs: Option<Tensor4<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: &NetworkSpec, rng: &mut Rng, init: Init) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut nodes = Vec::new();
        let mut prev = spec.input;
        let (mut convs, mut denses) = (0, 0);
        for (layer, &shape) in spec.layers.iter().zip(&shapes) {
            let node = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    convs += 1;
                    let kd = Dims4::new(*out_channels, prev.0, *kernel, *kernel);
                    let kernels = Tensor4::gaussian(kd, 0.0, init.weight_std, rng)?;
                    Some(Node::Conv {
                        name: format!("conv{convs}"),
                        layer: Conv2d::new(kernels, vec![T::from_f64(init.bias); *out_channels], *stride, *padding)?,
                        grad_kernels: Tensor4::zeros(kd)?,
                        grad_bias: vec![T::zero(); *out_channels],
                        input: None,
                    })
                }
                LayerSpec::Pool { window, stride } => Some(Node::Pool {
                    pool: MaxPool::new(*window, *stride)?,
                    argmax: Vec::new(),
                    in_dims: None,
                }),
                LayerSpec::Relu => Some(Node::Relu { input: None }),
                LayerSpec::Dense { out } => {
                    denses += 1;
                    let wd = Dims4::new(*out, prev.0 * prev.1 * prev.2, 1, 1);
                    let weights = Tensor4::gaussian(wd, 0.0, init.weight_std, rng)?;
                    Some(Node::Dense {
                        name: format!("dense{denses}"),
                        layer: Dense::new(weights, vec![T::from_f64(init.bias); *out])?,
                        grad_weights: Tensor4::zeros(wd)?,
                        grad_bias: vec![T::zero(); *out],
                        input: None,
                    })
                }
                LayerSpec::Reorder(cfg) => Some(Node::Reorder {
                    config: cfg.clone(),
                    hierarchy: partition(prev.1, prev.2, cfg)?,
                    record: None,
                    energies: Vec::new(),
                }),
                LayerSpec::Softmax => None,
            };
            nodes.extend(node);
            prev = shape;
        }
        Ok(Network {
            spec: spec.clone(),
            nodes,
            input_grad: false,
            probs: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Whether [`Network::backward`] should also produce the input gradient.
    pub fn set_input_grad(&mut self, on: bool) {
        self.input_grad = on;
    }

    /// Number of stateful layers (the softmax head is not one).
    pub fn depth(&self) -> usize {
        self.nodes.len()
    }

    /// Names of the stateful layers in order: `conv1`, `relu1`, `pool1`,
    /// `reorder1`, `dense1` and so on, numbered per kind.
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::HashMap::new();
        self.nodes
            .iter()
            .map(|n| {
                let kind = match n {
                    Node::Conv { .. } => "conv",
                    Node::Pool { .. } => "pool",
                    Node::Relu { .. } => "relu",
                    Node::Dense { .. } => "dense",
                    Node::Reorder { .. } => "reorder",
                };
                let k = counts.entry(kind).or_insert(0);
                *k += 1;
                format!("{kind}{k}")
            })
            .collect()
    }

    /// Number of layers to run to obtain the output of the named layer.
    pub fn layer_depth(&self, name: &str) -> Result<usize> {
        let names = self.layer_names();
        names
            .iter()
            .position(|n| n == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::Config(format!("no layer named {name}; layers are {}", names.join(", "))))
    }

    pub fn input_dims(&self, n: usize) -> Dims4 {
        let (c, h, w) = self.spec.input;
        Dims4::new(n, c, h, w)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let want = self.input_dims(x.dims().n);
        if x.dims() != want {
            return Err(Error::Shape(format!("network input is {want}, got {}", x.dims())));
        }
        Ok(())
    }

    /// Runs layers `0..upto`, caching what backward needs.
    pub fn forward_to(&mut self, x: &Tensor4<T>, upto: usize) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for node in self.nodes.iter_mut().take(upto) {
            act = match node {
                Node::Conv { layer, input, .. } => {
                    let y = conv2d_forward(&act, layer)?;
                    *input = Some(act);
                    y
                }
                Node::Pool { pool, argmax, in_dims } => {
                    let (y, arg) = maxpool_forward(&act, pool)?;
                    *argmax = arg;
                    *in_dims = Some(act.dims());
                    y
                }
                Node::Relu { input } => {
                    let y = relu_forward(&act);
                    *input = Some(act);
                    y
                }
                Node::Dense { layer, input, .. } => {
                    let y = dense_forward(&act, layer)?;
                    *input = Some(act);
                    y
                }
                Node::Reorder {
                    config,
                    hierarchy,
                    record,
                    energies,
                } => {
                    let (z, rec, e) = pr_forward_with(&act, hierarchy, config.norm)?;
                    *record = Some(rec);
                    *energies = e;
                    z
                }
            };
        }
        Ok(act)
    }

    /// Logits for `x`.
    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_to(x, self.nodes.len())
    }

    /// Mean softmax cross-entropy of the batch; caches probabilities.
    pub fn loss(&mut self, x: &Tensor4<T>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(x)?;
        let (loss, probs) = softmax_xent_forward(&logits, labels)?;
        self.probs = Some(probs);
        Ok(loss)
    }

    /// Backpropagates from the cached probabilities of the last [`Network::loss`]
    /// call. Parameter gradients are overwritten, not accumulated. Returns the
    /// input gradient when enabled.
    pub fn backward(&mut self, labels: &[usize]) -> Result<Option<Tensor4<T>>> {
        let probs = self
            .probs
            .as_ref()
            .ok_or_else(|| Error::Config("backward called before loss".into()))?;
        let mut grad = softmax_xent_backward(probs, labels)?;
        let input_grad = self.input_grad;
        let last = self.nodes.len();
        for (i, node) in self.nodes.iter_mut().enumerate().rev() {
            let need_x = i > 0 || input_grad;
            let missing = || Error::Config(format!("layer {i}: backward without a cached forward"));
            grad = match node {
                Node::Conv {
                    layer,
                    grad_kernels,
                    grad_bias,
                    input,
                    ..
                } => {
                    let x = input.as_ref().ok_or_else(missing)?;
                    let (gx, gk, gb) = conv2d_backward_impl(x, layer, &grad, need_x)?;
                    *grad_kernels = gk;
                    *grad_bias = gb;
                    match gx {
                        Some(g) => g,
                        None => break,
                    }
                }
                Node::Pool { argmax, in_dims, .. } => {
                    maxpool_backward(&grad, argmax, in_dims.ok_or_else(missing)?)?
                }
                Node::Relu { input } => relu_backward(input.as_ref().ok_or_else(missing)?, &grad)?,
                Node::Dense {
                    layer,
                    grad_weights,
                    grad_bias,
                    input,
                    ..
                } => {
                    let g = dense_backward(input.as_ref().ok_or_else(missing)?, layer, &grad)?;
                    *grad_weights = g.grad_weights;
                    *grad_bias = g.grad_bias;
                    g.grad_x
                }
                Node::Reorder { record, .. } => pr_backward(&grad, record.as_ref().ok_or_else(missing)?)?,
            };
            if i == 0 && !input_grad {
                break;
            }
        }
        debug_assert!(last == self.nodes.len());
        Ok(if input_grad { Some(grad) } else { None })
    }

    /// Forward, loss and backward in one call.
    pub fn loss_and_grad(&mut self, x: &Tensor4<T>, labels: &[usize]) -> Result<f64> {
        let loss = self.loss(x, labels)?;
        self.backward(labels)?;
        Ok(loss)
    }

    /// Predicted class per sample.
    pub fn predict(&mut self, x: &Tensor4<T>) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        let k = logits.dims().sample_len();
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Every parameter with its gradient, in checkpoint order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match node {
                Node::Conv {
                    name,
                    layer,
                    grad_kernels,
                    grad_bias,
                    ..
                } => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        value: layer.kernels.data_mut(),
                        grad: grad_kernels.data(),
                    });
                    out.push(ParamMut {
                        name: format!("{name}.bias"),
                        value: &mut layer.bias,
                        grad: grad_bias,
                    });
                }
                Node::Dense {
                    name,
                    layer,
                    grad_weights,
                    grad_bias,
                    ..
                } => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        value: layer.weights.data_mut(),
                        grad: grad_weights.data(),
                    });
                    out.push(ParamMut {
                        name: format!("{name}.bias"),
                        value: &mut layer.bias,
                        grad: grad_bias,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Owned copies of every parameter as tensors; biases become `(len, 1, 1, 1)`.
    pub fn param_tensors(&self) -> Vec<(String, Tensor4<T>)> {
        let mut out = Vec::new();
        let bias = |b: &[T]| Tensor4::from_vec(Dims4::new(b.len(), 1, 1, 1), b.to_vec()).expect("finite bias");
        for node in &self.nodes {
            match node {
                Node::Conv { name, layer, .. } => {
                    out.push((format!("{name}.weight"), layer.kernels.clone()));
                    out.push((format!("{name}.bias"), bias(&layer.bias)));
                }
                Node::Dense { name, layer, .. } => {
                    out.push((format!("{name}.weight"), layer.weights.clone()));
                    out.push((format!("{name}.bias"), bias(&layer.bias)));
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_param(&mut self, name: &str, value: &Tensor4<T>) -> Result<()> {
        for p in self.params_mut() {
            if p.name == name {
                if p.value.len() != value.len() {
                    return Err(Error::Shape(format!(
                        "{name}: expected {} values, got {}",
                        p.value.len(),
                        value.len()
                    )));
                }
                p.value.copy_from_slice(value.data());
                return Ok(());
            }
        }
        Err(Error::Config(format!("no parameter named {name}")))
    }

    /// Weights of the `index`-th dense layer (1-based), `(out, in, 1, 1)`.
    pub fn dense_weights(&self, index: usize) -> Option<&Tensor4<T>> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Dense { layer, .. } => Some(&layer.weights),
                _ => None,
            })
            .nth(index.checked_sub(1)?)
    }

    /// Records and energies of every reorder layer from the last forward pass.
    pub fn reorder_state(&self) -> Vec<(&PermutationRecord, &[EnergyMap<T>])> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Reorder {
                    record: Some(r),
                    energies,
                    ..
                } => Some((r, energies.as_slice())),
                _ => None,
            })
            .collect()
    }

    /// Hashes of the piecewise-constant choices the last forward made:
    /// ReLU signs and pooling argmaxes, then reorder permutations.
    pub fn branch_signature(&self) -> BranchSignature {
        let (mut kinks, mut order) = (DefaultHasher::new(), DefaultHasher::new());
        for node in &self.nodes {
            match node {
                Node::Relu { input: Some(x) } => {
                    for v in x.data() {
                        (*v > T::zero()).hash(&mut kinks);
                    }
                }
                Node::Pool { argmax, .. } => argmax.hash(&mut kinks),
                Node::Reorder { record: Some(r), .. } => {
                    for n in 0..r.samples() {
                        r.source(n).hash(&mut order);
                    }
                }
                _ => {}
            }
        }
        BranchSignature {
            kinks: kinks.finish(),
            reorder: order.finish(),
        }
    }

    /// Smallest relative gap between sibling patch energies over every
    /// reorder layer and sample of the last forward pass.
    pub fn min_energy_gap(&self) -> Option<f64> {
        self.reorder_state()
            .iter()
            .flat_map(|(_, maps)| maps.iter().map(|m| m.min_relative_gap()))
            .reduce(f64::min)
    }

    /// Converts parameters to another element type.
    pub fn cast<U: Scalar>(&self) -> Result<Network<U>> {
        let mut net = Network::<U>::new(&self.spec, &mut Rng::new(0), Init::default())?;
        for (name, t) in self.param_tensors() {
            net.set_param(&name, &t.cast())?;
        }
        Ok(net)
    }
}

pub const CHECKPOINT_FORMAT: &str = "prcnn-checkpoint/1";
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dims: [usize; 4],
    pub file: String,
}

/// Checkpoint manifest: the network description plus one tensor dump per
/// parameter, listed in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: DType,
    pub spec: NetworkSpec,
    pub params: Vec<ParamEntry>,
}

impl<T: Scalar> Network<T> {
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut params = Vec::new();
        for (name, t) in self.param_tensors() {
            let file = format!("{name}.prt4");
            t.save(&dir.join(&file))?;
            params.push(ParamEntry {
                name,
                dims: t.dims().as_array(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            dtype: T::DTYPE,
            spec: self.spec.clone(),
            params,
        };
        let path = dir.join(CHECKPOINT_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::format(&path, format!("unknown checkpoint format {}", manifest.format)));
        }
        let mut net = Network::new(&manifest.spec, &mut Rng::new(0), Init::default())?;
        let expected: Vec<String> = net.param_tensors().into_iter().map(|(n, _)| n).collect();
        let listed: Vec<String> = manifest.params.iter().map(|p| p.name.clone()).collect();
        if expected != listed {
            return Err(Error::format(
                &path,
                format!("parameters {listed:?} do not match the network's {expected:?}"),
            ));
        }
        for entry in &manifest.params {
            let t = Tensor4::<T>::load(&dir.join(&entry.file))?;
            if t.dims().as_array() != entry.dims {
                return Err(Error::format(
                    dir.join(&entry.file),
                    format!("dims {} differ from manifest {:?}", t.dims(), entry.dims),
                ));
            }
            net.set_param(&entry.name, &t)?;
        }
        Ok(net)
    }
}
