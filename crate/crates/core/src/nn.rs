//! Minimal dense networks: initialization, forward and backward passes,
//! common losses, RMSProp, and a binary checkpoint format.

use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
    Softmax,
    Sigmoid,
}

/// Weight initialization variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Variance `sqrt(6 / (rows + cols))`, read literally.
    #[default]
    SqrtSixOverFan,
    /// Glorot normal: variance `2 / (rows + cols)`.
    Glorot,
}

impl InitScheme {
    pub fn variance(self, rows: usize, cols: usize) -> f64 {
        let fan = (rows + cols) as f64;
        match self {
            InitScheme::SqrtSixOverFan => (6.0 / fan).sqrt(),
            InitScheme::Glorot => 2.0 / fan,
        }
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    seed: u64,
    init: InitScheme,
}

/// Activations recorded by a forward pass; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g = 0.0);
            l.biases.iter_mut().for_each(|g| *g = 0.0);
        }
        self.input.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|g| *g == 0.0))
    }
}

impl DenseNet {
    /// Builds a network with the given layer widths and per-layer activations
    /// (`activations.len() == dims.len() - 1`).
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64, init: InitScheme) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("a network needs at least two layer widths".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations given for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (inputs, outputs) = (w[0], w[1]);
                let std = init.variance(outputs, inputs).sqrt();
                let normal = Normal::new(0.0, std).expect("finite standard deviation");
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect(),
                    biases: vec![0.0; outputs],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, seed, init })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|p| p.is_finite()))
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let mut z = layer.biases.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *zo += dot(row, x);
            }
            activate(layer.activation, &mut z);
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Convenience wrapper returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward(input)?;
        Ok(cache.activations.pop().expect("non-empty"))
    }

    /// Backpropagates `output_grad`, the loss gradient with respect to the
    /// last layer's pre-activation for softmax and sigmoid outputs (the
    /// cross-entropy pairing) and with respect to the output otherwise.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, output_grad, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Like [`DenseNet::backward`], accumulating `scale ×` gradients into
    /// `grads`. The input gradient is overwritten, not accumulated.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1 || cache.input().len() != self.input_dim() {
            return Err(Error::InvalidArgument("forward cache does not match this network".into()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("gradient buffer does not match this network".into()));
        }
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = output_grad.iter().map(|g| g * scale).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[i + 1];
            match layer.activation {
                Activation::Tanh => {
                    for (d, a) in delta.iter_mut().zip(out) {
                        *d *= 1.0 - a * a;
                    }
                }
                Activation::Sigmoid | Activation::Softmax if i != last => {
                    return Err(Error::InvalidArgument(
                        "softmax and sigmoid are only supported on the output layer".into(),
                    ))
                }
                _ => {}
            }
            let x = &cache.activations[i];
            let g = &mut grads.layers[i];
            let mut dx = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for k in 0..layer.inputs {
                    grow[k] += d * x[k];
                    dx[k] += d * row[k];
                }
            }
            delta = dx;
        }
        let input_grad = &mut grads.input;
        input_grad.clear();
        input_grad.extend(delta);
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn activate(activation: Activation, z: &mut [f64]) {
    match activation {
        Activation::Linear => {}
        Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Softmax => softmax_in_place(z),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Tanh hidden layers and a linear output layer.
pub fn init_params(dims: &[usize], seed: u64) -> Result<DenseNet> {
    init_params_with(dims, seed, InitScheme::default())
}

pub fn init_params_with(dims: &[usize], seed: u64, init: InitScheme) -> Result<DenseNet> {
    let n = dims.len().saturating_sub(1);
    let activations: Vec<Activation> = (0..n)
        .map(|i| if i + 1 == n { Activation::Linear } else { Activation::Tanh })
        .collect();
    DenseNet::new(dims, &activations, seed, init)
}

/// Mean squared error over the output vector and its gradient.
pub fn mse(prediction: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = prediction.len() as f64;
    let loss = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    let grad = prediction.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

/// Cross-entropy of a softmax output against a class index, with the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(probs: &[f64], class: usize) -> (f64, Vec<f64>) {
    let loss = -probs[class].max(1e-300).ln();
    let mut grad = probs.to_vec();
    grad[class] -= 1.0;
    (loss, grad)
}

/// Binary cross-entropy of a sigmoid output, gradient with respect to the
/// logit.
pub fn binary_cross_entropy(prob: f64, target: f64) -> (f64, f64) {
    let p = prob.clamp(1e-12, 1.0 - 1e-12);
    let loss = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    (loss, prob - target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// RMSProp accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulators: Vec<LayerGrad>,
}

impl RmsProp {
    pub fn new(net: &DenseNet, config: RmsPropConfig) -> Self {
        Self {
            config,
            accumulators: Gradients::zeros_like(net).layers,
        }
    }

    /// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − lr·g / (√acc + ε)`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.accumulators.len() != net.layers.len() {
            return Err(Error::InvalidArgument("optimizer state does not match network".into()));
        }
        let RmsPropConfig {
            learning_rate,
            decay,
            epsilon,
        } = self.config;
        for ((layer, g), acc) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.accumulators) {
            if g.weights.len() != layer.weights.len() || g.biases.len() != layer.biases.len() {
                return Err(Error::DimensionMismatch {
                    expected: layer.param_count(),
                    got: g.weights.len() + g.biases.len(),
                });
            }
            let pairs = layer
                .weights
                .iter_mut()
                .zip(&g.weights)
                .zip(acc.weights.iter_mut())
                .chain(layer.biases.iter_mut().zip(&g.biases).zip(acc.biases.iter_mut()));
            for ((p, &gi), a) in pairs {
                *a = decay * *a + (1.0 - decay) * gi * gi;
                *p -= learning_rate * gi / (a.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"BCSNET01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    seed: u64,
    init: InitScheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    nets: Vec<NetHeader>,
    #[serde(default)]
    manifest: serde_json::Value,
}

/// Writes named networks: magic, little-endian u64 header length, JSON
/// header, then every parameter as a little-endian f64.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    nets: &[(&str, &DenseNet)],
    manifest: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        nets: nets
            .iter()
            .map(|(name, net)| NetHeader {
                name: name.to_string(),
                dims: net.dims(),
                activations: net.activations(),
                seed: net.seed,
                init: net.init,
            })
            .collect(),
        manifest,
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, net) in nets {
        for p in net.flat_params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Vec<(String, DenseNet)>, serde_json::Value)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    let mut nets = Vec::with_capacity(header.nets.len());
    for h in header.nets {
        let mut net = DenseNet::new(&h.dims, &h.activations, h.seed, h.init)?;
        let mut params = vec![0.0; net.param_count()];
        let mut buf = [0u8; 8];
        for p in &mut params {
            input.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated parameters".into()))?;
            *p = f64::from_le_bytes(buf);
        }
        net.set_flat_params(&params)?;
        nets.push((h.name, net));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((nets, header.manifest))
}
