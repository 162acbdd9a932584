//! Layers, forward/backward passes, losses, and gradient verification.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named input vectors for one example.
pub type Inputs = BTreeMap<String, Vec<f64>>;

/// Probabilities inside the BCE loss are clamped to this range to keep the
/// per-element gradient finite near saturated sigmoids.
const BCE_CLAMP: f64 = 1e-12;

/// Relative-error floor for gradient comparisons: differences below this
/// absolute size count as zero.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// A dense affine layer, or a diagonal one when `diagonal` is set (the
/// off-diagonal weights are structurally absent: `weights` then holds one
/// scale per coordinate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub diagonal: bool,
    /// Row-major `out_dim x in_dim`, or length `out_dim` when diagonal.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    /// Dense layer with uniform `±sqrt(1 / in_dim)` initialization.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (1.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-scale..scale)).collect();
        let bias = vec![0.0; out_dim];
        Self { in_dim, out_dim, diagonal: false, weights, bias }
    }

    /// Diagonal layer initialized at the identity (unit scales, zero bias).
    pub fn identity_diagonal(dim: usize) -> Self {
        Self { in_dim: dim, out_dim: dim, diagonal: true, weights: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::Dimension(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim,
                input.len()
            )));
        }
        let mut out = self.bias.clone();
        if self.diagonal {
            for ((o, &w), &x) in out.iter_mut().zip(&self.weights).zip(input) {
                *o += w * x;
            }
        } else {
            for (row, o) in out.iter_mut().enumerate() {
                let weights = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
                *o += weights.iter().zip(input).map(|(&w, &x)| w * x).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Accumulate parameter gradients and return the input gradient.
    fn backward(&self, input: &[f64], upstream: &[f64], grad: &mut LinearGrad) -> Vec<f64> {
        let mut d_input = vec![0.0; self.in_dim];
        if self.diagonal {
            for i in 0..self.in_dim {
                grad.weights[i] += upstream[i] * input[i];
                grad.bias[i] += upstream[i];
                d_input[i] = self.weights[i] * upstream[i];
            }
        } else {
            for row in 0..self.out_dim {
                let dy = upstream[row];
                grad.bias[row] += dy;
                let weights = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
                let grads = &mut grad.weights[row * self.in_dim..(row + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    grads[i] += dy * input[i];
                    d_input[i] += weights[i] * dy;
                }
            }
        }
        d_input
    }
}

/// One network layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(LinearLayer),
    Relu,
    Sigmoid,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        match self {
            Layer::Linear(linear) => linear.forward(input),
            Layer::Relu => Ok(input.iter().map(|&x| x.max(0.0)).collect()),
            Layer::Sigmoid => Ok(input.iter().map(|&x| sigmoid(x)).collect()),
        }
    }

    fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Layer::Linear(linear) => linear.out_dim,
            Layer::Relu | Layer::Sigmoid => in_dim,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// A named input channel with its encoder layers (possibly none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub layers: Vec<Layer>,
}

/// Feedforward network: each named input runs through its channel encoder,
/// the encoder outputs are concatenated in declared channel order, and the
/// result runs through the trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub channels: Vec<Channel>,
    pub trunk: Vec<Layer>,
}

/// Per-layer input/output pairs cached by the forward pass; sufficient for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    channels: Vec<Vec<LayerIo>>,
    channel_outputs: Vec<Vec<f64>>,
    trunk: Vec<LayerIo>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerIo {
    input: Vec<f64>,
    output: Vec<f64>,
}

/// Gradient of a linear layer's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients mirroring the network structure: one entry per
/// layer, `None` for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub channels: Vec<Vec<Option<LinearGrad>>>,
    pub trunk: Vec<Option<LinearGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layer_zeros = |layers: &[Layer]| {
            layers
                .iter()
                .map(|layer| match layer {
                    Layer::Linear(l) => Some(LinearGrad {
                        weights: vec![0.0; l.weights.len()],
                        bias: vec![0.0; l.bias.len()],
                    }),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        Self {
            channels: net.channels.iter().map(|c| layer_zeros(&c.layers)).collect(),
            trunk: layer_zeros(&net.trunk),
        }
    }

    /// Flat views over all gradient tensors, in the network's canonical
    /// parameter order (channels in declared order, then trunk; weights
    /// before bias within a layer).
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for channel in &self.channels {
            collect_grad_tensors(channel, &mut out);
        }
        collect_grad_tensors(&self.trunk, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for channel in &mut self.channels {
            collect_grad_tensors_mut(channel, &mut out);
        }
        collect_grad_tensors_mut(&mut self.trunk, &mut out);
        out
    }

    /// Global L2 norm across every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|&g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for tensor in self.tensors_mut() {
            for g in tensor.iter_mut() {
                *g *= factor;
            }
        }
    }
}

fn collect_grad_tensors<'a>(layers: &'a [Option<LinearGrad>], out: &mut Vec<&'a Vec<f64>>) {
    for grad in layers.iter().flatten() {
        out.push(&grad.weights);
        out.push(&grad.bias);
    }
}

fn collect_grad_tensors_mut<'a>(
    layers: &'a mut [Option<LinearGrad>],
    out: &mut Vec<&'a mut Vec<f64>>,
) {
    for grad in layers.iter_mut().flatten() {
        out.push(&mut grad.weights);
        out.push(&mut grad.bias);
    }
}

impl Network {
    /// Mutable views over all parameter tensors, in the same canonical order
    /// as [`Gradients::tensors`].
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for channel in &mut self.channels {
            for layer in &mut channel.layers {
                if let Layer::Linear(l) = layer {
                    out.push(&mut l.weights);
                    out.push(&mut l.bias);
                }
            }
        }
        for layer in &mut self.trunk {
            if let Layer::Linear(l) = layer {
                out.push(&mut l.weights);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let count = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Linear(l) => l.weights.len() + l.bias.len(),
                    _ => 0,
                })
                .sum::<usize>()
        };
        self.channels.iter().map(|c| count(&c.layers)).sum::<usize>() + count(&self.trunk)
    }

    /// Output dimensionality implied by the layer stack, given per-channel
    /// input dims in declared channel order.
    pub fn output_dim(&self, input_dims: &[usize]) -> usize {
        let run = |layers: &[Layer], mut dim: usize| {
            for layer in layers {
                dim = layer.out_dim(dim);
            }
            dim
        };
        let concat: usize = self
            .channels
            .iter()
            .zip(input_dims)
            .map(|(c, &d)| run(&c.layers, d))
            .sum();
        run(&self.trunk, concat)
    }

    /// Deterministic forward pass; the cache suffices for `backward`.
    pub fn forward(&self, inputs: &Inputs) -> Result<(Vec<f64>, Cache)> {
        let mut channel_caches = Vec::with_capacity(self.channels.len());
        let mut channel_outputs = Vec::with_capacity(self.channels.len());
        let mut concat = Vec::new();
        for channel in &self.channels {
            let input = inputs.get(&channel.name).ok_or_else(|| {
                Error::Dimension(format!("missing input for channel `{}`", channel.name))
            })?;
            let (output, ios) = run_layers(&channel.layers, input)
                .map_err(|e| Error::Dimension(format!("channel `{}`: {e}", channel.name)))?;
            concat.extend_from_slice(&output);
            channel_outputs.push(output);
            channel_caches.push(ios);
        }
        let (output, trunk_ios) =
            run_layers(&self.trunk, &concat).map_err(|e| Error::Dimension(format!("trunk: {e}")))?;
        let cache = Cache {
            channels: channel_caches,
            channel_outputs,
            trunk: trunk_ios,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Reverse-mode pass from an output gradient, accumulating into `grads`.
    pub fn backward(&self, cache: &Cache, d_output: &[f64], grads: &mut Gradients) {
        let mut upstream = d_output.to_vec();
        upstream = backward_layers(&self.trunk, &cache.trunk, upstream, &mut grads.trunk);
        // Split the concatenation gradient back into channel segments.
        let mut offset = 0;
        for (i, channel) in self.channels.iter().enumerate() {
            let width = cache.channel_outputs[i].len();
            let segment = upstream[offset..offset + width].to_vec();
            offset += width;
            backward_layers(&channel.layers, &cache.channels[i], segment, &mut grads.channels[i]);
        }
    }
}

fn run_layers(layers: &[Layer], input: &[f64]) -> Result<(Vec<f64>, Vec<LayerIo>)> {
    let mut ios = Vec::with_capacity(layers.len());
    let mut current = input.to_vec();
    for (index, layer) in layers.iter().enumerate() {
        let output = layer
            .forward(&current)
            .map_err(|e| Error::Dimension(format!("layer {index}: {e}")))?;
        ios.push(LayerIo { input: current, output: output.clone() });
        current = output;
    }
    Ok((current, ios))
}

fn backward_layers(
    layers: &[Layer],
    ios: &[LayerIo],
    mut upstream: Vec<f64>,
    grads: &mut [Option<LinearGrad>],
) -> Vec<f64> {
    for (index, layer) in layers.iter().enumerate().rev() {
        let io = &ios[index];
        upstream = match layer {
            Layer::Linear(linear) => {
                let grad = grads[index].as_mut().expect("gradient slot for linear layer");
                linear.backward(&io.input, &upstream, grad)
            }
            Layer::Relu => io
                .input
                .iter()
                .zip(&upstream)
                .map(|(&x, &dy)| if x > 0.0 { dy } else { 0.0 })
                .collect(),
            Layer::Sigmoid => io
                .output
                .iter()
                .zip(&upstream)
                .map(|(&y, &dy)| dy * y * (1.0 - y))
                .collect(),
        };
    }
    upstream
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Loss function over network outputs, averaged over every output element
/// in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Squared error `(y - t)^2`.
    Mse,
    /// Binary cross entropy `-(t ln y + (1 - t) ln(1 - y))`; targets must
    /// lie in `[0, 1]` and outputs are treated as probabilities.
    Bce,
}

impl LossKind {
    fn element(self, output: f64, target: f64) -> f64 {
        match self {
            LossKind::Mse => (output - target) * (output - target),
            LossKind::Bce => {
                let p = output.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
            }
        }
    }

    fn derivative(self, output: f64, target: f64) -> f64 {
        match self {
            LossKind::Mse => 2.0 * (output - target),
            LossKind::Bce => {
                let p = output.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -target / p + (1.0 - target) / (1.0 - p)
            }
        }
    }
}

/// Mean loss over a batch together with exact parameter gradients.
///
/// The mean is over every output element in the batch, and the batch is
/// processed in order, so the result is deterministic.
pub fn loss_and_grad(
    net: &Network,
    batch: &[Inputs],
    targets: &[Vec<f64>],
    loss: LossKind,
) -> Result<(f64, Gradients)> {
    if batch.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} inputs vs {} targets",
            batch.len(),
            targets.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::Domain("loss over an empty batch".into()));
    }
    if loss == LossKind::Bce {
        for target in targets {
            if target.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
                return Err(Error::Domain("bce target outside [0, 1]".into()));
            }
        }
    }

    let mut grads = Gradients::zeros_like(net);
    let mut total = 0.0;
    let mut elements = 0usize;
    for (inputs, target) in batch.iter().zip(targets) {
        let (output, cache) = net.forward(inputs)?;
        if output.len() != target.len() {
            return Err(Error::Dimension(format!(
                "network emits {} values but target has {}",
                output.len(),
                target.len()
            )));
        }
        elements += output.len();
        for (&y, &t) in output.iter().zip(target) {
            total += loss.element(y, t);
        }
        let d_output: Vec<f64> = output.iter().zip(target).map(|(&y, &t)| loss.derivative(y, t)).collect();
        net.backward(&cache, &d_output, &mut grads);
    }
    let scale = 1.0 / elements as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Plain forward loss without gradients (validation scoring).
pub fn batch_loss(net: &Network, batch: &[Inputs], targets: &[Vec<f64>], loss: LossKind) -> Result<f64> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::Dimension("batch/target length mismatch or empty".into()));
    }
    let mut total = 0.0;
    let mut elements = 0usize;
    for (inputs, target) in batch.iter().zip(targets) {
        let (output, _) = net.forward(inputs)?;
        elements += output.len();
        for (&y, &t) in output.iter().zip(target) {
            total += loss.element(y, t);
        }
    }
    Ok(total / elements as f64)
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradients, one forward pair per parameter.
pub fn numerical_gradients(
    net: &mut Network,
    batch: &[Inputs],
    targets: &[Vec<f64>],
    loss: LossKind,
    epsilon: f64,
) -> Result<Gradients> {
    check_epsilon(epsilon)?;
    let mut grads = Gradients::zeros_like(net);
    let tensor_count = grads.tensors().len();
    for tensor_idx in 0..tensor_count {
        let len = grads.tensors()[tensor_idx].len();
        for i in 0..len {
            let original = net.param_tensors_mut()[tensor_idx][i];
            net.param_tensors_mut()[tensor_idx][i] = original + epsilon;
            let plus = batch_loss(net, batch, targets, loss)?;
            net.param_tensors_mut()[tensor_idx][i] = original - epsilon;
            let minus = batch_loss(net, batch, targets, loss)?;
            net.param_tensors_mut()[tensor_idx][i] = original;
            grads.tensors_mut()[tensor_idx][i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// Maximum relative error between two gradient sets, with an absolute floor
/// so near-zero pairs compare as equal.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
        for (&ga, &gb) in ta.iter().zip(tb) {
            let scale = ga.abs().max(gb.abs()).max(floor);
            worst = worst.max((ga - gb).abs() / scale);
        }
    }
    worst
}

/// Verify analytic gradients against central differences; returns the
/// maximum relative error over all parameters.
pub fn finite_difference_check(
    net: &mut Network,
    batch: &[Inputs],
    targets: &[Vec<f64>],
    loss: LossKind,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (_, analytic) = loss_and_grad(net, batch, targets, loss)?;
    let numeric = numerical_gradients(net, batch, targets, loss, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric, REL_ERROR_FLOOR))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    Ok(())
}
