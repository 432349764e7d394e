//! Minimal trainable-network engine: dense and 1-D convolution layers,
//! label conditioning by one-hot concatenation, reverse-mode gradients and
//! plain SGD updates. Everything the trainer differentiates goes through
//! [`forward`]/[`backward`].

use crate::dataprep::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.input_dim * self.output_dim + self.output_dim,
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel + out_channels,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense => (self.input_dim, self.output_dim),
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => (in_channels * kernel, out_channels * kernel),
        }
    }
}

/// Network description. The first layer consumes the data vector
/// concatenated with a one-hot label of width `label_width`; the last
/// layer's activations are multiplied by `output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
    pub label_width: usize,
    pub output_scale: f64,
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers.is_empty() {
            return Err(NetError::InvalidSpec("no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(NetError::InvalidSpec(format!(
                    "layer output {} does not chain into next input {}",
                    pair[0].output_dim, pair[1].input_dim
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } = layer.kind
            {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(NetError::InvalidSpec(format!("layer {i}: zero conv shape")));
                }
                if layer.input_dim % in_channels != 0 {
                    return Err(NetError::InvalidSpec(format!(
                        "layer {i}: input {} not divisible by {} channels",
                        layer.input_dim, in_channels
                    )));
                }
                let len = layer.input_dim / in_channels;
                if len < kernel {
                    return Err(NetError::InvalidSpec(format!(
                        "layer {i}: kernel {kernel} longer than sequence {len}"
                    )));
                }
                let out_len = len - kernel + 1;
                if layer.output_dim != out_channels * out_len {
                    return Err(NetError::InvalidSpec(format!(
                        "layer {i}: output {} != {out_channels}x{out_len}",
                        layer.output_dim
                    )));
                }
            }
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(NetError::InvalidSpec("output_scale must be positive".into()));
        }
        Ok(())
    }

    /// Width of the data part of the input (label excluded).
    pub fn data_input_dim(&self) -> usize {
        self.layers[0].input_dim - self.label_width
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// Flat parameter vector with the seed used to initialize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub theta: Vec<f64>,
    pub seed: u64,
}

/// Symmetric uniform initialization, `+-sqrt(6 / (fan_in + fan_out))`.
pub fn init_params(spec: &NetSpec, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(spec.param_count());
    for layer in &spec.layers {
        let (fan_in, fan_out) = layer.fans();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = layer.param_count() - layer.output_bias_count();
        for _ in 0..weights {
            theta.push(rng.gen_range(-bound..bound));
        }
        for _ in 0..layer.output_bias_count() {
            theta.push(0.0);
        }
    }
    NetParams { theta, seed }
}

impl LayerSpec {
    fn output_bias_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.output_dim,
            LayerKind::Conv1d { out_channels, .. } => out_channels,
        }
    }
}

/// Activation record from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

fn one_hot(label: Label, width: usize) -> Result<Vec<f64>, NetError> {
    if label.0 >= width {
        return Err(NetError::DimensionMismatch(format!(
            "label {} outside vocabulary of {width}",
            label.0
        )));
    }
    let mut v = vec![0.0; width];
    v[label.0] = 1.0;
    Ok(v)
}

fn layer_forward(layer: &LayerSpec, theta: &[f64], input: &[f64], pre: &mut Vec<f64>) {
    pre.clear();
    match layer.kind {
        LayerKind::Dense => {
            let (w, b) = theta.split_at(layer.input_dim * layer.output_dim);
            for o in 0..layer.output_dim {
                let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                pre.push(acc);
            }
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let len = layer.input_dim / in_channels;
            let out_len = len - kernel + 1;
            let (w, b) = theta.split_at(out_channels * in_channels * kernel);
            for oc in 0..out_channels {
                for t in 0..out_len {
                    let mut acc = b[oc];
                    for ic in 0..in_channels {
                        let base = (oc * in_channels + ic) * kernel;
                        for j in 0..kernel {
                            acc += w[base + j] * input[ic * len + t + j];
                        }
                    }
                    pre.push(acc);
                }
            }
        }
    }
}

/// Run the network on `input` conditioned on `label`. Returns the output
/// and the tape needed by [`backward`].
pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    input: &[f64],
    label: Label,
) -> Result<(Vec<f64>, Tape), NetError> {
    if input.len() != spec.data_input_dim() {
        return Err(NetError::DimensionMismatch(format!(
            "input length {} != expected {}",
            input.len(),
            spec.data_input_dim()
        )));
    }
    if params.theta.len() != spec.param_count() {
        return Err(NetError::DimensionMismatch(format!(
            "theta length {} != spec {}",
            params.theta.len(),
            spec.param_count()
        )));
    }
    let mut current: Vec<f64> = input
        .iter()
        .copied()
        .chain(one_hot(label, spec.label_width)?)
        .collect();
    let mut tape = Tape {
        inputs: Vec::with_capacity(spec.layers.len()),
        pres: Vec::with_capacity(spec.layers.len()),
    };
    let mut offset = 0;
    let last = spec.layers.len() - 1;
    for (li, layer) in spec.layers.iter().enumerate() {
        let theta = &params.theta[offset..offset + layer.param_count()];
        offset += layer.param_count();
        let mut pre = Vec::with_capacity(layer.output_dim);
        layer_forward(layer, theta, &current, &mut pre);
        let scale = if li == last { spec.output_scale } else { 1.0 };
        let post: Vec<f64> = pre.iter().map(|&z| scale * layer.activation.apply(z)).collect();
        tape.inputs.push(std::mem::replace(&mut current, post));
        tape.pres.push(pre);
    }
    Ok((current, tape))
}

/// Gradients of `upstream . output` from one forward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Parameter-shaped gradient.
    pub theta: Vec<f64>,
    /// Gradient with respect to the full first-layer input; the one-hot
    /// label block occupies the trailing `label_width` slots.
    pub input: Vec<f64>,
}

/// Reverse pass: gradient of `upstream . output` with respect to the
/// parameters and the input. Linear in `upstream`.
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    tape: &Tape,
    upstream: &[f64],
) -> Result<Gradients, NetError> {
    if upstream.len() != spec.output_dim() {
        return Err(NetError::DimensionMismatch(format!(
            "upstream length {} != output {}",
            upstream.len(),
            spec.output_dim()
        )));
    }
    if tape.inputs.len() != spec.layers.len() {
        return Err(NetError::DimensionMismatch("tape/spec layer mismatch".into()));
    }
    let mut theta_grad = vec![0.0; spec.param_count()];
    let mut offsets = Vec::with_capacity(spec.layers.len());
    let mut offset = 0;
    for layer in &spec.layers {
        offsets.push(offset);
        offset += layer.param_count();
    }

    let last = spec.layers.len() - 1;
    let mut delta: Vec<f64> = upstream.to_vec();
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        let scale = if li == last { spec.output_scale } else { 1.0 };
        let pre = &tape.pres[li];
        let input = &tape.inputs[li];
        // d(loss)/d(pre) = delta * scale * act'(pre)
        let dz: Vec<f64> = delta
            .iter()
            .zip(pre)
            .map(|(d, &z)| d * scale * layer.activation.derivative(z))
            .collect();
        let theta = &params.theta[offsets[li]..offsets[li] + layer.param_count()];
        let grad = &mut theta_grad[offsets[li]..offsets[li] + layer.param_count()];
        let mut dx = vec![0.0; layer.input_dim];
        match layer.kind {
            LayerKind::Dense => {
                let w = &theta[..layer.input_dim * layer.output_dim];
                let (gw, gb) = grad.split_at_mut(layer.input_dim * layer.output_dim);
                for o in 0..layer.output_dim {
                    let dzo = dz[o];
                    gb[o] += dzo;
                    if dzo == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
                    let grow = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for i in 0..layer.input_dim {
                        grow[i] += dzo * input[i];
                        dx[i] += dzo * row[i];
                    }
                }
            }
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let len = layer.input_dim / in_channels;
                let out_len = len - kernel + 1;
                let w_count = out_channels * in_channels * kernel;
                let w = &theta[..w_count];
                let (gw, gb) = grad.split_at_mut(w_count);
                for oc in 0..out_channels {
                    for t in 0..out_len {
                        let dzo = dz[oc * out_len + t];
                        gb[oc] += dzo;
                        if dzo == 0.0 {
                            continue;
                        }
                        for ic in 0..in_channels {
                            let base = (oc * in_channels + ic) * kernel;
                            for j in 0..kernel {
                                gw[base + j] += dzo * input[ic * len + t + j];
                                dx[ic * len + t + j] += dzo * w[base + j];
                            }
                        }
                    }
                }
            }
        }
        delta = dx;
    }
    Ok(Gradients {
        theta: theta_grad,
        input: delta,
    })
}

/// Plain SGD update `theta <- theta - alpha * grad`.
pub fn sgd_step(params: &mut NetParams, grad: &[f64], alpha: f64) {
    assert_eq!(params.theta.len(), grad.len(), "gradient shape mismatch");
    for (t, g) in params.theta.iter_mut().zip(grad) {
        *t -= alpha * g;
    }
}

/// Clip a probability away from {0, 1} so log terms stay finite.
pub const EPS_CLIP: f64 = 1e-7;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(EPS_CLIP, 1.0 - EPS_CLIP)
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    spec: NetSpec,
    params: NetParams,
}

/// Serialize a network to versioned text. Parameters survive bit-exactly.
pub fn checkpoint_to_string(spec: &NetSpec, params: &NetParams) -> String {
    serde_json::to_string_pretty(&CheckpointFile {
        version: 1,
        spec: spec.clone(),
        params: params.clone(),
    })
    .expect("network serializes")
}

pub fn checkpoint_from_str(text: &str) -> Result<(NetSpec, NetParams), NetError> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    if file.version != 1 {
        return Err(NetError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    if file.params.theta.len() != file.spec.param_count() {
        return Err(NetError::Checkpoint("theta length mismatch".into()));
    }
    Ok((file.spec, file.params))
}
