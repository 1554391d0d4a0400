//! Dense feed-forward networks with hand-written reverse- and forward-mode
//! derivatives, an Adam optimizer, reparameterized Gaussian sampling and a
//! JSON checkpoint format.
//!
//! Every network exposes its parameters as one flat vector. The layout is
//! layer by layer, each layer contributing its weight matrix (row-major,
//! `out_dim x in_dim`) followed by its bias vector. Gradients returned by
//! [`DenseNet::backward`] use the same layout, so optimizers and the
//! trust-region step can treat parameters as a plain `&[f64]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("input shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("poisoned gradient: non-finite entry at index {0}")]
    PoisonedGradient(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(TensorError::Shape { expected, got })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
            out.push(self.activation.apply(z));
        }
    }
}

/// A chain of fully connected layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer activations recorded by [`DenseNet::forward_trace`];
/// `acts[0]` is the input and `acts[k + 1]` the output of layer `k`.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(TensorError::Architecture("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(TensorError::Architecture(format!("layer {k} has a zero dimension")));
            }
            if layer.weights.len() != layer.in_dim * layer.out_dim || layer.bias.len() != layer.out_dim {
                return Err(TensorError::Architecture(format!(
                    "layer {k} parameter shapes disagree with {}x{}",
                    layer.out_dim, layer.in_dim
                )));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim != layer.out_dim {
                    return Err(TensorError::Architecture(format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        layer.out_dim,
                        k + 1,
                        next.in_dim
                    )));
                }
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(TensorError::Architecture(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(DenseNet { layers })
    }

    /// All-zero network; hidden layers use `hidden`, the last layer `output`.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(TensorError::Architecture("need at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| Layer::zeros(w[0], w[1], if k + 1 == n { output } else { hidden }))
            .collect();
        DenseNet::new(layers)
    }

    /// Glorot-uniform initialized network with zero biases.
    pub fn mlp<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = DenseNet::zeros(sizes, hidden, output)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Multiplies the last layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.num_params(), params.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_len(self.input_dim(), x.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Reverse-mode pass. Parameter gradients are *added* into `grad`
    /// (flat layout), and the gradient with respect to the input is returned.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        check_len(self.output_dim(), upstream.len())?;
        check_len(self.num_params(), grad.len())?;
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(TensorError::Architecture("trace does not belong to this network".into()));
        }
        let mut delta = upstream.to_vec();
        let mut offset = self.num_params();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[k];
            let output = &trace.acts[k + 1];
            // dL/dz for this layer
            for (d, y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            offset -= layer.num_params();
            let (gw, gb) = grad[offset..offset + layer.num_params()].split_at_mut(layer.weights.len());
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                if *d != 0.0 {
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Parameter and input gradients of `upstream . f(x)`.
    pub fn gradients(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grad = vec![0.0; self.num_params()];
        let input_grad = self.backward(&trace, upstream, &mut grad)?;
        Ok((grad, input_grad))
    }

    /// Forward-mode pass: returns `(f(x), J_params(x) . tangent)`.
    pub fn jvp(&self, x: &[f64], tangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.input_dim(), x.len())?;
        check_len(self.num_params(), tangent.len())?;
        let mut cur = x.to_vec();
        let mut dcur = vec![0.0; x.len()];
        let mut offset = 0;
        for layer in &self.layers {
            let nw = layer.weights.len();
            let tw = &tangent[offset..offset + nw];
            let tb = &tangent[offset + nw..offset + nw + layer.out_dim];
            offset += layer.num_params();
            let mut out = Vec::with_capacity(layer.out_dim);
            let mut dout = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let trow = &tw[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut z = layer.bias[o];
                let mut dz = tb[o];
                for i in 0..layer.in_dim {
                    z += row[i] * cur[i];
                    dz += trow[i] * cur[i] + row[i] * dcur[i];
                }
                let y = layer.activation.apply(z);
                out.push(y);
                dout.push(layer.activation.derivative_from_output(y) * dz);
            }
            cur = out;
            dcur = dout;
        }
        Ok((cur, dcur))
    }
}

/// Adam optimizer state for one flat parameter vector. [`Adam::step`]
/// *descends* the supplied gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(TensorError::PoisonedGradient(i));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Applies one step to a network's parameters.
    pub fn step_net(&mut self, net: &mut DenseNet, grads: &[f64]) -> Result<()> {
        let mut params = net.params();
        self.step(&mut params, grads)?;
        net.set_params(&params)
    }
}

/// Reparameterized draw `mean + exp(log_std) * noise`.
pub fn sample_gaussian(mean: &[f64], log_std: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_len(mean.len(), log_std.len())?;
    check_len(mean.len(), noise.len())?;
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(noise)
        .map(|((m, s), n)| m + s.exp() * n)
        .collect())
}

pub const CHECKPOINT_FORMAT: &str = "ssil-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named bundle of networks and plain vectors, stored as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub nets: BTreeMap<String, DenseNet>,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            ..Default::default()
        }
    }

    pub fn with_net(mut self, name: &str, net: &DenseNet) -> Self {
        self.nets.insert(name.to_string(), net.clone());
        self
    }

    pub fn with_vector(mut self, name: &str, v: &[f64]) -> Self {
        self.vectors.insert(name.to_string(), v.to_vec());
        self
    }

    pub fn net(&self, name: &str) -> Result<&DenseNet> {
        self.nets
            .get(name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing network `{name}`")))
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        self.vectors
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing vector `{name}`")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TensorError::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        // re-validate, deserialization bypasses DenseNet::new
        for (name, net) in &ck.nets {
            DenseNet::new(net.layers.clone())
                .map_err(|e| TensorError::Checkpoint(format!("network `{name}`: {e}")))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Checkpoint::from_json(&text)
    }
}
