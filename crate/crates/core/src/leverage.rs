//! Leverage estimation: fit a model on labeled expert data, score every
//! unlabeled state by reconstruction error (VAE family) or predictive
//! uncertainty (MDN, GPR), and min-max normalize the scores so the most
//! expert-like state receives leverage 1 and the least expert-like 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{pool_states, DemoError, DemoSet, LabelFilter, LeverageRecord, LeverageSet, Trajectory};
use crate::reward::{LeverageBank, RewardError};
use crate::tensor::{Activation, Adam, DenseNet, TensorError};

#[derive(Debug, Error)]
pub enum LeverageError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown leverage method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

pub type Result<T> = std::result::Result<T, LeverageError>;

/// Per-dimension affine standardization fitted on expert data.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation per dimension; scales below `min_scale`
    /// are raised to it (a constant dimension gets scale 1).
    pub fn fit(rows: &[Vec<f64>], min_scale: f64) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m).powi(2) / n);
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = v.sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s.max(min_scale)
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    Plain,
    /// Concatenation of this many consecutive states.
    Windowed(usize),
}

#[derive(Clone, Debug)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_scale: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 8,
            hidden: vec![64, 64],
            kl_weight: 1.0,
            epochs: 150,
            batch_size: 64,
            lr: 1e-3,
            min_scale: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VaeModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub latent_dim: usize,
    pub mode: InputMode,
    pub standardizer: Standardizer,
    pub kl_weight: f64,
}

/// Value and gradients of the per-example VAE objective for a fixed noise draw.
#[derive(Clone, Debug)]
pub struct VaeGradient {
    pub objective: f64,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

fn mlp_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        cfg: &VaeConfig,
        mode: InputMode,
        standardizer: Standardizer,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(LeverageError::InsufficientData("latent dimension must be at least 1".into()));
        }
        if standardizer.dim() != input_dim {
            return Err(LeverageError::Dimension {
                expected: input_dim,
                got: standardizer.dim(),
            });
        }
        let encoder = DenseNet::mlp(
            &mlp_sizes(input_dim, &cfg.hidden, 2 * cfg.latent_dim),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        let decoder = DenseNet::mlp(
            &mlp_sizes(cfg.latent_dim, &cfg.hidden, input_dim),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        Ok(VaeModel {
            encoder,
            decoder,
            latent_dim: cfg.latent_dim,
            mode,
            standardizer,
            kl_weight: cfg.kl_weight,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Objective on an already standardized input with a given noise draw:
    /// squared reconstruction error plus weighted KL to the unit Gaussian.
    pub fn gradient(&self, x: &[f64], noise: &[f64]) -> Result<VaeGradient> {
        let l = self.latent_dim;
        if noise.len() != l {
            return Err(LeverageError::Dimension { expected: l, got: noise.len() });
        }
        let enc_trace = self.encoder.forward_trace(x)?;
        let h = enc_trace.output();
        let (mu, logvar) = h.split_at(l);
        let z: Vec<f64> = (0..l).map(|i| mu[i] + (0.5 * logvar[i]).exp() * noise[i]).collect();
        let dec_trace = self.decoder.forward_trace(&z)?;
        let recon = dec_trace.output();
        let diff: Vec<f64> = recon.iter().zip(x).map(|(r, s)| r - s).collect();
        let rec_loss: f64 = diff.iter().map(|d| d * d).sum();
        let kl: f64 = -0.5 * (0..l).map(|i| 1.0 + logvar[i] - mu[i] * mu[i] - logvar[i].exp()).sum::<f64>();
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
        let mut dec_grad = vec![0.0; self.decoder.num_params()];
        let gz = self.decoder.backward(&dec_trace, &upstream, &mut dec_grad)?;
        let mut gh = vec![0.0; 2 * l];
        for i in 0..l {
            let sd = (0.5 * logvar[i]).exp();
            gh[i] = gz[i] + self.kl_weight * mu[i];
            gh[l + i] = gz[i] * 0.5 * sd * noise[i] + self.kl_weight * 0.5 * (logvar[i].exp() - 1.0);
        }
        let mut enc_grad = vec![0.0; self.encoder.num_params()];
        self.encoder.backward(&enc_trace, &gh, &mut enc_grad)?;
        Ok(VaeGradient {
            objective: rec_loss + self.kl_weight * kl,
            encoder: enc_grad,
            decoder: dec_grad,
        })
    }

    /// Reconstruction through the latent mean (no sampling), in standardized units.
    pub fn reconstruct_standardized(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.encoder.forward(x)?;
        Ok(self.decoder.forward(&h[..self.latent_dim])?)
    }
}

/// Per-epoch mean training objective; entry 0 is measured before any update.
pub type LossTrace = Vec<f64>;

pub fn train_vae<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    cfg: &VaeConfig,
    mode: InputMode,
    rng: &mut R,
) -> Result<(VaeModel, LossTrace)> {
    if inputs.is_empty() || inputs.len() < cfg.latent_dim {
        return Err(LeverageError::InsufficientData(format!(
            "{} training inputs for latent dimension {}",
            inputs.len(),
            cfg.latent_dim
        )));
    }
    let dim = inputs[0].len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(LeverageError::Dimension { expected: dim, got: bad.len() });
    }
    let standardizer = Standardizer::fit(inputs, cfg.min_scale);
    let data: Vec<Vec<f64>> = inputs.iter().map(|x| standardizer.apply(x)).collect();
    let mut model = VaeModel::new(dim, cfg, mode, standardizer, rng)?;
    let mut enc_opt = Adam::new(model.encoder.num_params(), cfg.lr);
    let mut dec_opt = Adam::new(model.decoder.num_params(), cfg.lr);
    let l = cfg.latent_dim;
    let draw = |rng: &mut R| -> Vec<f64> { (0..l).map(|_| StandardNormal.sample(rng)).collect() };

    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut initial = 0.0;
    for x in &data {
        initial += model.gradient(x, &draw(rng))?.objective;
    }
    trace.push(initial / data.len() as f64);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut ge = vec![0.0; model.encoder.num_params()];
            let mut gd = vec![0.0; model.decoder.num_params()];
            for &i in chunk {
                let g = model.gradient(&data[i], &draw(rng))?;
                total += g.objective;
                ge.iter_mut().zip(&g.encoder).for_each(|(a, b)| *a += b);
                gd.iter_mut().zip(&g.decoder).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / chunk.len() as f64;
            ge.iter_mut().for_each(|g| *g *= scale);
            gd.iter_mut().for_each(|g| *g *= scale);
            enc_opt.step_net(&mut model.encoder, &ge)?;
            dec_opt.step_net(&mut model.decoder, &gd)?;
        }
        trace.push(total / data.len() as f64);
    }
    Ok((model, trace))
}

/// Non-negative per-state scores aligned with a scored state list.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionErrorSet(pub Vec<f64>);

impl ReconstructionErrorSet {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean reconstruction error of each input in standardized units.
/// Windowing, if any, must already be applied by the caller.
pub fn reconstruction_errors(model: &VaeModel, inputs: &[Vec<f64>]) -> Result<ReconstructionErrorSet> {
    let expected = model.input_dim();
    if let Some(bad) = inputs.iter().find(|x| x.len() != expected) {
        return Err(LeverageError::Dimension { expected, got: bad.len() });
    }
    let errors = inputs
        .par_iter()
        .map(|x| {
            let s = model.standardizer.apply(x);
            let r = model.reconstruct_standardized(&s)?;
            Ok(r.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ReconstructionErrorSet(errors))
}

/// `(r_max - r) / (r_max - r_min)`; all ones when every error is equal.
pub fn normalize_to_leverage(errors: &ReconstructionErrorSet) -> Result<Vec<f64>> {
    let r = errors.values();
    if r.is_empty() {
        return Err(LeverageError::InsufficientData("no errors to normalize".into()));
    }
    let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(r_min.is_finite() && r_max.is_finite()) {
        return Err(LeverageError::Numerical("non-finite score".into()));
    }
    let span = r_max - r_min;
    if span == 0.0 {
        return Ok(vec![1.0; r.len()]);
    }
    Ok(r.iter().map(|x| ((r_max - x) / span).clamp(0.0, 1.0)).collect())
}

#[derive(Clone, Debug)]
pub struct MdnConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Added to every component variance (standardized action units).
    pub var_floor: f64,
    pub min_scale: f64,
}

impl Default for MdnConfig {
    fn default() -> Self {
        MdnConfig {
            components: 5,
            hidden: vec![64, 64],
            epochs: 150,
            batch_size: 64,
            lr: 1e-3,
            var_floor: 1e-4,
            min_scale: 0.05,
        }
    }
}

/// Mixture density network mapping states to a Gaussian mixture over actions.
#[derive(Clone, Debug)]
pub struct MdnModel {
    pub net: DenseNet,
    pub components: usize,
    pub action_dim: usize,
    pub state_standardizer: Standardizer,
    pub action_standardizer: Standardizer,
    pub var_floor: f64,
}

/// Mixture parameters at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Aleatoric `sum_k w_k var_k` plus epistemic `sum_k w_k (mu_k - mu_bar)^2`,
/// summed over action dimensions.
pub fn mixture_uncertainty(mixture: &Mixture) -> f64 {
    let (aleatoric, epistemic) = mixture_uncertainty_terms(mixture);
    aleatoric + epistemic
}

pub fn mixture_uncertainty_terms(mixture: &Mixture) -> (f64, f64) {
    let dims = mixture.means.first().map_or(0, Vec::len);
    let mut aleatoric = 0.0;
    let mut epistemic = 0.0;
    for d in 0..dims {
        let mu_bar: f64 = mixture.weights.iter().zip(&mixture.means).map(|(w, m)| w * m[d]).sum();
        for ((w, m), v) in mixture.weights.iter().zip(&mixture.means).zip(&mixture.variances) {
            aleatoric += w * v[d];
            epistemic += w * (m[d] - mu_bar).powi(2);
        }
    }
    (aleatoric, epistemic)
}

impl MdnModel {
    fn output_dim(components: usize, action_dim: usize) -> usize {
        components * (1 + 2 * action_dim)
    }

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &MdnConfig,
        state_standardizer: Standardizer,
        action_standardizer: Standardizer,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.components == 0 || action_dim == 0 {
            return Err(LeverageError::InsufficientData("MDN needs K >= 1 and an action".into()));
        }
        let net = DenseNet::mlp(
            &mlp_sizes(state_dim, &cfg.hidden, Self::output_dim(cfg.components, action_dim)),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        Ok(MdnModel {
            net,
            components: cfg.components,
            action_dim,
            state_standardizer,
            action_standardizer,
            var_floor: cfg.var_floor,
        })
    }

    fn split_output(&self, out: &[f64]) -> Mixture {
        let k = self.components;
        let a = self.action_dim;
        let weights = softmax(&out[..k]);
        let means = (0..k).map(|c| out[k + c * a..k + (c + 1) * a].to_vec()).collect();
        let variances = (0..k)
            .map(|c| {
                out[k + k * a + c * a..k + k * a + (c + 1) * a]
                    .iter()
                    .map(|lv| lv.exp() + self.var_floor)
                    .collect()
            })
            .collect();
        Mixture { weights, means, variances }
    }

    /// Mixture at a standardized state.
    pub fn mixture_standardized(&self, s: &[f64]) -> Result<Mixture> {
        Ok(self.split_output(&self.net.forward(s)?))
    }

    /// Negative log-likelihood of a standardized (state, action) pair and its
    /// parameter gradient.
    pub fn nll_gradient(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        if a.len() != self.action_dim {
            return Err(LeverageError::Dimension {
                expected: self.action_dim,
                got: a.len(),
            });
        }
        let trace = self.net.forward_trace(s)?;
        let out = trace.output();
        let k = self.components;
        let ad = self.action_dim;
        let mix = self.split_output(out);
        let log_comp: Vec<f64> = (0..k)
            .map(|c| {
                let ll: f64 = (0..ad)
                    .map(|d| {
                        let v = mix.variances[c][d];
                        let e = a[d] - mix.means[c][d];
                        -0.5 * (e * e / v + v.ln() + (2.0 * std::f64::consts::PI).ln())
                    })
                    .sum();
                mix.weights[c].ln() + ll
            })
            .collect();
        let m = log_comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + log_comp.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let resp: Vec<f64> = log_comp.iter().map(|v| (v - lse).exp()).collect();
        let mut upstream = vec![0.0; out.len()];
        for c in 0..k {
            upstream[c] = mix.weights[c] - resp[c];
            for d in 0..ad {
                let v = mix.variances[c][d];
                let e = a[d] - mix.means[c][d];
                upstream[k + c * ad + d] = -resp[c] * e / v;
                // d var / d logvar = var - floor
                let dvar = v - self.var_floor;
                upstream[k + k * ad + c * ad + d] = -resp[c] * 0.5 * (e * e / (v * v) - 1.0 / v) * dvar;
            }
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&trace, &upstream, &mut grad)?;
        Ok((-lse, grad))
    }

    /// Uncertainty at a raw (unstandardized) state. The action is not consumed.
    pub fn uncertainty(&self, state: &[f64]) -> Result<f64> {
        let expected = self.net.input_dim();
        if state.len() != expected {
            return Err(LeverageError::Dimension { expected, got: state.len() });
        }
        let mix = self.mixture_standardized(&self.state_standardizer.apply(state))?;
        Ok(mixture_uncertainty(&mix))
    }
}

/// Uncertainty of an MDN at `state`; `action` is accepted for interface
/// symmetry but only its length is checked.
pub fn mdn_uncertainty(model: &MdnModel, state: &[f64], action: &[f64]) -> Result<f64> {
    if action.len() != model.action_dim {
        return Err(LeverageError::Dimension {
            expected: model.action_dim,
            got: action.len(),
        });
    }
    model.uncertainty(state)
}

pub fn train_mdn<R: Rng + ?Sized>(
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cfg: &MdnConfig,
    rng: &mut R,
) -> Result<(MdnModel, LossTrace)> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(LeverageError::InsufficientData("MDN needs aligned, non-empty pairs".into()));
    }
    let ss = Standardizer::fit(states, cfg.min_scale);
    let sa = Standardizer::fit(actions, cfg.min_scale);
    let xs: Vec<Vec<f64>> = states.iter().map(|s| ss.apply(s)).collect();
    let ys: Vec<Vec<f64>> = actions.iter().map(|a| sa.apply(a)).collect();
    let mut model = MdnModel::new(states[0].len(), actions[0].len(), cfg, ss, sa, rng)?;
    let mut opt = Adam::new(model.net.num_params(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut initial = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        initial += model.nll_gradient(x, y)?.0;
    }
    trace.push(initial / xs.len() as f64);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = vec![0.0; model.net.num_params()];
            for &i in chunk {
                let (nll, gi) = model.nll_gradient(&xs[i], &ys[i])?;
                total += nll;
                g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b / chunk.len() as f64);
            }
            opt.step_net(&mut model.net, &g)?;
        }
        trace.push(total / xs.len() as f64);
    }
    Ok((model, trace))
}

#[derive(Clone, Debug)]
pub struct GprConfig {
    pub signal_variance: f64,
    /// `None` selects the median pairwise distance of the training inputs.
    pub length_scale: Option<f64>,
    pub noise_variance: f64,
    pub max_points: usize,
    pub min_scale: f64,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            signal_variance: 1.0,
            length_scale: None,
            noise_variance: 1e-2,
            max_points: 1000,
            min_scale: 0.05,
        }
    }
}

/// Squared-exponential GP regression from states to actions.
#[derive(Clone, Debug)]
pub struct GprModel {
    inputs: Vec<Vec<f64>>,
    targets: DMatrix<f64>,
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
    /// Extra diagonal added when the plain factorization failed.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    pub standardizer: Standardizer,
}

impl GprModel {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        se_kernel(a, b, self.signal_variance, self.length_scale)
    }

    /// Fits on already-standardized inputs. Retries the factorization with
    /// growing jitter before giving up.
    pub fn fit_standardized(
        inputs: Vec<Vec<f64>>,
        targets: &[Vec<f64>],
        signal_variance: f64,
        length_scale: f64,
        noise_variance: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(LeverageError::InsufficientData("GPR needs aligned, non-empty pairs".into()));
        }
        if !(noise_variance > 0.0 && signal_variance > 0.0 && length_scale > 0.0) {
            return Err(LeverageError::Numerical("GPR hyperparameters must be positive".into()));
        }
        let n = inputs.len();
        let out_dim = targets[0].len();
        let k = DMatrix::from_fn(n, n, |i, j| se_kernel(&inputs[i], &inputs[j], signal_variance, length_scale));
        let mut jitter = 0.0;
        let chol = loop {
            let mut kn = k.clone();
            for i in 0..n {
                kn[(i, i)] += noise_variance + jitter;
            }
            if let Some(c) = Cholesky::new(kn) {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
            if jitter > 1e-2 {
                return Err(LeverageError::Numerical("covariance is not positive definite".into()));
            }
        };
        let targets = DMatrix::from_fn(n, out_dim, |i, j| targets[i][j]);
        Ok(GprModel {
            inputs,
            targets,
            signal_variance,
            length_scale,
            noise_variance,
            jitter,
            chol,
            standardizer,
        })
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.kernel(xi, x)))
    }

    /// Posterior standard deviation of the latent function at a standardized input.
    pub fn std_standardized(&self, x: &[f64]) -> f64 {
        let ks = self.cross(x);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("cholesky factor is invertible");
        (self.signal_variance - v.dot(&v)).max(0.0).sqrt()
    }

    pub fn mean_standardized(&self, x: &[f64]) -> Vec<f64> {
        let ks = self.cross(x);
        let alpha = self.chol.solve(&self.targets);
        (alpha.transpose() * ks).iter().copied().collect()
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn num_points(&self) -> usize {
        self.inputs.len()
    }
}

pub fn se_kernel(a: &[f64], b: &[f64], signal_variance: f64, length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    signal_variance * (-d2 / (2.0 * length_scale * length_scale)).exp()
}

fn median_distance(points: &[Vec<f64>]) -> f64 {
    let m = points.len().min(200);
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub fn fit_gpr<R: Rng + ?Sized>(
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cfg: &GprConfig,
    rng: &mut R,
) -> Result<GprModel> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(LeverageError::InsufficientData("GPR needs aligned, non-empty pairs".into()));
    }
    let mut idx: Vec<usize> = (0..states.len()).collect();
    if idx.len() > cfg.max_points {
        idx = rand::seq::index::sample(rng, states.len(), cfg.max_points).into_vec();
        idx.sort_unstable();
    }
    let chosen: Vec<Vec<f64>> = idx.iter().map(|&i| states[i].clone()).collect();
    let targets: Vec<Vec<f64>> = idx.iter().map(|&i| actions[i].clone()).collect();
    let standardizer = Standardizer::fit(&chosen, cfg.min_scale);
    let inputs: Vec<Vec<f64>> = chosen.iter().map(|s| standardizer.apply(s)).collect();
    let length_scale = cfg.length_scale.unwrap_or_else(|| median_distance(&inputs));
    GprModel::fit_standardized(inputs, &targets, cfg.signal_variance, length_scale, cfg.noise_variance, standardizer)
}

/// Predictive standard deviation at a raw state.
pub fn gpr_uncertainty(model: &GprModel, state: &[f64]) -> Result<f64> {
    if state.len() != model.input_dim() {
        return Err(LeverageError::Dimension {
            expected: model.input_dim(),
            got: state.len(),
        });
    }
    Ok(model.std_standardized(&model.standardizer.apply(state)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeverageMethod {
    Vae,
    WindowVae,
    Mdn,
    Gpr,
}

impl LeverageMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LeverageMethod::Vae => "vae",
            LeverageMethod::WindowVae => "windowvae",
            LeverageMethod::Mdn => "mdn",
            LeverageMethod::Gpr => "gpr",
        }
    }
}

impl fmt::Display for LeverageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LeverageMethod {
    type Err = LeverageError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(LeverageMethod::Vae),
            "windowvae" => Ok(LeverageMethod::WindowVae),
            "mdn" => Ok(LeverageMethod::Mdn),
            "gpr" => Ok(LeverageMethod::Gpr),
            other => Err(LeverageError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LeverageConfig {
    pub vae: VaeConfig,
    pub window: usize,
    pub mdn: MdnConfig,
    pub gpr: GprConfig,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        LeverageConfig {
            vae: VaeConfig::default(),
            window: 2,
            mdn: MdnConfig::default(),
            gpr: GprConfig::default(),
        }
    }
}

/// One scoring input per state of `traj`. For a window of `w` states the
/// input for time `t` is the window ending at `t`; the first `w - 1` states
/// reuse the first window, and trajectories shorter than `w` are padded by
/// repeating their last state.
pub fn windowed_inputs(traj: &Trajectory, window: usize) -> Vec<Vec<f64>> {
    let states: Vec<&[f64]> = traj.states().collect();
    let mut padded = states.clone();
    while padded.len() < window {
        padded.push(states[states.len() - 1]);
    }
    let windows: Vec<Vec<f64>> = padded.windows(window).map(|w| w.concat()).collect();
    (0..states.len())
        .map(|t| windows[t.saturating_sub(window - 1).min(windows.len() - 1)].clone())
        .collect()
}

fn scoring_inputs(set: &DemoSet, mode: InputMode) -> Vec<Vec<f64>> {
    match mode {
        InputMode::Plain => pool_states(set, LabelFilter::All).into_iter().map(|p| p.state).collect(),
        InputMode::Windowed(w) => set.trajectories().iter().flat_map(|t| windowed_inputs(t, w)).collect(),
    }
}

/// Leverage values for a labeled set and an unlabeled pool.
#[derive(Clone, Debug)]
pub struct LeverageEvaluation {
    pub method: LeverageMethod,
    /// Raw error / uncertainty per unlabeled state, pool order.
    pub scores: Vec<f64>,
    /// Labeled records (all leverage 1) followed by unlabeled records.
    pub records: Vec<LeverageRecord>,
}

impl LeverageEvaluation {
    pub fn unlabeled(&self) -> impl Iterator<Item = &LeverageRecord> {
        self.records.iter().filter(|r| r.set == LeverageSet::Unlabeled)
    }
}

/// Trains the chosen estimator on `expert` only, scores every state of
/// `unlabeled`, normalizes across the whole pool and assigns leverage 1 to
/// every labeled state.
pub fn evaluate_unlabeled<R: Rng + ?Sized>(
    method: LeverageMethod,
    expert: &DemoSet,
    unlabeled: &DemoSet,
    cfg: &LeverageConfig,
    rng: &mut R,
) -> Result<LeverageEvaluation> {
    if expert.num_pairs() == 0 {
        return Err(LeverageError::InsufficientData("no labeled expert pairs".into()));
    }
    if unlabeled.state_dim() != expert.state_dim() || unlabeled.action_dim() != expert.action_dim() {
        return Err(LeverageError::Dimension {
            expected: expert.state_dim(),
            got: unlabeled.state_dim(),
        });
    }
    let scores = match method {
        LeverageMethod::Vae | LeverageMethod::WindowVae => {
            let mode = if method == LeverageMethod::Vae {
                InputMode::Plain
            } else {
                InputMode::Windowed(cfg.window)
            };
            let (model, _) = train_vae(&scoring_inputs(expert, mode), &cfg.vae, mode, rng)?;
            reconstruction_errors(&model, &scoring_inputs(unlabeled, mode))?.0
        }
        LeverageMethod::Mdn => {
            let (s, a): (Vec<_>, Vec<_>) = expert.pairs(LabelFilter::All).map(|p| (p.state.clone(), p.action.clone())).unzip();
            let (model, _) = train_mdn(&s, &a, &cfg.mdn, rng)?;
            pool_states(unlabeled, LabelFilter::All)
                .par_iter()
                .map(|p| model.uncertainty(&p.state))
                .collect::<Result<Vec<f64>>>()?
        }
        LeverageMethod::Gpr => {
            let (s, a): (Vec<_>, Vec<_>) = expert.pairs(LabelFilter::All).map(|p| (p.state.clone(), p.action.clone())).unzip();
            let model = fit_gpr(&s, &a, &cfg.gpr, rng)?;
            pool_states(unlabeled, LabelFilter::All)
                .par_iter()
                .map(|p| gpr_uncertainty(&model, &p.state))
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let mut records: Vec<LeverageRecord> = pool_states(expert, LabelFilter::All)
        .into_iter()
        .map(|p| LeverageRecord {
            set: LeverageSet::Labeled,
            trajectory: p.trajectory,
            time: p.time,
            leverage: 1.0,
        })
        .collect();
    if !scores.is_empty() {
        let levs = normalize_to_leverage(&ReconstructionErrorSet(scores.clone()))?;
        records.extend(pool_states(unlabeled, LabelFilter::All).into_iter().zip(levs).map(|(p, l)| {
            LeverageRecord {
                set: LeverageSet::Unlabeled,
                trajectory: p.trajectory,
                time: p.time,
                leverage: l,
            }
        }));
    }
    Ok(LeverageEvaluation { method, scores, records })
}

/// Joins leverage records with the states they refer to.
pub fn build_bank(
    expert: &DemoSet,
    unlabeled: &DemoSet,
    records: &[LeverageRecord],
    alpha: f64,
) -> Result<LeverageBank> {
    let mut states = Vec::with_capacity(records.len());
    let mut levs = Vec::with_capacity(records.len());
    for r in records {
        let set = match r.set {
            LeverageSet::Labeled => expert,
            LeverageSet::Unlabeled => unlabeled,
        };
        let pair = set
            .trajectories()
            .get(r.trajectory)
            .and_then(|t| t.pairs.get(r.time))
            .ok_or_else(|| {
                LeverageError::InsufficientData(format!(
                    "leverage record ({}, {}) has no matching state",
                    r.trajectory, r.time
                ))
            })?;
        states.push(pair.state.clone());
        levs.push(r.leverage);
    }
    Ok(LeverageBank::new(&states, &levs, alpha)?)
}
