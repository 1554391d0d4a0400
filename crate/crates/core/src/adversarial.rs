//! Discriminator over state-action pairs and behavior-cloning pretraining.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::demo::StateActionPair;
use crate::reward::DISC_CLAMP;
use crate::tensor::{Activation, Adam, Checkpoint, DenseNet, TensorError};
use crate::trpo::GaussianPolicy;

#[derive(Debug, Error)]
pub enum AdversarialError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, AdversarialError>;

/// `D(s, a)`: probability-like score where lower means more expert-like.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub net: DenseNet,
    pub optimizer: Adam,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = DenseNet::mlp(&sizes, Activation::Tanh, Activation::Sigmoid, rng)?;
        Ok(Self::from_net(net, state_dim, action_dim, lr)?)
    }

    pub fn from_net(net: DenseNet, state_dim: usize, action_dim: usize, lr: f64) -> Result<Self> {
        if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
            return Err(AdversarialError::Dimension {
                expected: state_dim + action_dim,
                got: net.input_dim(),
            });
        }
        let optimizer = Adam::new(net.num_params(), lr);
        Ok(Discriminator {
            net,
            optimizer,
            state_dim,
            action_dim,
        })
    }

    fn input(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.state_dim {
            return Err(AdversarialError::Dimension {
                expected: self.state_dim,
                got: s.len(),
            });
        }
        if a.len() != self.action_dim {
            return Err(AdversarialError::Dimension {
                expected: self.action_dim,
                got: a.len(),
            });
        }
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok(x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new().with_net("discriminator", &self.net)
    }
}

fn clamp(d: f64) -> f64 {
    d.clamp(DISC_CLAMP, 1.0 - DISC_CLAMP)
}

pub fn disc_forward(d: &Discriminator, s: &[f64], a: &[f64]) -> Result<f64> {
    let x = d.input(s, a)?;
    Ok(clamp(d.net.forward(&x)?[0]))
}

/// `mean_policy log D + mean_expert log(1 - D)` and its parameter gradient.
pub fn disc_objective_gradient(
    d: &Discriminator,
    policy_batch: &[StateActionPair],
    expert_batch: &[StateActionPair],
) -> Result<(f64, Vec<f64>)> {
    if policy_batch.is_empty() || expert_batch.is_empty() {
        return Err(AdversarialError::EmptyBatch);
    }
    let mut grad = vec![0.0; d.net.num_params()];
    let mut objective = 0.0;
    let np = policy_batch.len() as f64;
    for p in policy_batch {
        let trace = d.net.forward_trace(&d.input(&p.state, &p.action)?)?;
        let raw = trace.output()[0];
        let v = clamp(raw);
        objective += v.ln() / np;
        // the clamp is flat outside its range
        let up = if v == raw { 1.0 / (v * np) } else { 0.0 };
        d.net.backward(&trace, &[up], &mut grad)?;
    }
    let ne = expert_batch.len() as f64;
    for e in expert_batch {
        let trace = d.net.forward_trace(&d.input(&e.state, &e.action)?)?;
        let raw = trace.output()[0];
        let v = clamp(raw);
        objective += (1.0 - v).ln() / ne;
        let up = if v == raw { -1.0 / ((1.0 - v) * ne) } else { 0.0 };
        d.net.backward(&trace, &[up], &mut grad)?;
    }
    Ok((objective, grad))
}

/// One ascent step on the objective. Returns the objective before the step.
pub fn disc_update(
    d: &Discriminator,
    policy_batch: &[StateActionPair],
    expert_batch: &[StateActionPair],
) -> Result<(Discriminator, f64)> {
    let (objective, grad) = disc_objective_gradient(d, policy_batch, expert_batch)?;
    let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut next = d.clone();
    next.optimizer.step_net(&mut next.net, &descent)?;
    Ok((next, objective))
}

#[derive(Clone, Debug)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

/// Mean over pairs of `||mean(s) - a||^2` and its gradient w.r.t. mean-net parameters.
pub fn bc_loss_gradient(net: &DenseNet, pairs: &[&StateActionPair]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    let n = pairs.len() as f64;
    for p in pairs {
        let trace = net.forward_trace(&p.state)?;
        let out = trace.output();
        if out.len() != p.action.len() {
            return Err(AdversarialError::Dimension {
                expected: out.len(),
                got: p.action.len(),
            });
        }
        let up: Vec<f64> = out.iter().zip(&p.action).map(|(m, a)| 2.0 * (m - a) / n).collect();
        loss += out.iter().zip(&p.action).map(|(m, a)| (m - a).powi(2)).sum::<f64>() / n;
        net.backward(&trace, &up, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Regresses the policy mean onto expert actions. Returns the pretrained
/// policy and the loss trace: entry 0 is the full-data loss before training,
/// then one entry per minibatch step.
pub fn bc_pretrain<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    pairs: &[StateActionPair],
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<(GaussianPolicy, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(AdversarialError::EmptyBatch);
    }
    let mut out = policy.clone();
    let all: Vec<&StateActionPair> = pairs.iter().collect();
    let mut trace = vec![bc_loss_gradient(&out.mean_net, &all)?.0];
    let mut adam = Adam::new(out.mean_net.num_params(), cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&StateActionPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grad) = bc_loss_gradient(&out.mean_net, &batch)?;
            trace.push(loss);
            adam.step_net(&mut out.mean_net, &grad)?;
        }
    }
    Ok((out, trace))
}
