//! Gaussian policy, the two value estimators (adversarial and
//! leverage-reward), advantage computation, and the KL-constrained
//! natural-gradient policy step.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{sample_gaussian, Activation, Adam, Checkpoint, DenseNet, TensorError};

#[derive(Debug, Error)]
pub enum TrpoError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty initial-state set")]
    EmptyStartStates,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("conjugate gradient failed: {0}")]
    Solver(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrpoError>;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: DenseNet,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut mean_net = DenseNet::mlp(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        mean_net.scale_output_layer(0.1);
        Ok(GaussianPolicy {
            mean_net,
            log_std: vec![init_log_std; action_dim],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    /// Mean-net parameters followed by the log-std vector.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(TrpoError::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let n = self.mean_net.num_params();
        self.mean_net.set_params(&params[..n])?;
        self.log_std.copy_from_slice(&params[n..]);
        Ok(())
    }

    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean_net.forward(s)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new().with_net("policy_mean", &self.mean_net).with_vector("policy_log_std", &self.log_std)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mean_net = ck.net("policy_mean")?.clone();
        let log_std = ck.vector("policy_log_std")?.to_vec();
        if log_std.len() != mean_net.output_dim() {
            return Err(TrpoError::Dimension {
                expected: mean_net.output_dim(),
                got: log_std.len(),
            });
        }
        Ok(GaussianPolicy { mean_net, log_std })
    }
}

/// `mean(s) + exp(log_std) * noise`.
pub fn policy_sample(p: &GaussianPolicy, s: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    let mean = p.mean(s)?;
    Ok(sample_gaussian(&mean, &p.log_std, noise)?)
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

/// Entropy of the policy's action distribution (independent of the state).
pub fn policy_entropy(p: &GaussianPolicy) -> f64 {
    p.log_std.iter().map(|ls| ls + 0.5 * (LOG_2PI + 1.0)).sum()
}

pub fn log_prob_and_entropy(p: &GaussianPolicy, s: &[f64], a: &[f64]) -> Result<(f64, f64)> {
    if a.len() != p.action_dim() {
        return Err(TrpoError::Dimension {
            expected: p.action_dim(),
            got: a.len(),
        });
    }
    let mean = p.mean(s)?;
    Ok((gaussian_log_prob(&mean, &p.log_std, a), policy_entropy(p)))
}

/// Gradient of `log pi(a|s)` with respect to the flat policy parameters.
pub fn log_prob_gradient(p: &GaussianPolicy, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.len() != p.action_dim() {
        return Err(TrpoError::Dimension {
            expected: p.action_dim(),
            got: a.len(),
        });
    }
    let trace = p.mean_net.forward_trace(s)?;
    let mean = trace.output();
    let mut upstream = Vec::with_capacity(a.len());
    let mut grad = vec![0.0; p.num_params()];
    let n = p.mean_net.num_params();
    for d in 0..a.len() {
        let var = (2.0 * p.log_std[d]).exp();
        let e = a[d] - mean[d];
        upstream.push(e / var);
        grad[n + d] = e * e / var - 1.0;
    }
    let lp = gaussian_log_prob(mean, &p.log_std, a);
    p.mean_net.backward(&trace, &upstream, &mut grad[..n])?;
    Ok((lp, grad))
}

/// Mean over `states` of `KL(old || new)`.
pub fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let mut total = 0.0;
    for s in states {
        let mo = old.mean(s)?;
        let mn = new.mean(s)?;
        total += gaussian_kl(&mo, &old.log_std, &mn, &new.log_std);
    }
    Ok(total / states.len() as f64)
}

fn gaussian_kl(mo: &[f64], lso: &[f64], mn: &[f64], lsn: &[f64]) -> f64 {
    (0..mo.len())
        .map(|d| {
            let vo = (2.0 * lso[d]).exp();
            let vn = (2.0 * lsn[d]).exp();
            lsn[d] - lso[d] + (vo + (mo[d] - mn[d]).powi(2)) / (2.0 * vn) - 0.5
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRole {
    /// Discounted return of `-log D`.
    Discriminator,
    /// Discounted return of the leverage constraint reward.
    Leverage,
}

#[derive(Clone, Debug)]
pub struct ValueEstimator {
    pub net: DenseNet,
    pub role: ValueRole,
    pub optimizer: Adam,
}

#[derive(Clone, Debug)]
pub struct ValueFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ValueFitConfig {
    fn default() -> Self {
        ValueFitConfig {
            epochs: 5,
            batch_size: 64,
        }
    }
}

impl ValueEstimator {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], role: ValueRole, lr: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = DenseNet::mlp(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        let optimizer = Adam::new(net.num_params(), lr);
        Ok(ValueEstimator { net, role, optimizer })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.net.forward(s)?[0])
    }

    /// Mean squared error over `(state, target)` pairs and its gradient.
    pub fn regression_gradient(&self, states: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.num_params()];
        let mut loss = 0.0;
        let n = states.len() as f64;
        for (s, t) in states.iter().zip(targets) {
            let trace = self.net.forward_trace(s)?;
            let e = trace.output()[0] - t;
            loss += e * e / n;
            self.net.backward(&trace, &[2.0 * e / n], &mut grad)?;
        }
        Ok((loss, grad))
    }
}

/// One environment transition as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub disc_output: f64,
    pub lcor: f64,
    /// Last step of its episode; the successor is not bootstrapped.
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub steps: Vec<Step>,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub eta: f64,
}

impl RolloutBatch {
    pub fn new(steps: Vec<Step>, gamma: f64, entropy_weight: f64, eta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) && gamma != 0.0 {
            return Err(TrpoError::Invalid(format!("discount {gamma} outside [0, 1]")));
        }
        if entropy_weight < 0.0 || eta < 0.0 {
            return Err(TrpoError::Invalid("entropy weight and eta must be non-negative".into()));
        }
        for s in &steps {
            if !(s.disc_output > 0.0 && s.disc_output < 1.0) {
                return Err(TrpoError::Invalid(format!("discriminator output {} outside (0, 1)", s.disc_output)));
            }
            if !(0.0..=1.0).contains(&s.lcor) {
                return Err(TrpoError::Invalid(format!("lcor {} outside [0, 1]", s.lcor)));
            }
        }
        Ok(RolloutBatch {
            steps,
            gamma,
            entropy_weight,
            eta,
        })
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }

    /// Per-step signal for a value role.
    pub fn signal(&self, role: ValueRole) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| match role {
                ValueRole::Discriminator => crate::reward::disc_reward(s.disc_output),
                ValueRole::Leverage => s.lcor,
            })
            .collect()
    }
}

/// Discounted returns computed backwards within each episode, restarting at
/// every `done` flag. The final step of the batch is always treated as terminal.
pub fn discounted_returns(signal: &[f64], done: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    let mut acc = 0.0;
    for i in (0..signal.len()).rev() {
        if done[i] || i + 1 == signal.len() {
            acc = 0.0;
        }
        acc = signal[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Regresses `v` onto the discounted returns of its role's signal.
/// Returns the fitted estimator and the per-epoch losses.
pub fn fit_values<R: Rng + ?Sized>(
    v: &ValueEstimator,
    batch: &RolloutBatch,
    cfg: &ValueFitConfig,
    rng: &mut R,
) -> Result<(ValueEstimator, Vec<f64>)> {
    if batch.steps.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let done: Vec<bool> = batch.steps.iter().map(|s| s.done).collect();
    let targets = discounted_returns(&batch.signal(v.role), &done, batch.gamma);
    let mut fitted = v.clone();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let states: Vec<&[f64]> = chunk.iter().map(|&i| batch.steps[i].state.as_slice()).collect();
            let t: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = fitted.regression_gradient(&states, &t)?;
            epoch_loss += loss * chunk.len() as f64;
            let mut params = fitted.net.params();
            fitted.optimizer.step(&mut params, &grad)?;
            fitted.net.set_params(&params)?;
        }
        losses.push(epoch_loss / targets.len() as f64);
    }
    Ok((fitted, losses))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    /// Advantages exactly as the one-step residual formula gives them.
    pub raw: Vec<f64>,
    /// Zero mean, unit standard deviation version used for the policy step.
    pub normalized: Vec<f64>,
}

/// `A = -log D + g V_D(s') - V_D(s) + eta (LCoR + g V_C(s') - V_C(s))`, with
/// `V(s') = 0` on terminal steps. `v_c` may be omitted when `eta == 0`.
pub fn compute_advantages(batch: &RolloutBatch, v_d: &ValueEstimator, v_c: Option<&ValueEstimator>) -> Result<Advantages> {
    if batch.steps.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let g = batch.gamma;
    let mut raw = Vec::with_capacity(batch.steps.len());
    for step in &batch.steps {
        let next_d = if step.done { 0.0 } else { v_d.value(&step.next_state)? };
        let mut a = crate::reward::disc_reward(step.disc_output) + g * next_d - v_d.value(&step.state)?;
        if batch.eta != 0.0 {
            let v_c = v_c.ok_or_else(|| TrpoError::Invalid("eta > 0 needs a leverage value estimator".into()))?;
            let next_c = if step.done { 0.0 } else { v_c.value(&step.next_state)? };
            a += batch.eta * (step.lcor + g * next_c - v_c.value(&step.state)?);
        }
        raw.push(a);
    }
    Ok(Advantages {
        normalized: normalize(&raw),
        raw,
    })
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / std).collect()
}

/// Solves `H x = g` for a symmetric positive-definite operator `H`.
/// Stops when `||H x - g|| <= tol * ||g||` or after `iters` iterations.
pub fn conjugate_gradient<F>(mut hvp: F, g: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; g.len()];
    let mut r = g.to_vec();
    let mut p = g.to_vec();
    let g_norm = dot(g, g).sqrt();
    if !g_norm.is_finite() {
        return Err(TrpoError::Solver("non-finite right-hand side".into()));
    }
    if g_norm == 0.0 {
        return Ok(x);
    }
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr.sqrt() <= tol * g_norm {
            break;
        }
        let hp = hvp(&p);
        let php = dot(&p, &hp);
        if !php.is_finite() || php <= 0.0 {
            return Err(TrpoError::Solver(format!("curvature {php} along search direction")));
        }
        let alpha = rr / php;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&hp).for_each(|(ri, hi)| *ri -= alpha * hi);
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(TrpoError::Solver("non-finite residual".into()));
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            max_kl: 0.01,
            damping: 0.1,
            cg_iters: 10,
            cg_tol: 1e-10,
            backtrack_factor: 0.8,
            max_backtracks: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Accepted,
    Rejected,
    ZeroGradient,
    NonFinite,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Accepted => "accepted",
            StepStatus::Rejected => "rejected",
            StepStatus::ZeroGradient => "zero-gradient",
            StepStatus::NonFinite => "non-finite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub status: StepStatus,
    /// Measured mean KL of the returned policy from the old one.
    pub kl: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub backtracks: usize,
}

/// Surrogate `mean(ratio * A) + lambda * H` for candidate parameters.
fn surrogate(
    p: &GaussianPolicy,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_logp: &[f64],
    adv: &[f64],
    entropy_weight: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for ((s, a), (lo, ad)) in states.iter().zip(actions).zip(old_logp.iter().zip(adv)) {
        let mean = p.mean(s)?;
        let lp = gaussian_log_prob(&mean, &p.log_std, a);
        total += (lp - lo).exp() * ad;
    }
    Ok(total / states.len() as f64 + entropy_weight * policy_entropy(p))
}

/// Fisher-vector product of the mean KL at the current parameters, plus damping.
pub fn fisher_vector_product(p: &GaussianPolicy, states: &[Vec<f64>], v: &[f64], damping: f64) -> Result<Vec<f64>> {
    let n_mean = p.mean_net.num_params();
    let inv_var: Vec<f64> = p.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut out = vec![0.0; v.len()];
    for s in states {
        let (_, jv) = p.mean_net.jvp(s, &v[..n_mean])?;
        let trace = p.mean_net.forward_trace(s)?;
        let up: Vec<f64> = jv.iter().zip(&inv_var).map(|(a, b)| a * b).collect();
        p.mean_net.backward(&trace, &up, &mut out[..n_mean])?;
    }
    let n = states.len() as f64;
    out[..n_mean].iter_mut().for_each(|o| *o /= n);
    // log-std block of the Gaussian Fisher is 2 I
    for d in 0..p.log_std.len() {
        out[n_mean + d] = 2.0 * v[n_mean + d];
    }
    out.iter_mut().zip(v).for_each(|(o, vi)| *o += damping * vi);
    Ok(out)
}

/// Natural-gradient step on the surrogate under a mean-KL trust region,
/// with backtracking. A step that cannot satisfy both the KL bound and a
/// surrogate improvement returns the old policy unchanged.
pub fn trpo_step(
    p: &GaussianPolicy,
    batch: &RolloutBatch,
    advantages: &[f64],
    cfg: &TrpoConfig,
) -> Result<(GaussianPolicy, StepReport)> {
    if batch.steps.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    if advantages.len() != batch.steps.len() {
        return Err(TrpoError::Dimension {
            expected: batch.steps.len(),
            got: advantages.len(),
        });
    }
    let states = batch.states();
    let actions: Vec<Vec<f64>> = batch.steps.iter().map(|s| s.action.clone()).collect();
    let n = states.len() as f64;
    let np = p.num_params();
    let mut old_logp = Vec::with_capacity(states.len());
    let mut grad = vec![0.0; np];
    for ((s, a), adv) in states.iter().zip(&actions).zip(advantages) {
        let (lp, g) = log_prob_gradient(p, s, a)?;
        old_logp.push(lp);
        if *adv != 0.0 {
            grad.iter_mut().zip(&g).for_each(|(acc, gi)| *acc += adv * gi / n);
        }
    }
    let n_mean = p.mean_net.num_params();
    for d in 0..p.log_std.len() {
        grad[n_mean + d] += batch.entropy_weight;
    }
    let before = surrogate(p, &states, &actions, &old_logp, advantages, batch.entropy_weight)?;
    let unchanged = |status| StepReport {
        status,
        kl: 0.0,
        surrogate_before: before,
        surrogate_after: before,
        backtracks: 0,
    };
    if grad.iter().any(|g| !g.is_finite()) {
        return Ok((p.clone(), unchanged(StepStatus::NonFinite)));
    }
    if grad.iter().all(|g| *g == 0.0) {
        return Ok((p.clone(), unchanged(StepStatus::ZeroGradient)));
    }
    let mut fvp_err = None;
    let direction = conjugate_gradient(
        |v| match fisher_vector_product(p, &states, v, cfg.damping) {
            Ok(r) => r,
            Err(e) => {
                fvp_err = Some(e);
                vec![f64::NAN; v.len()]
            }
        },
        &grad,
        cfg.cg_iters,
        cfg.cg_tol,
    );
    if let Some(e) = fvp_err {
        return Err(e);
    }
    let direction = match direction {
        Ok(d) => d,
        Err(_) => return Ok((p.clone(), unchanged(StepStatus::NonFinite))),
    };
    let fx = fisher_vector_product(p, &states, &direction, cfg.damping)?;
    let shs: f64 = direction.iter().zip(&fx).map(|(a, b)| a * b).sum();
    if !(shs.is_finite() && shs > 0.0) {
        return Ok((p.clone(), unchanged(StepStatus::NonFinite)));
    }
    let scale = (2.0 * cfg.max_kl / shs).sqrt();
    let theta = p.params();
    let mut frac = 1.0;
    for k in 0..=cfg.max_backtracks {
        let cand_params: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + frac * scale * d).collect();
        let mut cand = p.clone();
        cand.set_params(&cand_params)?;
        let kl = mean_kl(p, &cand, &states)?;
        let after = surrogate(&cand, &states, &actions, &old_logp, advantages, batch.entropy_weight)?;
        if kl.is_finite() && after.is_finite() && kl <= cfg.max_kl && after > before {
            return Ok((
                cand,
                StepReport {
                    status: StepStatus::Accepted,
                    kl,
                    surrogate_before: before,
                    surrogate_after: after,
                    backtracks: k,
                },
            ));
        }
        frac *= cfg.backtrack_factor;
    }
    let mut report = unchanged(StepStatus::Rejected);
    report.backtracks = cfg.max_backtracks;
    Ok((p.clone(), report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaDecision {
    pub eta: f64,
    pub delta_vd: f64,
    pub delta_vc: f64,
    pub decayed: bool,
}

/// Multiplies `eta` by `epsilon` when the mean improvement of `V_D` over the
/// initial states exceeds that of `V_C`.
pub fn eta_decay_check(
    vd_before: &ValueEstimator,
    vd_after: &ValueEstimator,
    vc_before: &ValueEstimator,
    vc_after: &ValueEstimator,
    start_states: &[Vec<f64>],
    eta: f64,
    epsilon: f64,
) -> Result<EtaDecision> {
    if start_states.is_empty() {
        return Err(TrpoError::EmptyStartStates);
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TrpoError::Invalid(format!("decay rate {epsilon} outside (0, 1)")));
    }
    let n = start_states.len() as f64;
    let mut dvd = 0.0;
    let mut dvc = 0.0;
    for s in start_states {
        dvd += (vd_after.value(s)? - vd_before.value(s)?) / n;
        dvc += (vc_after.value(s)? - vc_before.value(s)?) / n;
    }
    Ok(decay_rule(eta, epsilon, dvd, dvc))
}

/// The bare decay rule on precomputed deltas.
pub fn decay_rule(eta: f64, epsilon: f64, delta_vd: f64, delta_vc: f64) -> EtaDecision {
    let decayed = delta_vd > delta_vc;
    EtaDecision {
        eta: if decayed { epsilon * eta } else { eta },
        delta_vd,
        delta_vc,
        decayed,
    }
}
