//! Experiment orchestration: demonstration generation, leverage scoring,
//! the interleaved adversarial / trust-region training loop, and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::{bc_pretrain, disc_forward, disc_update, AdversarialError, BcConfig, Discriminator};
use crate::demo::{
    load_leverages, save_leverages, DemoError, DemoSet, Label, LabelFilter, LeverageRecord, LeverageSet,
    StateActionPair,
};
use crate::leverage::{build_bank, evaluate_unlabeled, LeverageConfig, LeverageError, LeverageMethod, Standardizer};
use crate::reward::{cor, lcor, BinaryBank, LeverageBank, RewardError};
use crate::sim::{
    controller_score, episode_rng, episode_score, record_pairs, Env, EnvConfig, Preset, Quality, SimError, Track,
    TrackSpec,
};
use crate::tensor::TensorError;
use crate::trpo::{
    compute_advantages, eta_decay_check, fit_values, policy_sample, trpo_step, GaussianPolicy, RolloutBatch,
    Step, StepStatus, TrpoConfig, TrpoError, ValueEstimator, ValueFitConfig, ValueRole,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("training diverged at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Leverage(#[from] LeverageError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Adversarial(#[from] AdversarialError),
    #[error(transparent)]
    Trpo(#[from] TrpoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Discriminator fed with labeled and unlabeled pairs as expert data.
    Gail,
    /// Discriminator fed with labeled pairs only.
    GailExpertOnly,
    /// Labeled states as the positive bank, unlabeled as the negative bank.
    Mixgail,
    /// Leverage-weighted shaping from the unlabeled pool.
    Ssil,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gail => "gail",
            Method::GailExpertOnly => "gail-expert-only",
            Method::Mixgail => "mixgail",
            Method::Ssil => "ssil",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gail" => Ok(Method::Gail),
            "gail-expert-only" => Ok(Method::GailExpertOnly),
            "mixgail" => Ok(Method::Mixgail),
            "ssil" => Ok(Method::Ssil),
            other => Err(ExperimentError::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Everything a run needs. Serialized as flat TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub method: Method,
    pub leverage_method: LeverageMethod,
    pub labeled_budget: usize,
    pub pool_size: usize,
    pub pool_expert_fraction: f64,
    pub pool_tiers: Vec<f64>,
    pub alpha: f64,
    pub eta0: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_kl: f64,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub eval_seed: u64,
    pub preset: Preset,
    pub demo_track: String,
    pub train_track: String,
    pub out: PathBuf,
    pub policy_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub bc_epochs: usize,
    pub bc_lr: f64,
    pub disc_hidden: Vec<usize>,
    pub disc_lr: f64,
    pub disc_batch: usize,
    pub disc_updates: usize,
    pub value_hidden: Vec<usize>,
    pub value_lr: f64,
    pub value_epochs: usize,
    pub start_states: usize,
    pub bank_cap: usize,
    pub vae_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            method: Method::Ssil,
            leverage_method: LeverageMethod::Vae,
            labeled_budget: 600,
            pool_size: 8000,
            pool_expert_fraction: 0.5,
            pool_tiers: vec![0.3, 0.6, 0.9],
            alpha: 1.0,
            eta0: 1.0,
            epsilon: 0.995,
            gamma: 0.99,
            lambda: 0.0,
            max_kl: 0.01,
            iterations: 150,
            episodes_per_iteration: 5,
            eval_episodes: 10,
            seeds: vec![0, 1, 2],
            data_seed: 7,
            eval_seed: 1_000_003,
            preset: Preset::TorcsLike,
            demo_track: "oval".into(),
            train_track: "oval".into(),
            out: PathBuf::from("runs"),
            policy_hidden: vec![64, 64],
            init_log_std: -1.0,
            bc_epochs: 30,
            bc_lr: 1e-3,
            disc_hidden: vec![64, 64],
            disc_lr: 1e-3,
            disc_batch: 256,
            disc_updates: 5,
            value_hidden: vec![64, 64],
            value_lr: 1e-3,
            value_epochs: 5,
            start_states: 32,
            bank_cap: 0,
            vae_epochs: 150,
        }
    }
}

const TEMPLATE_COMMENTS: &[(&str, &str)] = &[
    ("alpha", "α, kernel shape"),
    ("eta0", "η₀, initial weight of the shaping reward"),
    ("epsilon", "ε, decay rate of η"),
    ("gamma", "γ, return discount"),
    ("lambda", "λ, entropy weight"),
    ("max_kl", "δ_KL, trust region radius"),
];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.eta0.is_finite() && self.eta0 >= 0.0) {
            return bad(format!("eta0 = {} must be >= 0", self.eta0));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon = {} must lie in (0, 1)", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1]", self.gamma));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha = {} must be > 0", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda = {} must be >= 0", self.lambda));
        }
        if !(self.max_kl.is_finite() && self.max_kl > 0.0) {
            return bad(format!("max_kl = {} must be > 0", self.max_kl));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.labeled_budget == 0 {
            return bad("labeled_budget must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.pool_expert_fraction) {
            return bad(format!("pool_expert_fraction = {} outside [0, 1]", self.pool_expert_fraction));
        }
        if self.pool_tiers.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return bad("pool tiers must lie in (0, 1]".into());
        }
        if self.pool_tiers.is_empty() && self.pool_expert_fraction < 1.0 && self.pool_size > 0 {
            return bad("a pool with non-expert share needs at least one tier".into());
        }
        if self.episodes_per_iteration == 0 || self.eval_episodes == 0 || self.start_states == 0 {
            return bad("episode and start-state counts must be positive".into());
        }
        TrackSpec::resolve(&self.demo_track)?;
        TrackSpec::resolve(&self.train_track)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ExperimentError::MissingInput(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    /// TOML text with symbol comments on the algorithm hyperparameters.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serialization is infallible");
        let mut out = String::new();
        for line in body.lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if let Some((_, c)) = TEMPLATE_COMMENTS.iter().find(|(k, _)| *k == key) {
                out.push_str(&format!("# {c}\n"));
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig::new(self.preset)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn labeled_path(&self) -> PathBuf {
        self.data_dir().join("labeled.traj")
    }

    pub fn pool_path(&self) -> PathBuf {
        self.data_dir().join("pool.traj")
    }

    pub fn leverage_path(&self) -> PathBuf {
        self.out.join("leverage").join(format!("{}.lev", self.leverage_method))
    }

    pub fn tier_report_path(&self) -> PathBuf {
        self.out.join("leverage").join(format!("{}-tiers.csv", self.leverage_method))
    }

    pub fn run_name(&self) -> String {
        match self.method {
            Method::Ssil => format!("ssil-{}", self.leverage_method),
            m => m.to_string(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join("runs").join(self.run_name())
    }
}

/// Independent seed derived from `seed` for sub-task `k`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r.next_u64()
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Pair counts for the pool: expert share first, then one count per tier.
pub fn pool_composition(cfg: &ExperimentConfig) -> (usize, Vec<usize>) {
    let experts = (cfg.pool_size as f64 * cfg.pool_expert_fraction).round() as usize;
    let rest = cfg.pool_size - experts.min(cfg.pool_size);
    let k = cfg.pool_tiers.len();
    if k == 0 {
        return (cfg.pool_size, Vec::new());
    }
    let mut counts = vec![rest / k; k];
    counts[k - 1] += rest % k;
    (experts.min(cfg.pool_size), counts)
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub labeled: DemoSet,
    pub pool: DemoSet,
}

/// Scripted demonstrations on the demo track: the labeled expert set and
/// the unlabeled pool.
pub fn generate(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let env = cfg.env_config();
    let track = Track::new(TrackSpec::resolve(&cfg.demo_track)?)?;
    let labeled = record_pairs(&env, &track, Quality::Expert, cfg.labeled_budget, sub_seed(cfg.data_seed, 0), Label::Expert)?;
    let (experts, tiers) = pool_composition(cfg);
    let mut pool = DemoSet::empty(env.obs_dim(), env.action_dim());
    if experts > 0 {
        pool.extend(&record_pairs(&env, &track, Quality::Expert, experts, sub_seed(cfg.data_seed, 1), Label::Unlabeled)?)?;
    }
    for (i, (&p, &n)) in cfg.pool_tiers.iter().zip(&tiers).enumerate() {
        if n > 0 {
            let seed = sub_seed(cfg.data_seed, 2 + i as u64);
            pool.extend(&record_pairs(&env, &track, Quality::Tier(p), n, seed, Label::Unlabeled)?)?;
        }
    }
    Ok(GeneratedData { labeled, pool })
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    let data = generate(cfg)?;
    fs::create_dir_all(cfg.data_dir())?;
    data.labeled.save(&cfg.labeled_path())?;
    data.pool.save(&cfg.pool_path())?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;
    Ok(data)
}

fn load_demo(path: &Path) -> Result<DemoSet> {
    if !path.exists() {
        return Err(ExperimentError::MissingInput(path.to_path_buf()));
    }
    Ok(DemoSet::load(path)?)
}

pub fn load_generated(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    Ok(GeneratedData {
        labeled: load_demo(&cfg.labeled_path())?,
        pool: load_demo(&cfg.pool_path())?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub tier: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and spread of unlabeled leverage grouped by the source tag of each trajectory.
pub fn tier_report(pool: &DemoSet, records: &[LeverageRecord]) -> Vec<TierRow> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.set == LeverageSet::Unlabeled) {
        if let Some(t) = pool.trajectories().get(r.trajectory) {
            groups.entry(t.source.clone()).or_default().push(r.leverage);
        }
    }
    groups
        .into_iter()
        .map(|(tier, v)| {
            let (mean, std) = mean_std(&v);
            TierRow {
                tier,
                count: v.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn leverage_config(cfg: &ExperimentConfig) -> LeverageConfig {
    let mut lc = LeverageConfig::default();
    lc.vae.epochs = cfg.vae_epochs;
    lc
}

pub fn compute_leverage(cfg: &ExperimentConfig, data: &GeneratedData) -> Result<Vec<LeverageRecord>> {
    let mut rng = stream(cfg.data_seed, 100);
    let ev = evaluate_unlabeled(cfg.leverage_method, &data.labeled, &data.pool, &leverage_config(cfg), &mut rng)?;
    Ok(ev.records)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(ExperimentError::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn cmd_leverage(cfg: &ExperimentConfig) -> Result<Vec<TierRow>> {
    cfg.validate()?;
    let data = load_generated(cfg)?;
    let records = compute_leverage(cfg, &data)?;
    fs::create_dir_all(cfg.out.join("leverage"))?;
    save_leverages(&cfg.leverage_path(), &records)?;
    let rows = tier_report(&data.pool, &records);
    write_csv(&cfg.tier_report_path(), &rows)?;
    Ok(rows)
}

/// Tier report from an existing leverage file.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<TierRow>> {
    let pool = load_demo(&cfg.pool_path())?;
    let path = cfg.leverage_path();
    if !path.exists() {
        return Err(ExperimentError::MissingInput(path));
    }
    let rows = tier_report(&pool, &load_leverages(&path)?);
    write_csv(&cfg.tier_report_path(), &rows)?;
    Ok(rows)
}

/// One row of the per-iteration metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_eval_reward: f64,
    pub mean_kl: f64,
    pub eta: f64,
    pub delta_vd: f64,
    pub delta_vc: f64,
    pub disc_loss: f64,
    pub step: String,
}

/// Outcome of one trust-region step, kept for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAudit {
    pub status: StepStatus,
    pub kl: f64,
    /// Parameters after the step are bit-identical to those before it.
    pub unchanged: bool,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub audits: Vec<StepAudit>,
    pub policy: GaussianPolicy,
    pub discriminator: Discriminator,
    pub final_score: f64,
}

// Bank states live in the expert-standardized space; queries are mapped the same way.
enum Shaping {
    None,
    Leverage(LeverageBank, Standardizer),
    Binary(BinaryBank, Standardizer),
}

impl Shaping {
    fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(match self {
            Shaping::None => 0.0,
            Shaping::Leverage(b, z) => lcor(&z.apply(s), b)?,
            Shaping::Binary(b, z) => cor(&z.apply(s), b)?,
        })
    }
}

/// Per-dimension standardizer fitted on the labeled expert states.
pub fn shaping_standardizer(labeled: &DemoSet) -> Standardizer {
    let rows: Vec<Vec<f64>> = labeled.pairs(LabelFilter::All).map(|p| p.state.clone()).collect();
    Standardizer::fit(&rows, 0.05)
}

/// SSIL leverage bank over standardized states, capped at `cap` entries (0 keeps all).
pub fn standardized_bank<R: Rng + ?Sized>(
    labeled: &DemoSet,
    pool: &DemoSet,
    records: &[LeverageRecord],
    alpha: f64,
    cap: usize,
    rng: &mut R,
) -> Result<(LeverageBank, Standardizer)> {
    let z = shaping_standardizer(labeled);
    let raw = build_bank(labeled, pool, records, alpha)?;
    let states: Vec<Vec<f64>> = (0..raw.len()).map(|j| z.apply(raw.state(j))).collect();
    let bank = LeverageBank::new(&states, raw.leverages(), alpha)?;
    Ok((bank.subsample(cap, rng), z))
}

/// Inputs the training loop needs beyond the config.
#[derive(Clone, Debug)]
pub struct TrainingInputs {
    pub labeled: DemoSet,
    pub pool: DemoSet,
    /// Leverage records; required for SSIL.
    pub leverage: Option<Vec<LeverageRecord>>,
}

fn subsample_rows<R: Rng + ?Sized>(rows: Vec<Vec<f64>>, cap: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if cap == 0 || rows.len() <= cap {
        return rows;
    }
    let mut idx = sample(rng, rows.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

fn sample_pairs<'a, R: Rng + ?Sized>(pairs: &'a [StateActionPair], n: usize, rng: &mut R) -> Vec<StateActionPair> {
    let n = n.min(pairs.len()).max(1);
    sample(rng, pairs.len(), n).into_iter().map(|i| pairs[i].clone()).collect()
}

struct Rollout {
    steps: Vec<Step>,
    score: f64,
}

fn rollout(policy: &GaussianPolicy, env_cfg: &EnvConfig, track: &Track, rng: &mut ChaCha8Rng, stochastic: bool) -> Result<Rollout> {
    let mut env = Env::new(env_cfg.clone(), track.clone());
    env.reset(rng);
    let mut state = env.features();
    let mut steps = Vec::new();
    let mut ret = 0.0;
    loop {
        let action = if stochastic {
            let noise: Vec<f64> = (0..policy.action_dim()).map(|_| StandardNormal.sample(rng)).collect();
            policy_sample(policy, &state, &noise)?
        } else {
            policy.mean(&state)?
        };
        if action.iter().any(|a| !a.is_finite()) {
            return Err(TrpoError::Invalid("policy produced a non-finite action".into()).into());
        }
        let (_, done, info) = env.step(&action)?;
        let next = env.features();
        ret += info.reward;
        steps.push(Step {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            next_state: next,
            disc_output: 0.5,
            lcor: 0.0,
            done,
        });
        if done {
            break;
        }
    }
    let score = episode_score(env_cfg.preset, ret, steps.len());
    Ok(Rollout { steps, score })
}

/// Mean evaluation score of the deterministic policy over `episodes` seeded starts.
pub fn evaluate_policy(policy: &GaussianPolicy, env_cfg: &EnvConfig, track: &Track, episodes: usize, seed: u64) -> Result<f64> {
    let scores = (0..episodes)
        .into_par_iter()
        .map(|i| rollout(policy, env_cfg, track, &mut episode_rng(seed, i as u64), false).map(|r| r.score))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / episodes as f64)
}

/// Reference score of the scripted expert on the training track.
pub fn expert_reference(cfg: &ExperimentConfig) -> Result<f64> {
    let track = Track::new(TrackSpec::resolve(&cfg.train_track)?)?;
    Ok(controller_score(&cfg.env_config(), &track, Quality::Expert, cfg.eval_episodes, cfg.eval_seed)?)
}

/// The full interleaved loop for one seed.
pub fn train_seed(cfg: &ExperimentConfig, inputs: &TrainingInputs, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let env_cfg = cfg.env_config();
    let track = Track::new(TrackSpec::resolve(&cfg.train_track)?)?;
    let sd = env_cfg.obs_dim();
    let ad = env_cfg.action_dim();
    if inputs.labeled.state_dim() != sd || inputs.labeled.action_dim() != ad {
        return Err(ExperimentError::Config(format!(
            "demonstrations have dims ({}, {}), preset {} needs ({sd}, {ad})",
            inputs.labeled.state_dim(),
            inputs.labeled.action_dim(),
            cfg.preset
        )));
    }

    let mut init_rng = stream(seed, 1);
    let mut policy = GaussianPolicy::new(sd, ad, &cfg.policy_hidden, cfg.init_log_std, &mut init_rng)?;
    let mut disc = Discriminator::new(sd, ad, &cfg.disc_hidden, cfg.disc_lr, &mut init_rng)?;
    let mut vd = ValueEstimator::new(sd, &cfg.value_hidden, ValueRole::Discriminator, cfg.value_lr, &mut init_rng)?;
    let mut vc = ValueEstimator::new(sd, &cfg.value_hidden, ValueRole::Leverage, cfg.value_lr, &mut init_rng)?;

    let labeled_pairs: Vec<StateActionPair> = inputs.labeled.pairs(LabelFilter::All).cloned().collect();
    let expert_pairs: Vec<StateActionPair> = match cfg.method {
        Method::Gail => labeled_pairs.iter().cloned().chain(inputs.pool.pairs(LabelFilter::All).cloned()).collect(),
        _ => labeled_pairs,
    };
    if expert_pairs.is_empty() {
        return Err(ExperimentError::Config("no expert pairs".into()));
    }

    let bc = BcConfig {
        epochs: cfg.bc_epochs,
        batch_size: 64,
        lr: cfg.bc_lr,
    };
    policy = bc_pretrain(&policy, &expert_pairs, &bc, &mut stream(seed, 2))?.0;

    let mut bank_rng = stream(seed, 5);
    let shaping = if cfg.eta0 == 0.0 {
        Shaping::None
    } else {
        match cfg.method {
            Method::Gail | Method::GailExpertOnly => Shaping::None,
            Method::Ssil => {
                let records = inputs
                    .leverage
                    .as_ref()
                    .ok_or_else(|| ExperimentError::Config("ssil needs leverage records".into()))?;
                let (bank, z) =
                    standardized_bank(&inputs.labeled, &inputs.pool, records, cfg.alpha, cfg.bank_cap, &mut bank_rng)?;
                Shaping::Leverage(bank, z)
            }
            Method::Mixgail => {
                let pos: Vec<Vec<f64>> = inputs.labeled.pairs(LabelFilter::All).map(|p| p.state.clone()).collect();
                let neg: Vec<Vec<f64>> = inputs.pool.pairs(LabelFilter::All).map(|p| p.state.clone()).collect();
                let z = shaping_standardizer(&inputs.labeled);
                let half = cfg.bank_cap / 2;
                let pos: Vec<Vec<f64>> = subsample_rows(pos, half, &mut bank_rng).iter().map(|r| z.apply(r)).collect();
                let neg: Vec<Vec<f64>> = subsample_rows(neg, half, &mut bank_rng).iter().map(|r| z.apply(r)).collect();
                Shaping::Binary(BinaryBank::new(&pos, &neg, cfg.alpha)?, z)
            }
        }
    };
    let mut eta = if matches!(shaping, Shaping::None) { 0.0 } else { cfg.eta0 };

    let mut start_rng = stream(seed, 6);
    let start_states: Vec<Vec<f64>> = (0..cfg.start_states)
        .map(|_| {
            let mut env = Env::new(env_cfg.clone(), track.clone());
            env.reset(&mut start_rng);
            env.features()
        })
        .collect();

    let mut disc_rng = stream(seed, 3);
    let mut value_rng = stream(seed, 4);
    let vcfg = ValueFitConfig {
        epochs: cfg.value_epochs,
        batch_size: 64,
    };
    let tcfg = TrpoConfig {
        max_kl: cfg.max_kl,
        ..TrpoConfig::default()
    };
    let episodes = cfg.episodes_per_iteration;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut audits = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let rollouts = (0..episodes)
            .into_par_iter()
            .map(|e| {
                let mut rng = episode_rng(seed, 1000 + (it * episodes + e) as u64);
                rollout(&policy, &env_cfg, &track, &mut rng, true)
            })
            .collect::<Result<Vec<Rollout>>>()?;
        let mean_eval = rollouts.iter().map(|r| r.score).sum::<f64>() / episodes as f64;
        let mut steps: Vec<Step> = rollouts.into_iter().flat_map(|r| r.steps).collect();

        let policy_pairs: Vec<StateActionPair> = steps
            .iter()
            .map(|s| StateActionPair {
                state: s.state.clone(),
                action: s.action.clone(),
            })
            .collect();
        let mut disc_loss = 0.0;
        for _ in 0..cfg.disc_updates {
            let pb = sample_pairs(&policy_pairs, cfg.disc_batch, &mut disc_rng);
            let eb = sample_pairs(&expert_pairs, cfg.disc_batch, &mut disc_rng);
            let (next, obj) = disc_update(&disc, &pb, &eb)?;
            disc = next;
            disc_loss = obj;
        }
        if disc.net.params().iter().any(|p| !p.is_finite()) {
            return Err(ExperimentError::NonFinite {
                iteration: it,
                what: "discriminator parameters".into(),
            });
        }

        let scored = steps
            .par_iter()
            .map(|s| {
                let d = disc_forward(&disc, &s.state, &s.action)?;
                let c = if eta > 0.0 { shaping.value(&s.state)? } else { 0.0 };
                Ok((d, c))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        for (s, (d, c)) in steps.iter_mut().zip(scored) {
            s.disc_output = d;
            s.lcor = c;
        }
        let batch = RolloutBatch::new(steps, cfg.gamma, cfg.lambda, eta)?;

        let vd_before = vd.clone();
        vd = fit_values(&vd, &batch, &vcfg, &mut value_rng)?.0;
        let vc_before = vc.clone();
        if eta > 0.0 {
            vc = fit_values(&vc, &batch, &vcfg, &mut value_rng)?.0;
        }
        let adv = compute_advantages(&batch, &vd, (eta > 0.0).then_some(&vc))?;
        let before = policy.params();
        let (next, report) = trpo_step(&policy, &batch, &adv.normalized, &tcfg)?;
        let after = next.params();
        if after.iter().any(|p| !p.is_finite()) {
            return Err(ExperimentError::NonFinite {
                iteration: it,
                what: "policy parameters".into(),
            });
        }
        audits.push(StepAudit {
            status: report.status,
            kl: report.kl,
            unchanged: before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()),
        });
        policy = next;

        let (delta_vd, delta_vc) = if eta > 0.0 {
            let d = eta_decay_check(&vd_before, &vd, &vc_before, &vc, &start_states, eta, cfg.epsilon)?;
            eta = d.eta;
            (d.delta_vd, d.delta_vc)
        } else {
            let mut dvd = 0.0;
            for s in &start_states {
                dvd += vd.value(s)? - vd_before.value(s)?;
            }
            (dvd / start_states.len() as f64, 0.0)
        };
        rows.push(MetricsRow {
            iteration: it,
            mean_eval_reward: mean_eval,
            mean_kl: report.kl,
            eta,
            delta_vd,
            delta_vc,
            disc_loss,
            step: report.status.as_str().to_string(),
        });
    }

    let final_score = evaluate_policy(&policy, &env_cfg, &track, cfg.eval_episodes, cfg.eval_seed)?;
    Ok(SeedRun {
        seed,
        rows,
        audits,
        policy,
        discriminator: disc,
        final_score,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub leverage_method: Option<LeverageMethod>,
    pub labeled_budget: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub final_scores: Vec<f64>,
    pub mean_score: f64,
    pub std_score: f64,
    pub expert_score: f64,
    pub scaled_scores: Vec<f64>,
    pub scaled_mean: f64,
    pub scaled_std: f64,
}

impl RunReport {
    pub fn from_runs(cfg: &ExperimentConfig, runs: &[SeedRun], expert_score: f64) -> Self {
        let finals: Vec<f64> = runs.iter().map(|r| r.final_score).collect();
        let scaled: Vec<f64> = finals.iter().map(|s| s / expert_score).collect();
        let (mean_score, std_score) = mean_std(&finals);
        let (scaled_mean, scaled_std) = mean_std(&scaled);
        RunReport {
            method: cfg.method,
            leverage_method: (cfg.method == Method::Ssil).then_some(cfg.leverage_method),
            labeled_budget: cfg.labeled_budget,
            iterations: cfg.iterations,
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_scores: finals,
            mean_score,
            std_score,
            expert_score,
            scaled_scores: scaled,
            scaled_mean,
            scaled_std,
        }
    }

    pub fn label(&self) -> String {
        match self.leverage_method {
            Some(l) => format!("{}-{}", self.method, l),
            None => self.method.to_string(),
        }
    }
}

/// Loads the inputs the configured method needs from disk.
pub fn load_training_inputs(cfg: &ExperimentConfig) -> Result<TrainingInputs> {
    let data = load_generated(cfg)?;
    let leverage = if cfg.method == Method::Ssil && cfg.eta0 > 0.0 {
        let p = cfg.leverage_path();
        if !p.exists() {
            return Err(ExperimentError::MissingInput(p));
        }
        Some(load_leverages(&p)?)
    } else {
        None
    };
    Ok(TrainingInputs {
        labeled: data.labeled,
        pool: data.pool,
        leverage,
    })
}

/// Trains every configured seed in memory and summarizes them.
pub fn train_all(cfg: &ExperimentConfig, inputs: &TrainingInputs) -> Result<(RunReport, Vec<SeedRun>)> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| train_seed(cfg, inputs, s))
        .collect::<Result<Vec<SeedRun>>>()?;
    let expert = expert_reference(cfg)?;
    Ok((RunReport::from_runs(cfg, &runs, expert), runs))
}

/// Trains all seeds and writes metrics, checkpoints and the run report.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let inputs = load_training_inputs(cfg)?;
    let (report, runs) = train_all(cfg, &inputs)?;
    let dir = cfg.run_dir();
    for run in &runs {
        let sdir = dir.join(format!("seed-{}", run.seed));
        fs::create_dir_all(&sdir)?;
        write_csv(&sdir.join("metrics.csv"), &run.rows)?;
        run.policy
            .to_checkpoint()
            .with_net("discriminator", &run.discriminator.net)
            .save(&sdir.join("checkpoint.json"))?;
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub labeled_budget: usize,
    pub seeds: usize,
    pub scaled_mean: f64,
    pub scaled_std: f64,
    pub mean_score: f64,
    pub expert_score: f64,
}

fn compare_row(r: &RunReport, budget: usize) -> CompareRow {
    CompareRow {
        method: r.label(),
        labeled_budget: budget,
        seeds: r.seeds.len(),
        scaled_mean: r.scaled_mean,
        scaled_std: r.scaled_std,
        mean_score: r.mean_score,
        expert_score: r.expert_score,
    }
}

/// One row per method and labeled budget. Mixed-input GAIL does not depend
/// on the budget split, so its rows are repeated for every budget present.
pub fn compare(reports: &[RunReport]) -> Vec<CompareRow> {
    let mut budgets: Vec<usize> = reports.iter().filter(|r| r.method != Method::Gail).map(|r| r.labeled_budget).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let mut rows = Vec::new();
    for r in reports {
        if r.method == Method::Gail && !budgets.is_empty() {
            rows.extend(budgets.iter().map(|&b| compare_row(r, b)));
        } else {
            rows.push(compare_row(r, r.labeled_budget));
        }
    }
    rows.sort_by(|a, b| a.labeled_budget.cmp(&b.labeled_budget).then(a.method.cmp(&b.method)));
    rows
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let p = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    if !p.exists() {
        return Err(ExperimentError::MissingInput(p));
    }
    Ok(serde_json::from_str(&fs::read_to_string(&p)?)?)
}

pub fn cmd_compare(report_paths: &[PathBuf], out: &Path) -> Result<Vec<CompareRow>> {
    if report_paths.is_empty() {
        return Err(ExperimentError::Config("nothing to compare".into()));
    }
    let reports = report_paths.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let rows = compare(&reports);
    write_csv(out, &rows)?;
    Ok(rows)
}
