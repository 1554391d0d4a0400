//! Kernel rewards over banks of demonstration states: the binary constraint
//! reward (expert vs negative bank), the leverage-weighted constraint reward,
//! and the combined per-step policy reward.

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("kernel sharpness must be finite and > 0, got {0}")]
    Alpha(f64),
    #[error("bank is empty")]
    EmptyBank,
    #[error("state dimension mismatch: bank holds {expected}-dim states, query has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("leverage {0} outside [0, 1]")]
    Leverage(f64),
    #[error("bank states and leverages differ in length ({states} vs {leverages})")]
    Length { states: usize, leverages: usize },
}

pub type Result<T> = std::result::Result<T, RewardError>;

/// Lower clamp applied to discriminator outputs before taking logs.
pub const DISC_CLAMP: f64 = 1e-6;

fn check_alpha(alpha: f64) -> Result<()> {
    // (1 + d/alpha) is negative for alpha < 0 and d > -alpha, and the
    // kernel is not decreasing there; only alpha > 0 is usable.
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(RewardError::Alpha(alpha))
    }
}

/// Student-t style kernel `(1 + d/alpha)^(-(alpha+1)/2)`.
#[inline]
pub fn kernel(distance: f64, alpha: f64) -> f64 {
    let base = 1.0 + distance / alpha;
    if alpha == 1.0 {
        1.0 / base
    } else {
        base.powf(-(alpha + 1.0) / 2.0)
    }
}

fn flat_states(states: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let dim = states.first().ok_or(RewardError::EmptyBank)?.len();
    let mut flat = Vec::with_capacity(dim * states.len());
    for s in states {
        if s.len() != dim {
            return Err(RewardError::Dimension { expected: dim, got: s.len() });
        }
        flat.extend_from_slice(s);
    }
    Ok((dim, flat))
}

/// Expert and negative state banks for the binary constraint reward.
#[derive(Clone, Debug)]
pub struct BinaryBank {
    dim: usize,
    expert: Vec<f64>,
    negative: Vec<f64>,
    alpha: f64,
}

impl BinaryBank {
    pub fn new(expert: &[Vec<f64>], negative: &[Vec<f64>], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let (dim, expert) = flat_states(expert)?;
        let (ndim, negative) = flat_states(negative)?;
        if ndim != dim {
            return Err(RewardError::Dimension { expected: dim, got: ndim });
        }
        Ok(BinaryBank { dim, expert, negative, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same bank with the expert and negative roles exchanged.
    pub fn swapped(&self) -> BinaryBank {
        BinaryBank {
            dim: self.dim,
            expert: self.negative.clone(),
            negative: self.expert.clone(),
            alpha: self.alpha,
        }
    }
}

/// Root-mean of squared Euclidean distances from `s` to the bank.
fn rms_distance(s: &[f64], bank: &[f64], dim: usize) -> f64 {
    let n = bank.len() / dim;
    let total: f64 = bank
        .chunks_exact(dim)
        .map(|b| b.iter().zip(s).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    (total / n as f64).sqrt()
}

/// Binary constraint reward in (0, 1): how much closer `s` sits to the expert
/// bank than to the negative bank.
pub fn cor(s: &[f64], bank: &BinaryBank) -> Result<f64> {
    if s.len() != bank.dim {
        return Err(RewardError::Dimension { expected: bank.dim, got: s.len() });
    }
    let ke = kernel(rms_distance(s, &bank.expert, bank.dim), bank.alpha);
    let kn = kernel(rms_distance(s, &bank.negative, bank.dim), bank.alpha);
    Ok(ke / (ke + kn))
}

/// States paired with leverage values in [0, 1].
#[derive(Clone, Debug)]
pub struct LeverageBank {
    dim: usize,
    states: Vec<f64>,
    leverages: Vec<f64>,
    alpha: f64,
}

impl LeverageBank {
    pub fn new(states: &[Vec<f64>], leverages: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if states.len() != leverages.len() {
            return Err(RewardError::Length {
                states: states.len(),
                leverages: leverages.len(),
            });
        }
        if let Some(&bad) = leverages.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(RewardError::Leverage(bad));
        }
        let (dim, flat) = flat_states(states)?;
        Ok(LeverageBank {
            dim,
            states: flat,
            leverages: leverages.to_vec(),
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.leverages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leverages.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn leverages(&self) -> &[f64] {
        &self.leverages
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    /// Uniform subsample without replacement, keeping original order.
    /// Returns a clone when `cap >= len`.
    pub fn subsample<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> LeverageBank {
        if cap >= self.len() || cap == 0 {
            return self.clone();
        }
        let mut idx = sample(rng, self.len(), cap).into_vec();
        idx.sort_unstable();
        let mut states = Vec::with_capacity(cap * self.dim);
        let mut leverages = Vec::with_capacity(cap);
        for j in idx {
            states.extend_from_slice(self.state(j));
            leverages.push(self.leverages[j]);
        }
        LeverageBank {
            dim: self.dim,
            states,
            leverages,
            alpha: self.alpha,
        }
    }
}

/// Leverage constraint reward: kernel-weighted average of bank leverages
/// around `s`, with L1 distances.
pub fn lcor(s: &[f64], bank: &LeverageBank) -> Result<f64> {
    if bank.is_empty() {
        return Err(RewardError::EmptyBank);
    }
    if s.len() != bank.dim {
        return Err(RewardError::Dimension { expected: bank.dim, got: s.len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (row, l) in bank.states.chunks_exact(bank.dim).zip(&bank.leverages) {
        let d: f64 = row.iter().zip(s).map(|(x, y)| (x - y).abs()).sum();
        let k = kernel(d, bank.alpha);
        num += l * k;
        den += k;
    }
    Ok(num / den)
}

/// `-log(D) + eta * lcor` with `D` clamped into `[DISC_CLAMP, 1 - DISC_CLAMP]`.
pub fn policy_reward(disc_output: f64, lcor_value: f64, eta: f64) -> f64 {
    disc_reward(disc_output) + eta * lcor_value
}

/// The adversarial part of the reward, `-log(D)` after clamping.
#[inline]
pub fn disc_reward(disc_output: f64) -> f64 {
    -disc_output.clamp(DISC_CLAMP, 1.0 - DISC_CLAMP).ln()
}
