//! Offline dataset collection and normalization.
//!
//! A fixed linear controller, perturbed by tier-specific exploration noise,
//! generates trajectories at three quality levels. Returns-to-go use a
//! backward discounted recursion; normalization statistics are computed over
//! the whole tier and stored beside the raw, un-normalized trajectories.

mod file;

pub use file::{load, save, FORMAT_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::env::{Env, EnvConfig, ACTION_DIM, STATE_DIM};
use crate::seeds;
use crate::{Error, Result};

pub const GAMMA: f64 = 0.99;

/// Lower bound on std components and the return scale so normalization never
/// divides by zero on degenerate data.
pub const STAT_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tier {
    Medium,
    Expert,
    Random,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Medium, Tier::Expert, Tier::Random];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Medium => "medium",
            Tier::Expert => "expert",
            Tier::Random => "random",
        }
    }

    /// Stable id mixed into per-episode seeds so tiers drawn from one master
    /// seed stay independent.
    fn id(self) -> u64 {
        match self {
            Tier::Medium => 0,
            Tier::Expert => 1,
            Tier::Random => 2,
        }
    }

    pub fn default_spec(self) -> TierSpec {
        let (n_trajectories, noise_std) = match self {
            Tier::Medium => (500, 0.3),
            Tier::Expert => (300, 0.05),
            Tier::Random => (300, 0.8),
        };
        TierSpec {
            name: self,
            n_trajectories,
            noise_std,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tier> {
        match s {
            "medium" => Ok(Tier::Medium),
            "expert" => Ok(Tier::Expert),
            "random" => Ok(Tier::Random),
            other => Err(Error::contract(format!(
                "unknown tier {other:?} (expected medium, expert, or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TierSpec {
    pub name: Tier,
    pub n_trajectories: usize,
    /// Std of the Gaussian exploration noise added to the base policy.
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Pre-transition state at each step.
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    /// Discounted return-to-go: rtg[t] = rewards[t] + gamma * rtg[t+1].
    pub rtg: Vec<f64>,
    pub timesteps: Vec<u32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Normalization constants a model needs at batch and rollout time; detached
/// from the dataset so evaluation can swap tiers' statistics independently.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub state_mean: [f64; STATE_DIM],
    pub state_std: [f64; STATE_DIM],
    pub return_scale: f64,
}

impl NormStats {
    pub fn normalize_state(&self, s: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for d in 0..STATE_DIM {
            out[d] = (s[d] - self.state_mean[d]) / self.state_std[d];
        }
        out
    }

    pub fn scale_rtg(&self, rtg: f64) -> f64 {
        rtg / self.return_scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub tier: Tier,
    pub state_mean: [f64; STATE_DIM],
    pub state_std: [f64; STATE_DIM],
    /// Max |rtg| over the whole tier, floored; scaled RTG lies in [-1, 1].
    pub return_scale: f64,
    pub gamma: f64,
    pub source_seed: u64,
}

impl OfflineDataset {
    pub fn stats(&self) -> NormStats {
        NormStats {
            state_mean: self.state_mean,
            state_std: self.state_std,
            return_scale: self.return_scale,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Reward-seeking linear base policy: push the first coordinate toward its
/// setpoint, damp every coordinate it can reach.
/// a = clamp((0.8, 0, 0) - 0.5 * s[..3], -1, 1).
pub fn behavior_policy(s: &[f64; STATE_DIM]) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        let setpoint = if i == 0 { 0.8 } else { 0.0 };
        a[i] = (setpoint - 0.5 * s[i]).clamp(-1.0, 1.0);
    }
    a
}

/// Discounted returns-to-go by backward recursion. Empty input gives empty
/// output.
pub fn compute_rtg(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::contract(format!(
            "discount {gamma} outside [0, 1]"
        )));
    }
    Ok(rtg_backward(rewards, gamma))
}

fn rtg_backward(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut rtg = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        rtg[t] = acc;
    }
    rtg
}

/// Roll out one tier of trajectories and compute its statistics. Episodes use
/// independent seed-derived RNG streams and are merged in episode order, so
/// the result does not depend on thread count.
pub fn collect(spec: &TierSpec, env_cfg: &EnvConfig, seed: u64) -> OfflineDataset {
    let trajectories: Vec<Trajectory> = (0..spec.n_trajectories as u64)
        .into_par_iter()
        .map(|ep| roll_episode(spec, env_cfg, seed, ep))
        .collect();

    let n: usize = trajectories.iter().map(Trajectory::len).sum();
    let mut state_mean = [0.0; STATE_DIM];
    let mut state_std = [STAT_FLOOR; STATE_DIM];
    let mut return_scale = STAT_FLOOR;
    if n > 0 {
        for t in &trajectories {
            for s in &t.states {
                for d in 0..STATE_DIM {
                    state_mean[d] += s[d];
                }
            }
            for &r in &t.rtg {
                return_scale = return_scale.max(r.abs());
            }
        }
        for m in state_mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = [0.0; STATE_DIM];
        for t in &trajectories {
            for s in &t.states {
                for d in 0..STATE_DIM {
                    let c = s[d] - state_mean[d];
                    var[d] += c * c;
                }
            }
        }
        for d in 0..STATE_DIM {
            state_std[d] = (var[d] / n as f64).sqrt().max(STAT_FLOOR);
        }
    }

    OfflineDataset {
        trajectories,
        tier: spec.name,
        state_mean,
        state_std,
        return_scale,
        gamma: GAMMA,
        source_seed: seed,
    }
}

fn roll_episode(spec: &TierSpec, env_cfg: &EnvConfig, seed: u64, ep: u64) -> Trajectory {
    let tier = spec.name.id();
    let mut env = Env::new(env_cfg.clone());
    let mut state = env.reset(seeds::derive(&[seed, seeds::SALT_ENV, tier, ep]));
    let mut rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(&[seed, seeds::SALT_POLICY, tier, ep]));

    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut timesteps = Vec::new();
    while !state.done {
        let mut a = behavior_policy(&state.s);
        for v in a.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + spec.noise_std * z).clamp(-1.0, 1.0);
        }
        states.push(state.s);
        actions.push(a);
        timesteps.push(state.t);
        let (next, r) = env.step(&state, a).expect("loop guards on done");
        rewards.push(r);
        state = next;
    }
    let rtg = rtg_backward(&rewards, GAMMA);
    Trajectory {
        states,
        actions,
        rewards,
        rtg,
        timesteps,
    }
}
