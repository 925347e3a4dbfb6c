//! Linear-Gaussian control task.
//!
//! State contracts toward the origin and actions push the first three
//! coordinates; reward pays for a large first coordinate and charges for
//! action effort and state magnitude. The dynamics are deliberately simple
//! enough to verify against a closed-form recursion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub const STATE_DIM: usize = 11;
pub const ACTION_DIM: usize = 3;

const STATE_DECAY: f64 = 0.9;
const ACTION_GAIN: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct EnvConfig {
    /// Process-noise standard deviation; the initial state uses the same scale.
    pub noise_std: f64,
    /// Master switch for all stochasticity (reset draw and process noise).
    pub noise_enabled: bool,
    pub max_steps: u32,
    /// Episode ends when the state 2-norm exceeds this.
    pub state_norm_limit: f64,
    pub reward_clip: (f64, f64),
    /// Maps actions into state space: identity into the first three state
    /// dims, zero elsewhere. Row-major `[STATE_DIM][ACTION_DIM]`.
    pub action_coupling: [[f64; ACTION_DIM]; STATE_DIM],
}

impl Default for EnvConfig {
    fn default() -> Self {
        let mut coupling = [[0.0; ACTION_DIM]; STATE_DIM];
        for (i, row) in coupling.iter_mut().enumerate().take(ACTION_DIM) {
            row[i] = 1.0;
        }
        EnvConfig {
            noise_std: 0.05,
            noise_enabled: true,
            max_steps: 1000,
            state_norm_limit: 100.0,
            reward_clip: (-10.0, 10.0),
            action_coupling: coupling,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub s: [f64; STATE_DIM],
    pub t: u32,
    pub done: bool,
}

/// Reward of taking `action` in pre-transition state `s`, before clipping:
/// `2*s[0] - 0.01*||a||^2 - 0.1*||s||^2`.
pub fn raw_reward(s: &[f64; STATE_DIM], action: &[f64; ACTION_DIM]) -> f64 {
    let a2: f64 = action.iter().map(|a| a * a).sum();
    let s2: f64 = s.iter().map(|v| v * v).sum();
    2.0 * s[0] - 0.01 * a2 - 0.1 * s2
}

pub struct Env {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    clamp_warnings: u64,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Env {
        Env {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(0),
            clamp_warnings: 0,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Count of steps that had to clamp an out-of-range action component.
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings
    }

    /// Reseed the episode stream and draw the initial state
    /// (`N(0, noise_std^2 I)`, or the origin with noise disabled).
    pub fn reset(&mut self, seed: u64) -> EnvState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = [0.0; STATE_DIM];
        if self.cfg.noise_enabled {
            for v in s.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v = self.cfg.noise_std * z;
            }
        }
        EnvState {
            s,
            t: 0,
            done: false,
        }
    }

    /// One transition. Reward is computed from the pre-transition state, then
    /// the state contracts, takes the coupled action, and picks up Gaussian
    /// process noise.
    pub fn step(&mut self, state: &EnvState, action: [f64; ACTION_DIM]) -> Result<(EnvState, f64)> {
        if state.done {
            return Err(Error::contract("step on a finished episode"));
        }
        let mut a = action;
        let mut clamped = false;
        for v in a.iter_mut() {
            if !v.is_finite() {
                return Err(Error::contract("non-finite action component"));
            }
            if *v < -1.0 || *v > 1.0 {
                *v = v.clamp(-1.0, 1.0);
                clamped = true;
            }
        }
        if clamped {
            self.clamp_warnings += 1;
        }

        let reward = raw_reward(&state.s, &a)
            .clamp(self.cfg.reward_clip.0, self.cfg.reward_clip.1);

        let mut next = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let coupled: f64 = (0..ACTION_DIM)
                .map(|j| self.cfg.action_coupling[i][j] * a[j])
                .sum();
            next[i] = STATE_DECAY * state.s[i] + ACTION_GAIN * coupled;
        }
        if self.cfg.noise_enabled {
            for v in next.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += self.cfg.noise_std * z;
            }
        }

        let t = state.t + 1;
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        let done = t >= self.cfg.max_steps || norm > self.cfg.state_norm_limit;
        Ok((EnvState { s: next, t, done }, reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> EnvConfig {
        EnvConfig {
            noise_enabled: false,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reward_pays_first_coordinate_and_charges_norms() {
        let mut s = [0.0; STATE_DIM];
        s[0] = 1.0;
        // 2*1 - 0 - 0.1*1 = 1.9, inside the clip range
        assert_eq!(raw_reward(&s, &[0.0; 3]), 1.9);
    }

    #[test]
    fn reward_clips_at_minus_ten() {
        let mut env = Env::new(quiet_cfg());
        let mut state = env.reset(0);
        state.s[0] = -10.0;
        // raw 2*(-10) - 0.1*100 = -30 clips to -10
        let (_, r) = env.step(&state, [0.0; 3]).unwrap();
        assert_eq!(r, -10.0);
    }

    #[test]
    fn noise_free_reset_is_origin_and_deterministic() {
        let mut env = Env::new(quiet_cfg());
        let s = env.reset(123);
        assert_eq!(s.s, [0.0; STATE_DIM]);
        assert_eq!(s.t, 0);
        assert!(!s.done);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut env = Env::new(EnvConfig::default());
            let mut state = env.reset(7);
            let mut trace = Vec::new();
            for _ in 0..50 {
                let (next, r) = env.step(&state, [0.3, -0.2, 0.1]).unwrap();
                trace.push((next.s, r));
                state = next;
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn out_of_range_actions_clamp_and_count() {
        let mut env = Env::new(quiet_cfg());
        let state = env.reset(0);
        let (next, _) = env.step(&state, [5.0, 0.0, 0.0]).unwrap();
        assert_eq!(env.clamp_warnings(), 1);
        // clamped to 1.0: s[0] = 0.9*0 + 0.3*1
        assert!((next.s[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn episode_terminates_at_step_limit() {
        let cfg = EnvConfig {
            max_steps: 3,
            ..quiet_cfg()
        };
        let mut env = Env::new(cfg);
        let mut state = env.reset(0);
        for _ in 0..3 {
            assert!(!state.done);
            let (next, _) = env.step(&state, [0.0; 3]).unwrap();
            state = next;
        }
        assert!(state.done && state.t == 3);
        assert!(env.step(&state, [0.0; 3]).is_err());
    }

    #[test]
    fn episode_terminates_on_state_norm_escape() {
        let cfg = EnvConfig {
            state_norm_limit: 0.2,
            ..quiet_cfg()
        };
        let mut env = Env::new(cfg);
        let state = env.reset(0);
        let (next, _) = env.step(&state, [1.0, 0.0, 0.0]).unwrap();
        assert!(next.done, "norm 0.3 exceeds the 0.2 limit");
    }

    #[test]
    fn reset_noise_has_configured_scale() {
        // Sample mean of each component over many resets stays within
        // 3 * sigma / sqrt(n) of zero.
        let mut env = Env::new(EnvConfig::default());
        let n = 10_000;
        let mut mean = [0.0; STATE_DIM];
        for seed in 0..n {
            let s = env.reset(seed);
            for (m, v) in mean.iter_mut().zip(&s.s) {
                *m += v / n as f64;
            }
        }
        let bound = 3.0 * 0.05 / (n as f64).sqrt();
        for m in mean {
            assert!(m.abs() < bound, "component mean {m} vs bound {bound}");
        }
    }
}
