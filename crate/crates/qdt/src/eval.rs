//! Return-conditioned evaluation: autoregressive rollouts against the
//! environment, multi-target aggregation, the four-variant ablation matrix,
//! and the two-reading generalization protocol.

use gradcore::{Tape, Tensor};
use rayon::prelude::*;

use crate::data::{NormStats, OfflineDataset, Tier};
use crate::env::{Env, EnvConfig, ACTION_DIM, STATE_DIM};
use crate::model::{forward, ModelConfig, ModelVariant, ParameterSet, WindowBatch};
use crate::seeds;
use crate::train::{train, TrainConfig, TrainHistory};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub targets: Vec<f64>,
    pub episodes_per_target: usize,
    pub max_steps: u32,
    /// Window the policy is expected to keep; must match the model's.
    pub context_len: usize,
    pub eval_seed: u64,
    pub noise_enabled: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            targets: vec![30.0, 50.0, 70.0, 90.0],
            episodes_per_target: 20,
            max_steps: 1000,
            context_len: 20,
            eval_seed: 1000,
            noise_enabled: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::contract("evaluation needs at least one target"));
        }
        if self.episodes_per_target == 0 {
            return Err(Error::contract("episodes_per_target must be positive"));
        }
        Ok(())
    }

    fn env_config(&self, base: &EnvConfig) -> EnvConfig {
        EnvConfig {
            max_steps: self.max_steps,
            noise_enabled: self.noise_enabled,
            ..base.clone()
        }
    }
}

/// Raw per-step buffers of one running episode. When [`Policy::act`] is
/// called the newest state, rtg, and timestep are already pushed and the
/// newest action is not, so `actions` runs one short.
#[derive(Clone, Debug, Default)]
pub struct History {
    pub rtg: Vec<f64>,
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    pub timesteps: Vec<u32>,
}

/// An action source driven by the rollout loop. Implementations must be
/// deterministic functions of the history so episodes can run in parallel.
pub trait Policy: Sync {
    fn act(&self, h: &History) -> Result<[f64; ACTION_DIM]>;
}

/// Batched teacher-forced scoring, used by the offline generalization
/// reading.
pub trait WindowScorer: Sync {
    /// Predicted actions `[B*K, action_dim]` for a window batch.
    fn predict_window(&self, w: &WindowBatch) -> Result<Tensor>;
}

/// The trained model plus the normalization statistics it should see.
/// Swapping `stats` is the lever behind the generalization protocol.
pub struct ModelPolicy<'a> {
    pub params: &'a ParameterSet<Tensor>,
    pub cfg: &'a ModelConfig,
    pub stats: &'a NormStats,
}

impl ModelPolicy<'_> {
    fn window_from_history(&self, h: &History) -> Result<WindowBatch> {
        let k = self.cfg.context_len;
        if h.states.is_empty() || h.states.len() != h.actions.len() + 1 {
            return Err(Error::contract("history buffers out of phase"));
        }
        let len = k.min(h.states.len());
        let start = h.states.len() - len;
        let pad = k - len;
        let mut w = WindowBatch::zeroed(1, k, self.cfg);
        for (i, t) in (start..h.states.len()).enumerate() {
            let row = pad + i;
            w.rtg[row] = self.stats.scale_rtg(h.rtg[t]);
            let s = self.stats.normalize_state(&h.states[t]);
            w.states[row * STATE_DIM..(row + 1) * STATE_DIM].copy_from_slice(&s);
            // the newest step has no action yet; its slot stays zero
            if t < h.actions.len() {
                w.actions[row * ACTION_DIM..(row + 1) * ACTION_DIM]
                    .copy_from_slice(&h.actions[t]);
            }
            w.timesteps[row] = h.timesteps[t] as usize;
        }
        Ok(w)
    }
}

impl Policy for ModelPolicy<'_> {
    fn act(&self, h: &History) -> Result<[f64; ACTION_DIM]> {
        let w = self.window_from_history(h)?;
        let preds = self.predict_window(&w)?;
        let last = (self.cfg.context_len - 1) * ACTION_DIM;
        let d = preds.data();
        Ok([d[last], d[last + 1], d[last + 2]])
    }
}

impl WindowScorer for ModelPolicy<'_> {
    fn predict_window(&self, w: &WindowBatch) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.params.to_vars(&tape, false)?;
        Ok(forward(&tape, &vars, self.cfg, w)?.value())
    }
}

/// Fixed-action stub; the oracle policies in the protocol tests.
pub struct ConstantPolicy(pub [f64; ACTION_DIM]);

impl Policy for ConstantPolicy {
    fn act(&self, _h: &History) -> Result<[f64; ACTION_DIM]> {
        Ok(self.0)
    }
}

impl WindowScorer for ConstantPolicy {
    fn predict_window(&self, w: &WindowBatch) -> Result<Tensor> {
        let bk = w.batch * w.k;
        let data: Vec<f64> = self.0.iter().cycle().take(bk * ACTION_DIM).copied().collect();
        Ok(Tensor::from_vec(&[bk, ACTION_DIM], data)?)
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub total_return: f64,
    pub steps: u32,
}

/// One return-conditioned episode. The RTG buffer keeps raw values and drops
/// by each raw reward, so at any step it equals `target - cumulative reward`
/// exactly; scaling happens only inside the policy's window builder.
pub fn rollout(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    target: f64,
    episode_seed: u64,
) -> Result<EpisodeOutcome> {
    let mut env = Env::new(env_cfg.clone());
    let mut state = env.reset(episode_seed);
    let mut h = History::default();
    h.rtg.push(target);
    h.states.push(state.s);
    h.timesteps.push(state.t);

    let mut total = 0.0;
    let mut steps = 0;
    loop {
        let a = policy.act(&h)?;
        let (next, reward) = env.step(&state, a)?;
        h.actions.push(a);
        h.rewards.push(reward);
        total += reward;
        steps += 1;
        if next.done {
            break;
        }
        h.rtg.push(target - total);
        h.states.push(next.s);
        h.timesteps.push(next.t);
        state = next;
    }
    Ok(EpisodeOutcome {
        total_return: total,
        steps,
    })
}

pub fn episode_seed(eval_seed: u64, target: f64, episode: usize) -> u64 {
    seeds::derive(&[eval_seed, seeds::SALT_EVAL, target.to_bits(), episode as u64])
}

#[derive(Clone, Debug)]
pub struct TargetBlock {
    pub target: f64,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub targets: Vec<TargetBlock>,
    pub grand_mean: f64,
    pub grand_std: f64,
    pub param_count: usize,
    /// Training loss at the last optimization step; NaN for stub policies.
    pub final_train_loss: f64,
    /// Percent gain of `grand_mean` over a baseline's; filled by the
    /// ablation matrix.
    pub improvement_pct: Option<f64>,
}

impl EvalReport {
    pub fn return_per_million_params(&self) -> f64 {
        if self.param_count == 0 {
            f64::NAN
        } else {
            self.grand_mean / (self.param_count as f64 / 1e6)
        }
    }

    pub fn all_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.targets.iter().flat_map(|b| b.returns.iter().copied())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the full target grid. Episodes are independent and seed-addressed, so
/// they run in parallel with order-fixed aggregation.
pub fn evaluate(
    policy: &dyn Policy,
    base_env: &EnvConfig,
    ec: &EvalConfig,
    param_count: usize,
    final_train_loss: f64,
) -> Result<EvalReport> {
    ec.validate()?;
    let env_cfg = ec.env_config(base_env);
    let jobs: Vec<(f64, usize)> = ec
        .targets
        .iter()
        .flat_map(|&t| (0..ec.episodes_per_target).map(move |e| (t, e)))
        .collect();
    let outcomes: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(target, ep)| {
            let seed = episode_seed(ec.eval_seed, target, ep);
            Ok(rollout(policy, &env_cfg, target, seed)?.total_return)
        })
        .collect();

    let mut targets = Vec::with_capacity(ec.targets.len());
    let mut all = Vec::with_capacity(jobs.len());
    let mut it = outcomes.into_iter();
    for &target in &ec.targets {
        let returns: Vec<f64> = (0..ec.episodes_per_target)
            .map(|_| it.next().expect("job list covers the grid"))
            .collect::<Result<_>>()?;
        all.extend_from_slice(&returns);
        let (mean, std) = mean_std(&returns);
        targets.push(TargetBlock {
            target,
            returns,
            mean,
            std,
        });
    }
    let (grand_mean, grand_std) = mean_std(&all);
    Ok(EvalReport {
        targets,
        grand_mean,
        grand_std,
        param_count,
        final_train_loss,
        improvement_pct: None,
    })
}

/// Teacher-forced action-prediction MSE over a whole dataset: trajectories
/// are chopped into consecutive K-step windows (the tail window right-aligned
/// and left-padded), every step scored exactly once, and the squared error
/// averaged over all steps.
pub fn offline_mse(
    scorer: &dyn WindowScorer,
    cfg: &ModelConfig,
    stats: &NormStats,
    ds: &OfflineDataset,
) -> Result<f64> {
    let k = cfg.context_len;
    // (trajectory, window end exclusive, rows valid) in fixed order
    let mut jobs: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, traj) in ds.trajectories.iter().enumerate() {
        let mut covered = 0;
        while covered < traj.len() {
            let fresh = k.min(traj.len() - covered);
            jobs.push((ti, covered + fresh, fresh));
            covered += fresh;
        }
    }

    let chunks: Vec<&[(usize, usize, usize)]> = jobs.chunks(32).collect();
    let partials: Vec<Result<(f64, usize)>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = chunk.len();
            let mut w = WindowBatch::zeroed(batch, k, cfg);
            w.valid.fill(false);
            for (b, &(ti, end, fresh)) in chunk.iter().enumerate() {
                let traj = &ds.trajectories[ti];
                let start = end - k.min(end);
                for (i, t) in (start..end).enumerate() {
                    let row = b * k + (k - (end - start)) + i;
                    w.rtg[row] = stats.scale_rtg(traj.rtg[t]);
                    let s = stats.normalize_state(&traj.states[t]);
                    w.states[row * STATE_DIM..(row + 1) * STATE_DIM].copy_from_slice(&s);
                    w.actions[row * ACTION_DIM..(row + 1) * ACTION_DIM]
                        .copy_from_slice(&traj.actions[t]);
                    w.timesteps[row] = traj.timesteps[t] as usize;
                    // only steps this window covers for the first time count
                    w.valid[row] = t >= end - fresh;
                }
            }
            let preds = scorer.predict_window(&w)?;
            let p = preds.data();
            let mut total = 0.0;
            let mut rows = 0usize;
            for (row, &ok) in w.valid.iter().enumerate() {
                if !ok {
                    continue;
                }
                rows += 1;
                for c in 0..ACTION_DIM {
                    let d = p[row * ACTION_DIM + c] - w.actions[row * ACTION_DIM + c];
                    total += d * d;
                }
            }
            Ok((total, rows))
        })
        .collect();

    let mut total = 0.0;
    let mut rows = 0usize;
    for r in partials {
        let (t, n) = r?;
        total += t;
        rows += n;
    }
    if rows == 0 {
        return Err(Error::contract("offline scoring found no steps"));
    }
    Ok(total / rows as f64)
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: ModelVariant,
    pub params: ParameterSet<Tensor>,
    pub history: TrainHistory,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct SynergySummary {
    pub baseline_mean: f64,
    pub delta_attention: f64,
    pub delta_ff: f64,
    pub delta_combined: f64,
    /// combined gain minus the sum of the individual gains
    pub synergy: f64,
}

#[derive(Debug)]
pub struct AblationOutcome {
    /// Runs in [`ModelVariant::ALL`] order: standard, q-attn, q-ff, quantum.
    pub runs: Vec<VariantRun>,
    pub synergy: SynergySummary,
}

/// Train all four variants with identical seeds and configuration on one
/// dataset, evaluate them under identical episode seeds, and summarize the
/// component interaction.
pub fn ablation_matrix(
    ds: &OfflineDataset,
    base_cfg: &ModelConfig,
    tc: &TrainConfig,
    ec: &EvalConfig,
    base_env: &EnvConfig,
    mut on_epoch: impl FnMut(ModelVariant, &crate::train::EpochStats),
) -> Result<AblationOutcome> {
    let mut runs = Vec::with_capacity(ModelVariant::ALL.len());
    for variant in ModelVariant::ALL {
        let cfg = ModelConfig {
            variant,
            ..base_cfg.clone()
        };
        let (params, history) = train(ds, &cfg, tc, |s| on_epoch(variant, s))?;
        let stats = ds.stats();
        let policy = ModelPolicy {
            params: &params,
            cfg: &cfg,
            stats: &stats,
        };
        let report = evaluate(
            &policy,
            base_env,
            ec,
            params.count(),
            history.final_loss(),
        )?;
        runs.push(VariantRun {
            variant,
            params,
            history,
            report,
        });
    }

    let means: Vec<f64> = runs.iter().map(|r| r.report.grand_mean).collect();
    let baseline = means[0];
    for run in &mut runs {
        run.report.improvement_pct = Some(improvement_pct(run.report.grand_mean, baseline));
    }
    let (d_attn, d_ff, d_comb) = (
        means[1] - baseline,
        means[2] - baseline,
        means[3] - baseline,
    );
    let synergy = SynergySummary {
        baseline_mean: baseline,
        delta_attention: d_attn,
        delta_ff: d_ff,
        delta_combined: d_comb,
        synergy: d_comb - d_attn - d_ff,
    };
    Ok(AblationOutcome { runs, synergy })
}

pub fn improvement_pct(mean: f64, baseline: f64) -> f64 {
    (mean - baseline) / baseline.abs() * 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenReading {
    /// Teacher-forced MSE on the tier's trajectories under the training
    /// tier's statistics.
    OfflineMse,
    /// Environment rollouts with the tier's own statistics swapped in.
    Rollout,
}

#[derive(Clone, Debug)]
pub struct GenMeasurement {
    pub tier: Tier,
    pub reading: GenReading,
    pub value: f64,
    /// Episode spread for rollout readings; 0 for offline MSE.
    pub std: f64,
}

/// Evaluate a model trained on one tier against other tiers, without
/// retraining: one offline and one rollout reading per tier.
pub fn generalization_test(
    params: &ParameterSet<Tensor>,
    cfg: &ModelConfig,
    train_stats: &NormStats,
    tiers: &[&OfflineDataset],
    ec: &EvalConfig,
    base_env: &EnvConfig,
) -> Result<Vec<GenMeasurement>> {
    let mut out = Vec::with_capacity(tiers.len() * 2);
    for ds in tiers {
        let offline_policy = ModelPolicy {
            params,
            cfg,
            stats: train_stats,
        };
        let mse = offline_mse(&offline_policy, cfg, train_stats, ds)?;
        out.push(GenMeasurement {
            tier: ds.tier,
            reading: GenReading::OfflineMse,
            value: mse,
            std: 0.0,
        });

        let swapped = ds.stats();
        let rollout_policy = ModelPolicy {
            params,
            cfg,
            stats: &swapped,
        };
        let report = evaluate(&rollout_policy, base_env, ec, params.count(), f64::NAN)?;
        out.push(GenMeasurement {
            tier: ds.tier,
            reading: GenReading::Rollout,
            value: report.grand_mean,
            std: report.grand_std,
        });
    }
    Ok(out)
}
