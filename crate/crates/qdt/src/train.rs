//! Offline behavior-cloning trainer: windowed batch sampling, masked MSE on
//! predicted actions, global-norm gradient clipping, and AdamW with decay
//! restricted to weight matrices.

use std::time::Instant;

use gradcore::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::OfflineDataset;
use crate::model::{forward, init_params, ModelConfig, ParamMeta, ParameterSet, WindowBatch};
use crate::seeds;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 20,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.weight_decay < 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::contract("weight decay or clip out of range"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("adam betas must sit in [0, 1)"));
        }
        Ok(())
    }
}

/// One pass over the dataset measured in sampled tokens: each step consumes
/// `batch * context_len` step-slots.
pub fn steps_per_epoch(ds: &OfflineDataset, cfg: &ModelConfig, batch_size: usize) -> usize {
    let per_step = batch_size * cfg.context_len;
    ds.total_steps().div_ceil(per_step).max(1)
}

/// Draw a batch of K-step windows ending at uniform positions of uniform
/// trajectories. Windows shorter than K (early in an episode) are left-padded
/// with invalid zero tokens so the newest step always sits in the last slot.
/// States are normalized and RTG scaled with the dataset's own statistics.
pub fn sample_batch(
    ds: &OfflineDataset,
    cfg: &ModelConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WindowBatch> {
    if ds.trajectories.is_empty() {
        return Err(Error::contract("cannot sample from an empty dataset"));
    }
    let k = cfg.context_len;
    let stats = ds.stats();
    let mut w = WindowBatch::zeroed(batch_size, k, cfg);
    w.valid.fill(false);
    for b in 0..batch_size {
        let traj = &ds.trajectories[rng.gen_range(0..ds.trajectories.len())];
        let end = rng.gen_range(0..traj.len());
        let len = k.min(end + 1);
        let start = end + 1 - len;
        let pad = k - len;
        for (i, t) in (start..=end).enumerate() {
            let row = b * k + pad + i;
            w.rtg[row] = stats.scale_rtg(traj.rtg[t]);
            let s = stats.normalize_state(&traj.states[t]);
            w.states[row * cfg.state_dim..(row + 1) * cfg.state_dim].copy_from_slice(&s);
            w.actions[row * cfg.action_dim..(row + 1) * cfg.action_dim]
                .copy_from_slice(&traj.actions[t]);
            w.timesteps[row] = traj.timesteps[t] as usize;
            w.valid[row] = true;
        }
    }
    Ok(w)
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// AdamW with bias correction. Decay is decoupled and applies only to leaves
/// whose kind decays (weight matrices and the timestep table); biases,
/// layer-norm parameters, and interference logits are never decayed.
pub struct AdamW {
    cfg: TrainConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: TrainConfig, shapes: &[ParamMeta]) -> AdamW {
        let zeros: Vec<Tensor> = shapes.iter().map(|m| Tensor::zeros(&m.shape)).collect();
        AdamW {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, values: &mut [Tensor], grads: &[Tensor], metas: &[ParamMeta]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..values.len() {
            let wd = if metas[i].decays() {
                c.weight_decay
            } else {
                0.0
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = values[i].data_mut();
            let g = grads[i].data();
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.adam_eps) + wd * p[j]);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub final_loss: f64,
    pub mean_grad_norm: f64,
    pub max_grad_norm: f64,
    /// Fraction of the epoch's steps whose gradient hit the clip.
    pub clipped_fraction: f64,
    /// Wall time of the epoch. Lives outside the deterministic reports.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Loss at every optimization step, in order.
    pub step_losses: Vec<f64>,
    /// softmax(theta) per quantum-feedforward layer after training.
    pub interference_weights: Vec<Vec<f64>>,
    pub total_steps: usize,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.step_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Full training run; returns the trained parameters and the loss record.
/// `on_epoch` fires after each epoch for progress reporting.
pub fn train(
    ds: &OfflineDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ParameterSet<Tensor>, TrainHistory)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let mut params = init_params(model_cfg, train_cfg.seed);
    let metas = params.metas().to_vec();
    let spe = steps_per_epoch(ds, model_cfg, train_cfg.batch_size);
    let mut opt = AdamW::new(train_cfg.clone(), &metas);

    let mut history = TrainHistory {
        epochs: Vec::with_capacity(train_cfg.epochs),
        step_losses: Vec::with_capacity(train_cfg.epochs * spe),
        interference_weights: Vec::new(),
        total_steps: train_cfg.epochs * spe,
    };

    for epoch in 0..train_cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut last_loss = f64::NAN;
        let mut norm_sum = 0.0;
        let mut norm_max = 0.0f64;
        let mut clipped = 0usize;

        for s in 0..spe {
            let step = epoch * spe + s;
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(&[
                train_cfg.seed,
                seeds::SALT_BATCH,
                step as u64,
            ]));
            let w = sample_batch(ds, model_cfg, train_cfg.batch_size, &mut rng)?;
            let n_valid = w.valid.iter().filter(|&&v| v).count();
            if n_valid == 0 {
                return Err(Error::contract("sampled batch has no valid steps"));
            }

            // the tape refuses non-finite leaves, so a poisoned batch or
            // diverged parameters surface here as a numeric abort
            let built = (|| -> Result<(f64, Vec<Tensor>)> {
                let tape = Tape::new();
                let vars = params.to_vars(&tape, true)?;
                let preds = forward(&tape, &vars, model_cfg, &w)?;
                let bk = w.batch * w.k;
                let target = tape.constant(&Tensor::from_vec(
                    &[bk, model_cfg.action_dim],
                    w.actions.clone(),
                )?)?;
                let loss = preds.row_mse(&target, &w.valid, n_valid as f64)?;
                let loss_val = loss.scalar_value()?;
                if !loss_val.is_finite() {
                    return Err(numeric_abort(step, loss_val, &params));
                }
                tape.backward(&loss)?;
                let grads = vars
                    .values()
                    .iter()
                    .zip(&metas)
                    .map(|(v, m)| v.grad().unwrap_or_else(|| Tensor::zeros(&m.shape)))
                    .collect();
                Ok((loss_val, grads))
            })();
            let (loss_val, mut grads) = match built {
                Ok(v) => v,
                Err(Error::Grad(gradcore::GradError::NonFinite { .. })) => {
                    return Err(numeric_abort(step, f64::NAN, &params))
                }
                Err(e) => return Err(e),
            };
            let norm = clip_gradients(&mut grads, train_cfg.grad_clip);
            if !norm.is_finite() {
                return Err(numeric_abort(step, norm, &params));
            }
            opt.step(params.values_mut(), &grads, &metas);

            history.step_losses.push(loss_val);
            loss_sum += loss_val;
            last_loss = loss_val;
            norm_sum += norm;
            norm_max = norm_max.max(norm);
            if norm > train_cfg.grad_clip {
                clipped += 1;
            }
        }

        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / spe as f64,
            final_loss: last_loss,
            mean_grad_norm: norm_sum / spe as f64,
            max_grad_norm: norm_max,
            clipped_fraction: clipped as f64 / spe as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }

    history.interference_weights = crate::model::interference_weights(&params);
    Ok((params, history))
}

fn numeric_abort(step: usize, value: f64, params: &ParameterSet<Tensor>) -> Error {
    let norm: f64 = params
        .values()
        .iter()
        .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    Error::NumericAbort {
        step,
        detail: format!("non-finite value {value}; parameter norm {norm:.6e}"),
    }
}
