//! Batched forward pass on a gradient tape.
//!
//! A batch is packed as one `[B*3K, d]` token matrix so every linear layer
//! runs as a single matrix product; only the attention-score block, which
//! must not mix samples, is computed per sample and per head on row/column
//! slices. Row arithmetic: sample `b`'s tokens occupy rows `b*3K .. (b+1)*3K`
//! in step order, (return, state, action) within a step.

use gradcore::{concat_cols, concat_rows, interleave_rows, Tape, Tensor, Var};

use crate::{Error, Result};

use super::config::ModelConfig;
use super::params::{AttnIdx, FfIdx, ParameterSet};

/// Additive attention mask: 0 where a token may look (j <= i), -1e9 where it
/// may not.
pub const MASK_OFF: f64 = -1e9;

pub fn causal_mask(seq_len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[seq_len, seq_len]);
    for i in 0..seq_len {
        for j in i + 1..seq_len {
            m.data_mut()[i * seq_len + j] = MASK_OFF;
        }
    }
    m
}

/// One batch of K-step windows, flattened in (batch, step) order. States are
/// expected normalized and RTG scaled by the caller; actions stay raw.
/// Padded steps carry zero tokens, timestep 0, and `valid = false`.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub batch: usize,
    pub k: usize,
    /// `batch * k` scaled returns-to-go.
    pub rtg: Vec<f64>,
    /// `batch * k * state_dim` normalized states.
    pub states: Vec<f64>,
    /// `batch * k * action_dim` action inputs.
    pub actions: Vec<f64>,
    /// `batch * k` embedding-table indices.
    pub timesteps: Vec<usize>,
    /// `batch * k` loss mask; padded steps are false.
    pub valid: Vec<bool>,
}

impl WindowBatch {
    pub fn zeroed(batch: usize, k: usize, cfg: &ModelConfig) -> WindowBatch {
        WindowBatch {
            batch,
            k,
            rtg: vec![0.0; batch * k],
            states: vec![0.0; batch * k * cfg.state_dim],
            actions: vec![0.0; batch * k * cfg.action_dim],
            timesteps: vec![0; batch * k],
            valid: vec![true; batch * k],
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let bk = self.batch * self.k;
        if self.batch == 0 || self.k == 0 {
            return Err(Error::contract("empty window batch"));
        }
        if self.rtg.len() != bk
            || self.states.len() != bk * cfg.state_dim
            || self.actions.len() != bk * cfg.action_dim
            || self.timesteps.len() != bk
            || self.valid.len() != bk
        {
            return Err(Error::contract(format!(
                "window batch buffers disagree with batch {} x k {}",
                self.batch, self.k
            )));
        }
        Ok(())
    }
}

/// Embed a window batch into the interleaved token matrix `[B*3K, d]`. The
/// per-step timestep embedding is shared by all three of the step's tokens.
pub fn embed_window(
    tape: &Tape,
    params: &ParameterSet<Var>,
    cfg: &ModelConfig,
    w: &WindowBatch,
) -> Result<Var> {
    w.validate(cfg)?;
    let bk = w.batch * w.k;
    let rtg = tape.constant(&Tensor::from_vec(&[bk, 1], w.rtg.clone())?)?;
    let states = tape.constant(&Tensor::from_vec(&[bk, cfg.state_dim], w.states.clone())?)?;
    let actions = tape.constant(&Tensor::from_vec(&[bk, cfg.action_dim], w.actions.clone())?)?;

    let e = &params.layout().embed;
    let e_t = params.value(e.timestep).lookup(&w.timesteps)?;
    let r_tok = rtg
        .matmul(params.value(e.w_r))?
        .add_bias(params.value(e.b_r))?
        .add(&e_t)?;
    let s_tok = states
        .matmul(params.value(e.w_s))?
        .add_bias(params.value(e.b_s))?
        .add(&e_t)?;
    let a_tok = actions
        .matmul(params.value(e.w_a))?
        .add_bias(params.value(e.b_a))?
        .add(&e_t)?;
    Ok(interleave_rows(&[&r_tok, &s_tok, &a_tok])?)
}

/// Multi-head causal attention over packed rows (`batch` samples of `seq`
/// tokens each), with the entanglement mix `H + alpha_e * (H W_E + b_E)`
/// applied before the output projection when the layer carries one.
pub fn attention(
    params: &ParameterSet<Var>,
    cfg: &ModelConfig,
    a: &AttnIdx,
    x: &Var,
    mask: &Var,
    batch: usize,
    seq: usize,
) -> Result<Var> {
    let p = |i: usize| params.value(i);
    let q = x.matmul(p(a.w_q))?.add_bias(p(a.b_q))?;
    let k = x.matmul(p(a.w_k))?.add_bias(p(a.b_k))?;
    let v = x.matmul(p(a.w_v))?.add_bias(p(a.b_v))?;

    let d_h = cfg.head_dim();
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut per_sample = Vec::with_capacity(batch);
    for s in 0..batch {
        let qs = q.slice_rows(s * seq, seq)?;
        let ks = k.slice_rows(s * seq, seq)?;
        let vs = v.slice_rows(s * seq, seq)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = qs.slice_cols(h * d_h, d_h)?;
            let kh = ks.slice_cols(h * d_h, d_h)?;
            let vh = vs.slice_cols(h * d_h, d_h)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale)?.add(mask)?;
            heads.push(scores.softmax_rows()?.matmul(&vh)?);
        }
        let head_refs: Vec<&Var> = heads.iter().collect();
        per_sample.push(concat_cols(&head_refs)?);
    }
    let sample_refs: Vec<&Var> = per_sample.iter().collect();
    let h = concat_rows(&sample_refs)?;

    let mixed = match &a.entangle {
        Some(e) => {
            let ent = h
                .matmul(p(e.w_e))?
                .add_bias(p(e.b_e))?
                .scale(cfg.alpha_e)?;
            h.add(&ent)?
        }
        None => h,
    };
    Ok(mixed.matmul(p(a.w_o))?.add_bias(p(a.b_o))?)
}

/// Feedforward sublayer: one two-layer GELU channel, or several combined by
/// softmax(theta) interference weights when the layer carries logits.
pub fn feed_forward(params: &ParameterSet<Var>, ff: &FfIdx, x: &Var) -> Result<Var> {
    let p = |i: usize| params.value(i);
    let channel = |c: &super::params::ChannelIdx| -> Result<Var> {
        Ok(x.matmul(p(c.w1))?
            .add_bias(p(c.b1))?
            .gelu()?
            .matmul(p(c.w2))?
            .add_bias(p(c.b2))?)
    };
    match ff.theta {
        None => channel(&ff.channels[0]),
        Some(theta) => {
            let weights = p(theta).softmax_rows()?;
            let mut combined: Option<Var> = None;
            for (i, c) in ff.channels.iter().enumerate() {
                let w_i = weights.slice_cols(i, 1)?;
                let term = channel(c)?.mul_scalar(&w_i)?;
                combined = Some(match combined {
                    Some(acc) => acc.add(&term)?,
                    None => term,
                });
            }
            Ok(combined.expect("n_channels >= 1"))
        }
    }
}

/// Full forward pass: predicted actions `[B*K, action_dim]`, rows in
/// (batch, step) order, read off the state tokens and squashed by tanh.
pub fn forward(
    tape: &Tape,
    params: &ParameterSet<Var>,
    cfg: &ModelConfig,
    w: &WindowBatch,
) -> Result<Var> {
    let seq = 3 * w.k;
    let mask = tape.constant(&causal_mask(seq))?;
    let mut x = embed_window(tape, params, cfg, w)?;
    for layer in &params.layout().layers {
        let attn_out = attention(params, cfg, &layer.attn, &x, &mask, w.batch, seq)?;
        x = x.add(&attn_out)?.layer_norm(
            params.value(layer.ln_attn.scale),
            params.value(layer.ln_attn.shift),
            LN_EPS,
        )?;
        let ff_out = feed_forward(params, &layer.ff, &x)?;
        x = x.add(&ff_out)?.layer_norm(
            params.value(layer.ln_ff.scale),
            params.value(layer.ln_ff.shift),
            LN_EPS,
        )?;
    }

    // State tokens sit at row 3j + 1 of each sample block, which is global
    // stride 3 offset 1 across the packed batch.
    let state_rows = x.stride_rows(1, 3, w.batch * w.k)?;
    let h = &params.layout().head;
    let p = |i: usize| params.value(i);
    let out = state_rows
        .matmul(p(h.w1))?
        .add_bias(p(h.b1))?
        .gelu()?
        .matmul(p(h.w2))?
        .add_bias(p(h.b2))?
        .gelu()?
        .matmul(p(h.w3))?
        .add_bias(p(h.b3))?
        .tanh()?;
    Ok(out)
}

pub const LN_EPS: f64 = 1e-5;
