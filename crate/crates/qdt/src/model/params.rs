//! Flat parameter store with a structural index.
//!
//! Leaves live in one `Vec` in a fixed construction order, so the optimizer,
//! checkpointing, and gradient collection all align by position. The
//! [`Layout`] maps architectural roles (layer 2's query weights, say) to
//! positions for the forward pass.

use std::sync::Arc;

use gradcore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seeds;

use super::config::{Kind, ModelConfig};

pub const INIT_STD: f64 = 0.02;

/// Drives initialization and the weight-decay policy: only `Weight` leaves
/// decay, and only they draw Gaussian initial values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense matrix or embedding table: N(0, 0.02^2) init, decayed.
    Weight,
    /// Additive bias or layer-norm shift: zero init, not decayed.
    Bias,
    /// Layer-norm scale: ones init, not decayed.
    Scale,
    /// Interference logits: zero init (uniform mix), not decayed.
    Logits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamMeta {
    pub fn decays(&self) -> bool {
        self.kind == ParamKind::Weight
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedIdx {
    pub w_r: usize,
    pub b_r: usize,
    pub w_s: usize,
    pub b_s: usize,
    pub w_a: usize,
    pub b_a: usize,
    pub timestep: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntangleIdx {
    pub w_e: usize,
    pub b_e: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnIdx {
    pub w_q: usize,
    pub b_q: usize,
    pub w_k: usize,
    pub b_k: usize,
    pub w_v: usize,
    pub b_v: usize,
    pub w_o: usize,
    pub b_o: usize,
    /// Present only in quantum-attention variants.
    pub entangle: Option<EntangleIdx>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfIdx {
    pub channels: Vec<ChannelIdx>,
    /// Present only in quantum-FF variants.
    pub theta: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LnIdx {
    pub scale: usize,
    pub shift: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerIdx {
    pub attn: AttnIdx,
    pub ln_attn: LnIdx,
    pub ff: FfIdx,
    pub ln_ff: LnIdx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub embed: EmbedIdx,
    pub layers: Vec<LayerIdx>,
    pub head: HeadIdx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    metas: Arc<Vec<ParamMeta>>,
    layout: Arc<Layout>,
    values: Vec<T>,
}

impl<T> ParameterSet<T> {
    /// Number of leaves (tensors), not scalars.
    pub fn n_leaves(&self) -> usize {
        self.values.len()
    }

    pub fn metas(&self) -> &[ParamMeta] {
        &self.metas
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn value(&self, idx: usize) -> &T {
        &self.values[idx]
    }

    /// Rebuild with transformed leaves; order and layout are preserved, so
    /// positions in the result align with positions here.
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&ParamMeta, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<ParameterSet<U>, E> {
        let values = self
            .metas
            .iter()
            .zip(&self.values)
            .map(|(m, v)| f(m, v))
            .collect::<std::result::Result<Vec<U>, E>>()?;
        Ok(ParameterSet {
            metas: Arc::clone(&self.metas),
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    /// Same metas and layout over replacement leaves, which must align with
    /// the canonical order.
    pub fn with_values<U>(&self, values: Vec<U>) -> crate::Result<ParameterSet<U>> {
        if values.len() != self.values.len() {
            return Err(crate::Error::contract(format!(
                "expected {} leaves, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(ParameterSet {
            metas: Arc::clone(&self.metas),
            layout: Arc::clone(&self.layout),
            values,
        })
    }
}

impl ParameterSet<Tensor> {
    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Put every leaf on `tape`, tracked when `requires_grad`.
    pub fn to_vars(
        &self,
        tape: &gradcore::Tape,
        requires_grad: bool,
    ) -> gradcore::Result<ParameterSet<gradcore::Var>> {
        self.try_map(|_, t| tape.leaf(t, requires_grad))
    }
}

/// softmax(theta) per layer that carries interference logits; empty for
/// variants without the multi-channel feedforward.
pub fn interference_weights(params: &ParameterSet<Tensor>) -> Vec<Vec<f64>> {
    params
        .layout()
        .layers
        .iter()
        .filter_map(|l| l.ff.theta)
        .map(|t| {
            let logits = params.value(t).data();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

/// Parameter count difference `a - b` between two variants under one config.
pub fn variant_delta(
    a: super::ModelVariant,
    b: super::ModelVariant,
    cfg: &ModelConfig,
) -> i64 {
    let count = |v| {
        let c = ModelConfig {
            variant: v,
            ..cfg.clone()
        };
        init_params(&c, 0).count() as i64
    };
    count(a) - count(b)
}

struct Builder {
    metas: Vec<ParamMeta>,
    values: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], kind: ParamKind) -> usize {
        let n: usize = shape.iter().product();
        let data = match kind {
            ParamKind::Weight => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    INIT_STD * z
                })
                .collect(),
            ParamKind::Bias | ParamKind::Logits => vec![0.0; n],
            ParamKind::Scale => vec![1.0; n],
        };
        self.metas.push(ParamMeta {
            name,
            shape: shape.to_vec(),
            kind,
        });
        self.values
            .push(Tensor::from_vec(shape, data).expect("shape/data sizes agree"));
        self.values.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> (usize, usize) {
        let w = self.push(format!("{name}.w"), &[d_in, d_out], ParamKind::Weight);
        let b = self.push(format!("{name}.b"), &[d_out], ParamKind::Bias);
        (w, b)
    }

    fn layer_norm(&mut self, name: &str, d: usize) -> LnIdx {
        LnIdx {
            scale: self.push(format!("{name}.scale"), &[d], ParamKind::Scale),
            shift: self.push(format!("{name}.shift"), &[d], ParamKind::Bias),
        }
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`. All weight matrices
/// and the timestep table draw N(0, 0.02^2); biases, shifts, and logits start
/// at zero; layer-norm scales at one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParameterSet<Tensor> {
    let d = cfg.d_model;
    let mut b = Builder {
        metas: Vec::new(),
        values: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seeds::derive(&[seed, seeds::SALT_INIT])),
    };

    let (w_r, b_r) = b.linear("embed.rtg", 1, d);
    let (w_s, b_s) = b.linear("embed.state", cfg.state_dim, d);
    let (w_a, b_a) = b.linear("embed.action", cfg.action_dim, d);
    let timestep = b.push("embed.timestep".into(), &[cfg.t_max, d], ParamKind::Weight);
    let embed = EmbedIdx {
        w_r,
        b_r,
        w_s,
        b_s,
        w_a,
        b_a,
        timestep,
    };

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |part: &str| format!("layer{l}.{part}");
        let (w_q, b_q) = b.linear(&p("attn.q"), d, d);
        let (w_k, b_k) = b.linear(&p("attn.k"), d, d);
        let (w_v, b_v) = b.linear(&p("attn.v"), d, d);
        let entangle = (cfg.variant.attention == Kind::Quantum).then(|| {
            let (w_e, b_e) = b.linear(&p("attn.entangle"), d, d);
            EntangleIdx { w_e, b_e }
        });
        let (w_o, b_o) = b.linear(&p("attn.out"), d, d);
        let attn = AttnIdx {
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
            w_o,
            b_o,
            entangle,
        };
        let ln_attn = b.layer_norm(&p("ln_attn"), d);

        let n_channels = match cfg.variant.ff {
            Kind::Standard => 1,
            Kind::Quantum => cfg.n_channels,
        };
        let channels = (0..n_channels)
            .map(|c| {
                let (w1, b1) = b.linear(&p(&format!("ff.ch{c}.in")), d, cfg.d_ff);
                let (w2, b2) = b.linear(&p(&format!("ff.ch{c}.out")), cfg.d_ff, d);
                ChannelIdx { w1, b1, w2, b2 }
            })
            .collect();
        let theta = (cfg.variant.ff == Kind::Quantum)
            .then(|| b.push(p("ff.theta"), &[cfg.n_channels], ParamKind::Logits));
        let ff = FfIdx { channels, theta };
        let ln_ff = b.layer_norm(&p("ln_ff"), d);

        layers.push(LayerIdx {
            attn,
            ln_attn,
            ff,
            ln_ff,
        });
    }

    let (w1, b1) = b.linear("head.fc1", d, d);
    let (w2, b2) = b.linear("head.fc2", d, d);
    let (w3, b3) = b.linear("head.out", d, cfg.action_dim);
    let head = HeadIdx {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
    };

    ParameterSet {
        metas: Arc::new(b.metas),
        layout: Arc::new(Layout {
            embed,
            layers,
            head,
        }),
        values: b.values,
    }
}
