use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Standard,
    Quantum,
}

/// Which of the two quantum-inspired switches a model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelVariant {
    pub attention: Kind,
    pub ff: Kind,
}

impl ModelVariant {
    pub const fn standard() -> Self {
        ModelVariant {
            attention: Kind::Standard,
            ff: Kind::Standard,
        }
    }

    pub const fn quantum() -> Self {
        ModelVariant {
            attention: Kind::Quantum,
            ff: Kind::Quantum,
        }
    }

    pub const fn q_attention() -> Self {
        ModelVariant {
            attention: Kind::Quantum,
            ff: Kind::Standard,
        }
    }

    pub const fn q_ff() -> Self {
        ModelVariant {
            attention: Kind::Standard,
            ff: Kind::Quantum,
        }
    }

    /// Ablation order: baseline, single switches, both.
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::standard(),
        ModelVariant::q_attention(),
        ModelVariant::q_ff(),
        ModelVariant::quantum(),
    ];

    pub fn name(self) -> &'static str {
        match (self.attention, self.ff) {
            (Kind::Standard, Kind::Standard) => "standard",
            (Kind::Quantum, Kind::Standard) => "q-attn",
            (Kind::Standard, Kind::Quantum) => "q-ff",
            (Kind::Quantum, Kind::Quantum) => "quantum",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelVariant> {
        match s {
            "standard" => Ok(ModelVariant::standard()),
            "quantum" => Ok(ModelVariant::quantum()),
            "q-attn" => Ok(ModelVariant::q_attention()),
            "q-ff" => Ok(ModelVariant::q_ff()),
            other => Err(Error::contract(format!(
                "unknown variant {other:?} (expected standard, quantum, q-attn, or q-ff)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Window length K; the token sequence is three times as long.
    pub context_len: usize,
    pub d_ff: usize,
    /// Entanglement mix strength; 0 recovers standard attention exactly.
    pub alpha_e: f64,
    /// Feedforward channels in quantum-FF variants.
    pub n_channels: usize,
    /// Timestep-embedding rows; must cover the longest episode.
    pub t_max: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub variant: ModelVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 3,
            n_heads: 4,
            context_len: 20,
            d_ff: 512,
            alpha_e: 0.3,
            n_channels: 3,
            t_max: 1000,
            state_dim: 11,
            action_dim: 3,
            variant: ModelVariant::quantum(),
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: ModelVariant) -> Self {
        ModelConfig {
            variant,
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len == 0 {
            return Err(Error::contract("context_len must be at least 1"));
        }
        if self.d_ff == 0 {
            return Err(Error::contract("d_ff must be positive"));
        }
        if !(self.alpha_e >= 0.0) {
            return Err(Error::contract(format!(
                "entanglement strength {} must be non-negative",
                self.alpha_e
            )));
        }
        if self.n_channels == 0 {
            return Err(Error::contract("n_channels must be at least 1"));
        }
        if self.t_max == 0 || self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::contract("t_max and token dims must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("qff".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.d_ff, 4 * cfg.d_model);
        assert_eq!(cfg.head_dim(), 32);
    }

    #[test]
    fn validation_rejects_uneven_heads() {
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
