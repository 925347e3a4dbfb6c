//! Layered configuration: profile defaults, then a flat-key TOML file, then
//! command-line flags. The fully resolved result is persisted with every run
//! so any artifact can be reproduced from its snapshot alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qdt::data::{Tier, TierSpec};
use qdt::env::EnvConfig;
use qdt::eval::EvalConfig;
use qdt::model::{ModelConfig, ModelVariant};
use qdt::train::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Full-size experiment settings.
    Full,
    /// Reduced settings sized so the whole pipeline finishes in minutes.
    Ci,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Ci => "ci",
        }
    }
}

/// One configuration layer; unset keys fall through to the layer below.
/// The same struct parses config files, so every key here is a valid file
/// key and unknown keys are rejected with the offending name.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub profile: Option<String>,

    pub noise_std: Option<f64>,
    pub max_steps: Option<u32>,
    pub state_norm_limit: Option<f64>,

    pub tier: Option<String>,
    pub n_trajectories: Option<usize>,
    pub behavior_noise: Option<f64>,
    pub data_seed: Option<u64>,

    pub variant: Option<String>,
    pub d_model: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub context_len: Option<usize>,
    pub d_ff: Option<usize>,
    pub alpha_e: Option<f64>,
    pub n_channels: Option<usize>,
    pub t_max: Option<usize>,

    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,

    pub targets: Option<Vec<f64>>,
    pub episodes_per_target: Option<usize>,
    pub eval_seed: Option<u64>,
    pub eval_max_steps: Option<u32>,
    pub eval_noise: Option<bool>,
}

macro_rules! take_first {
    ($a:expr, $b:expr; $($field:ident),* $(,)?) => {
        PartialConfig {
            $($field: $a.$field.or($b.$field),)*
        }
    };
}

impl PartialConfig {
    pub fn load(path: &Path) -> Result<PartialConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Layer `self` over `under`; set keys in `self` win.
    fn over(self, under: PartialConfig) -> PartialConfig {
        take_first!(self, under;
            profile, noise_std, max_steps, state_norm_limit,
            tier, n_trajectories, behavior_noise, data_seed,
            variant, d_model, n_layers, n_heads, context_len, d_ff,
            alpha_e, n_channels, t_max,
            learning_rate, weight_decay, batch_size, epochs, grad_clip,
            seed, beta1, beta2, adam_eps,
            targets, episodes_per_target, eval_seed, eval_max_steps, eval_noise,
        )
    }

    fn for_profile(p: Profile) -> PartialConfig {
        match p {
            Profile::Full => PartialConfig::default(),
            Profile::Ci => PartialConfig {
                n_trajectories: Some(50),
                d_model: Some(32),
                n_layers: Some(2),
                d_ff: Some(128),
                epochs: Some(3),
                episodes_per_target: Some(5),
                ..PartialConfig::default()
            },
        }
    }
}

/// Every knob of the experiment, fully resolved. Serializes to the flat-key
/// TOML snapshot written into each run directory; a snapshot fed back via
/// `--config` reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,

    pub noise_std: f64,
    pub max_steps: u32,
    pub state_norm_limit: f64,

    pub tier: String,
    pub n_trajectories: usize,
    pub behavior_noise: f64,
    pub data_seed: u64,

    pub variant: String,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub d_ff: usize,
    pub alpha_e: f64,
    pub n_channels: usize,
    pub t_max: usize,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub targets: Vec<f64>,
    pub episodes_per_target: usize,
    pub eval_seed: u64,
    pub eval_max_steps: u32,
    pub eval_noise: bool,
}

/// Merge the layers (flags over file over profile defaults) and fill the
/// remaining gaps from the built-in defaults. The profile comes from the
/// flag when given, else the file's `profile` key, else the full-size one.
pub fn resolve(
    file: Option<PartialConfig>,
    flags: PartialConfig,
    profile_flag: Option<Profile>,
) -> Result<RunConfig> {
    let file = file.unwrap_or_default();
    let profile = match (profile_flag, file.profile.as_deref()) {
        (Some(p), _) => p,
        (None, Some("full")) => Profile::Full,
        (None, Some("ci")) => Profile::Ci,
        (None, Some(other)) => {
            return Err(CliError::Usage(format!(
                "unknown profile {other:?} (expected full or ci)"
            )))
        }
        (None, None) => Profile::Full,
    };
    let merged = flags.over(file).over(PartialConfig::for_profile(profile));

    let tier_name = merged.tier.unwrap_or_else(|| "medium".to_string());
    let tier: Tier = tier_name
        .parse()
        .map_err(|e: qdt::Error| CliError::Usage(e.to_string()))?;
    let tier_defaults = tier.default_spec();
    let variant = merged.variant.unwrap_or_else(|| "quantum".to_string());
    variant
        .parse::<ModelVariant>()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let env = EnvConfig::default();
    let model = ModelConfig::default();
    let train = TrainConfig::default();
    let eval = EvalConfig::default();

    Ok(RunConfig {
        profile: profile.name().to_string(),

        noise_std: merged.noise_std.unwrap_or(env.noise_std),
        max_steps: merged.max_steps.unwrap_or(env.max_steps),
        state_norm_limit: merged.state_norm_limit.unwrap_or(env.state_norm_limit),

        tier: tier_name,
        n_trajectories: merged.n_trajectories.unwrap_or(tier_defaults.n_trajectories),
        behavior_noise: merged.behavior_noise.unwrap_or(tier_defaults.noise_std),
        data_seed: merged.data_seed.unwrap_or(42),

        variant,
        d_model: merged.d_model.unwrap_or(model.d_model),
        n_layers: merged.n_layers.unwrap_or(model.n_layers),
        n_heads: merged.n_heads.unwrap_or(model.n_heads),
        context_len: merged.context_len.unwrap_or(model.context_len),
        d_ff: merged.d_ff.unwrap_or(model.d_ff),
        alpha_e: merged.alpha_e.unwrap_or(model.alpha_e),
        n_channels: merged.n_channels.unwrap_or(model.n_channels),
        t_max: merged.t_max.unwrap_or(model.t_max),

        learning_rate: merged.learning_rate.unwrap_or(train.learning_rate),
        weight_decay: merged.weight_decay.unwrap_or(train.weight_decay),
        batch_size: merged.batch_size.unwrap_or(train.batch_size),
        epochs: merged.epochs.unwrap_or(train.epochs),
        grad_clip: merged.grad_clip.unwrap_or(train.grad_clip),
        seed: merged.seed.unwrap_or(train.seed),
        beta1: merged.beta1.unwrap_or(train.beta1),
        beta2: merged.beta2.unwrap_or(train.beta2),
        adam_eps: merged.adam_eps.unwrap_or(train.adam_eps),

        targets: merged.targets.unwrap_or(eval.targets),
        episodes_per_target: merged
            .episodes_per_target
            .unwrap_or(eval.episodes_per_target),
        eval_seed: merged.eval_seed.unwrap_or(eval.eval_seed),
        eval_max_steps: merged.eval_max_steps.unwrap_or(eval.max_steps),
        eval_noise: merged.eval_noise.unwrap_or(eval.noise_enabled),
    })
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| CliError::Io(format!("config snapshot: {e}")))
    }

    pub fn tier(&self) -> Tier {
        self.tier.parse().expect("tier validated at resolve time")
    }

    pub fn tier_spec(&self) -> TierSpec {
        TierSpec {
            name: self.tier(),
            n_trajectories: self.n_trajectories,
            noise_std: self.behavior_noise,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            noise_std: self.noise_std,
            max_steps: self.max_steps,
            state_norm_limit: self.state_norm_limit,
            ..EnvConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context_len: self.context_len,
            d_ff: self.d_ff,
            alpha_e: self.alpha_e,
            n_channels: self.n_channels,
            t_max: self.t_max,
            variant: self.variant.parse().expect("variant validated at resolve time"),
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            seed: self.seed,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
        }
    }

    /// Evaluation settings; the context window always tracks the model's.
    pub fn eval_config(&self, model: &ModelConfig) -> EvalConfig {
        EvalConfig {
            targets: self.targets.clone(),
            episodes_per_target: self.episodes_per_target,
            max_steps: self.eval_max_steps,
            context_len: model.context_len,
            eval_seed: self.eval_seed,
            noise_enabled: self.eval_noise,
        }
    }
}

pub fn parse_targets(s: &str) -> Result<Vec<f64>> {
    let out: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!(
            "bad --targets {s:?} (expected comma-separated numbers)"
        ))),
    }
}
