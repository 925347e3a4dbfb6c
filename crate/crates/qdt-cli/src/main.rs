//! `qdt`: offline RL laboratory around a quantum-inspired decision
//! transformer. Commands cover the full experiment lifecycle: dataset
//! generation, training, evaluation, the four-variant ablation,
//! cross-tier generalization, the numeric verification suite, and
//! summary regeneration from stored records.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;
mod tables;

use config::{parse_targets, resolve, PartialConfig, Profile, RunConfig};
use error::Result;
use manifest::RunContext;

#[derive(Parser)]
#[command(
    name = "qdt",
    version,
    about = "Offline RL laboratory for quantum-inspired decision transformers",
    propagate_version = true
)]
struct Cli {
    /// Directory runs are written under (default: $QDT_RUN_ROOT, else `runs`).
    #[arg(long, global = true, value_name = "DIR")]
    run_root: Option<PathBuf>,

    /// Run directory name under the run root (default: the command name).
    #[arg(long, global = true, value_name = "NAME")]
    run: Option<String>,

    /// Flat-key TOML config; command-line flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Named preset layered under config file and flags.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,

    #[command(subcommand)]
    cmd: Cmd,
}

/// Overrides shared by the experiment commands; unset flags fall through
/// to the config file, then the profile, then built-in defaults.
#[derive(Args, Default)]
struct KnobFlags {
    /// Environment process-noise standard deviation.
    #[arg(long, help_heading = "Environment")]
    noise_std: Option<f64>,
    /// Episode length cap.
    #[arg(long, help_heading = "Environment")]
    max_steps: Option<u32>,
    /// Episode ends when the state norm exceeds this.
    #[arg(long, help_heading = "Environment")]
    state_norm_limit: Option<f64>,

    /// Trajectories to collect per dataset.
    #[arg(long, help_heading = "Data")]
    n_trajectories: Option<usize>,
    /// Exploration-noise std of the behavior policy (default: tier's own).
    #[arg(long, help_heading = "Data")]
    behavior_noise: Option<f64>,

    /// Embedding width.
    #[arg(long, help_heading = "Model")]
    d_model: Option<usize>,
    #[arg(long, help_heading = "Model")]
    n_layers: Option<usize>,
    #[arg(long, help_heading = "Model")]
    n_heads: Option<usize>,
    /// Context window length in timesteps.
    #[arg(long, help_heading = "Model")]
    context_len: Option<usize>,
    /// Feedforward hidden width.
    #[arg(long, help_heading = "Model")]
    d_ff: Option<usize>,
    /// Entanglement mixing strength.
    #[arg(long, help_heading = "Model")]
    alpha_e: Option<f64>,
    /// Parallel feedforward channels in quantum variants.
    #[arg(long, help_heading = "Model")]
    n_channels: Option<usize>,
    /// Timestep-embedding table size.
    #[arg(long, help_heading = "Model")]
    t_max: Option<usize>,

    #[arg(long, help_heading = "Training")]
    learning_rate: Option<f64>,
    #[arg(long, help_heading = "Training")]
    weight_decay: Option<f64>,
    #[arg(long, help_heading = "Training")]
    batch_size: Option<usize>,
    #[arg(long, help_heading = "Training")]
    epochs: Option<usize>,
    /// Global gradient-norm clip.
    #[arg(long, help_heading = "Training")]
    grad_clip: Option<f64>,
    #[arg(long, help_heading = "Training")]
    beta1: Option<f64>,
    #[arg(long, help_heading = "Training")]
    beta2: Option<f64>,
    #[arg(long, help_heading = "Training")]
    adam_eps: Option<f64>,

    /// Comma-separated return-to-go targets, e.g. 30,50,70,90.
    #[arg(long, help_heading = "Evaluation")]
    targets: Option<String>,
    #[arg(long, help_heading = "Evaluation")]
    episodes_per_target: Option<usize>,
    #[arg(long, help_heading = "Evaluation")]
    eval_seed: Option<u64>,
    /// Episode length cap during evaluation.
    #[arg(long, help_heading = "Evaluation")]
    eval_max_steps: Option<u32>,
    /// Enable environment noise during evaluation rollouts.
    #[arg(long, help_heading = "Evaluation")]
    eval_noise: Option<bool>,
}

impl KnobFlags {
    fn into_partial(self) -> Result<PartialConfig> {
        Ok(PartialConfig {
            noise_std: self.noise_std,
            max_steps: self.max_steps,
            state_norm_limit: self.state_norm_limit,
            n_trajectories: self.n_trajectories,
            behavior_noise: self.behavior_noise,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context_len: self.context_len,
            d_ff: self.d_ff,
            alpha_e: self.alpha_e,
            n_channels: self.n_channels,
            t_max: self.t_max,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            targets: self.targets.as_deref().map(parse_targets).transpose()?,
            episodes_per_target: self.episodes_per_target,
            eval_seed: self.eval_seed,
            eval_max_steps: self.eval_max_steps,
            eval_noise: self.eval_noise,
            ..PartialConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect an offline dataset with the tier's behavior policy.
    GenData {
        /// Dataset quality tier.
        #[arg(long, value_parser = ["medium", "expert", "random"])]
        tier: Option<String>,
        /// Master seed for dataset generation.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the dataset here instead of into the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        knobs: KnobFlags,
    },
    /// Train one model variant on a dataset.
    Train {
        /// Dataset file to train on.
        #[arg(long)]
        data: PathBuf,
        /// Model variant.
        #[arg(long, value_parser = ["standard", "quantum", "q-attn", "q-ff"])]
        variant: Option<String>,
        /// Training seed (initialization and batch sampling).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        knobs: KnobFlags,
    },
    /// Roll out a trained checkpoint over the evaluation target grid.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset supplying the normalization statistics (use the
        /// training dataset).
        #[arg(long)]
        data: PathBuf,
        /// Final training loss to carry into the summary.
        #[arg(long)]
        final_loss: Option<f64>,
        #[command(flatten)]
        knobs: KnobFlags,
    },
    /// Train and evaluate all four variants under identical seeds.
    Ablate {
        /// Dataset file to train on.
        #[arg(long)]
        data: PathBuf,
        /// Training seed shared by all four runs.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        knobs: KnobFlags,
    },
    /// Score a checkpoint on held-out tiers, offline and in rollouts.
    Generalize {
        /// Checkpoint to probe.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset the checkpoint was trained on (for its statistics).
        #[arg(long)]
        train_data: PathBuf,
        /// Held-out tier dataset; repeat for several tiers.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        knobs: KnobFlags,
    },
    /// Run the numeric verification suite (gradients, reductions,
    /// causality, return-to-go, parameter counts).
    Verify {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Force a nonzero entanglement strength into the standard
        /// attention path; a working suite must then fail.
        #[arg(long, default_value_t = 0.0)]
        inject_alpha: f64,
    },
    /// Regenerate a run's summary from its stored per-episode records.
    Report {
        /// Run directory holding episodes.csv.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn resolved(cli_config: &Option<PathBuf>, profile: Option<Profile>, flags: PartialConfig) -> Result<RunConfig> {
    let file = cli_config
        .as_deref()
        .map(PartialConfig::load)
        .transpose()?;
    resolve(file, flags, profile)
}

fn dispatch(cli: Cli) -> Result<()> {
    let Cli {
        run_root,
        run,
        config,
        profile,
        cmd,
    } = cli;
    match cmd {
        Cmd::GenData {
            tier,
            seed,
            out,
            knobs,
        } => {
            let flags = PartialConfig {
                tier,
                data_seed: seed,
                ..knobs.into_partial()?
            };
            let cfg = resolved(&config, profile, flags)?;
            let name = format!("gen-{}", cfg.tier);
            let ctx = RunContext::create(run_root, run, "gen-data", &name)?;
            commands::gen_data::run(&cfg, out, ctx)
        }
        Cmd::Train {
            data,
            variant,
            seed,
            knobs,
        } => {
            let flags = PartialConfig {
                variant,
                seed,
                ..knobs.into_partial()?
            };
            let cfg = resolved(&config, profile, flags)?;
            let name = format!("train-{}", cfg.variant);
            let ctx = RunContext::create(run_root, run, "train", &name)?;
            commands::train::run(&cfg, &data, ctx)
        }
        Cmd::Eval {
            checkpoint,
            data,
            final_loss,
            knobs,
        } => {
            let cfg = resolved(&config, profile, knobs.into_partial()?)?;
            let ctx = RunContext::create(run_root, run, "eval", "eval")?;
            commands::eval::run(&cfg, &checkpoint, &data, final_loss, ctx)
        }
        Cmd::Ablate { data, seed, knobs } => {
            let flags = PartialConfig {
                seed,
                ..knobs.into_partial()?
            };
            let cfg = resolved(&config, profile, flags)?;
            let ctx = RunContext::create(run_root, run, "ablate", "ablate")?;
            commands::ablate::run(&cfg, &data, ctx)
        }
        Cmd::Generalize {
            checkpoint,
            train_data,
            data,
            knobs,
        } => {
            let cfg = resolved(&config, profile, knobs.into_partial()?)?;
            let ctx = RunContext::create(run_root, run, "generalize", "generalize")?;
            commands::generalize::run(&cfg, &checkpoint, &train_data, &data, ctx)
        }
        Cmd::Verify { seed, inject_alpha } => commands::verify::run(seed, inject_alpha),
        Cmd::Report { dir } => commands::report::run(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
