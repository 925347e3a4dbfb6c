use std::path::PathBuf;

use qdt::data::collect;

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::RunContext;
use crate::tables::num;

pub fn run(cfg: &RunConfig, out: Option<PathBuf>, mut ctx: RunContext) -> Result<()> {
    let spec = cfg.tier_spec();
    let ds = collect(&spec, &cfg.env_config(), cfg.data_seed);

    let default_name = format!("{}.ds", cfg.tier);
    let path = match &out {
        Some(p) => p.clone(),
        None => ctx.path(&default_name),
    };
    qdt::data::save(&ds, &path)?;
    match out {
        Some(p) => {
            ctx.note_external_artifact(&p);
            let mut side = p.clone().into_os_string();
            side.push(".sha256");
            ctx.note_external_artifact(side.as_ref());
        }
        None => {
            ctx.note_artifact(&default_name);
            ctx.note_artifact(&format!("{default_name}.sha256"));
        }
    }

    let returns: Vec<f64> = ds
        .trajectories
        .iter()
        .map(|t| t.rewards.iter().sum::<f64>())
        .collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let min = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    println!(
        "tier {}: {} trajectories, {} steps, behavior noise {}, seed {}",
        cfg.tier,
        ds.trajectories.len(),
        ds.total_steps(),
        num(cfg.behavior_noise),
        cfg.data_seed
    );
    println!(
        "returns: mean {mean:.3}, min {min:.3}, max {max:.3}; rtg scale {}",
        num(ds.return_scale)
    );
    println!("wrote {}", path.display());

    ctx.write_config(cfg)?;
    ctx.finish()
}
