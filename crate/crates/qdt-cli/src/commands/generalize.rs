use std::path::{Path, PathBuf};

use qdt::data::OfflineDataset;
use qdt::eval::{generalization_test, GenReading};

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::RunContext;
use crate::tables::{csv, num};

fn reading_name(r: GenReading) -> &'static str {
    match r {
        GenReading::OfflineMse => "offline_mse",
        GenReading::Rollout => "rollout",
    }
}

pub fn run(
    cfg: &RunConfig,
    checkpoint: &Path,
    train_data: &Path,
    tier_paths: &[PathBuf],
    mut ctx: RunContext,
) -> Result<()> {
    let (model_cfg, params) = qdt::checkpoint::load(checkpoint)?;
    let train_ds = qdt::data::load(train_data)?;
    ctx.note_input(checkpoint);
    ctx.note_input(train_data);
    let mut tiers: Vec<OfflineDataset> = Vec::with_capacity(tier_paths.len());
    for p in tier_paths {
        tiers.push(qdt::data::load(p)?);
        ctx.note_input(p);
    }
    let refs: Vec<&OfflineDataset> = tiers.iter().collect();

    let ec = cfg.eval_config(&model_cfg);
    let blocks = generalization_test(
        &params,
        &model_cfg,
        &train_ds.stats(),
        &refs,
        &ec,
        &cfg.env_config(),
    )?;

    let rows: Vec<Vec<String>> = blocks
        .iter()
        .map(|b| {
            vec![
                b.tier.name().to_string(),
                reading_name(b.reading).to_string(),
                num(b.value),
                num(b.std),
            ]
        })
        .collect();
    ctx.write_text("generalization.csv", &csv("tier,reading,value,std", &rows))?;

    println!(
        "generalization of the {} checkpoint (trained on {}):",
        model_cfg.variant.name(),
        train_ds.tier.name()
    );
    for b in &blocks {
        match b.reading {
            GenReading::OfflineMse => {
                println!("  {:<7} offline action MSE {:.6}", b.tier.name(), b.value)
            }
            GenReading::Rollout => println!(
                "  {:<7} rollout return {:.3} +- {:.3}",
                b.tier.name(),
                b.value,
                b.std
            ),
        }
    }

    ctx.write_config(cfg)?;
    ctx.finish()
}
