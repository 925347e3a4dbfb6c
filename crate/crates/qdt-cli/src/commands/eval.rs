use std::path::Path;

use qdt::eval::{evaluate, EvalReport, ModelPolicy};

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::RunContext;
use crate::tables::{csv, episode_records, format_summary, num, summary_rows, EPISODES_HEADER};

pub const PER_TARGET_HEADER: &str = "variant,target,mean,std";

pub fn per_target_rows(variant: &str, report: &EvalReport) -> Vec<Vec<String>> {
    report
        .targets
        .iter()
        .map(|b| {
            vec![
                variant.to_string(),
                num(b.target),
                num(b.mean),
                num(b.std),
            ]
        })
        .collect()
}

pub fn run(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    final_loss: Option<f64>,
    mut ctx: RunContext,
) -> Result<()> {
    let (model_cfg, params) = qdt::checkpoint::load(checkpoint)?;
    let ds = qdt::data::load(data)?;
    ctx.note_input(checkpoint);
    ctx.note_input(data);

    let stats = ds.stats();
    let policy = ModelPolicy {
        params: &params,
        cfg: &model_cfg,
        stats: &stats,
    };
    let ec = cfg.eval_config(&model_cfg);
    let report = evaluate(
        &policy,
        &cfg.env_config(),
        &ec,
        params.count(),
        final_loss.unwrap_or(f64::NAN),
    )?;

    let variant = model_cfg.variant.name();
    let records = episode_records(variant, &report);
    let summary = format_summary(&summary_rows(&records));

    ctx.write_text(
        "episodes.csv",
        &csv(
            EPISODES_HEADER,
            &records.iter().map(|r| r.to_row()).collect::<Vec<_>>(),
        ),
    )?;
    ctx.write_text(
        "per_target.csv",
        &csv(PER_TARGET_HEADER, &per_target_rows(variant, &report)),
    )?;
    ctx.write_text("summary.txt", &summary)?;

    print!("{summary}");
    for b in &report.targets {
        println!(
            "target {}: mean {:.3} +- {:.3} over {} episodes",
            num(b.target),
            b.mean,
            b.std,
            b.returns.len()
        );
    }
    let rpm = report.return_per_million_params();
    if rpm.is_finite() {
        println!("return per million parameters: {rpm:.3}");
    }

    ctx.write_config(cfg)?;
    ctx.finish()
}
