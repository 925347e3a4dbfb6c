use std::path::Path;

use qdt::eval::ablation_matrix;
use qdt::model::ModelConfig;

use crate::commands::eval::{per_target_rows, PER_TARGET_HEADER};
use crate::commands::train::{print_resolved, write_history};
use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::RunContext;
use crate::tables::{csv, episode_records, format_summary, num, summary_rows, EPISODES_HEADER};

pub fn run(cfg: &RunConfig, data: &Path, mut ctx: RunContext) -> Result<()> {
    let ds = qdt::data::load(data)?;
    ctx.note_input(data);
    let base_cfg = cfg.model_config();
    let tc = cfg.train_config();
    let ec = cfg.eval_config(&base_cfg);
    print_resolved(cfg);

    let out = ablation_matrix(&ds, &base_cfg, &tc, &ec, &cfg.env_config(), |variant, e| {
        println!(
            "[{variant}] epoch {:>3}: mean loss {:.6}, final {:.6}, {:.1}s",
            e.epoch, e.mean_loss, e.final_loss, e.wall_seconds
        );
    })?;

    let mut records = Vec::new();
    let mut per_target = Vec::new();
    let mut bars = Vec::new();
    let mut improvement = Vec::new();
    let mut train_seconds = Vec::new();
    for run in &out.runs {
        let name = run.variant.name();
        let ckpt_name = format!("checkpoint_{name}.ckpt");
        let variant_cfg = ModelConfig {
            variant: run.variant,
            ..base_cfg.clone()
        };
        qdt::checkpoint::save(&run.params, &variant_cfg, ctx.path(&ckpt_name))?;
        ctx.note_artifact(&ckpt_name);
        ctx.note_artifact(&format!("{ckpt_name}.sha256"));
        write_history(&mut ctx, &run.history, &format!("_{name}"))?;

        let report = &run.report;
        records.extend(episode_records(name, report));
        per_target.extend(per_target_rows(name, report));
        let pct = report.improvement_pct.unwrap_or(f64::NAN);
        bars.push(vec![
            name.to_string(),
            num(report.grand_mean),
            num(report.grand_std),
            num(pct),
            report.param_count.to_string(),
        ]);
        improvement.push(vec![name.to_string(), num(pct)]);
        train_seconds.push(run.history.epochs.iter().map(|e| e.wall_seconds).sum::<f64>());
    }

    ctx.write_text(
        "episodes.csv",
        &csv(
            EPISODES_HEADER,
            &records.iter().map(|r| r.to_row()).collect::<Vec<_>>(),
        ),
    )?;
    ctx.write_text("per_target.csv", &csv(PER_TARGET_HEADER, &per_target))?;
    ctx.write_text(
        "ablation_bars.csv",
        &csv("variant,grand_mean,grand_std,improvement_pct,params", &bars),
    )?;
    ctx.write_text(
        "improvement.csv",
        &csv("variant,improvement_pct", &improvement),
    )?;

    let s = &out.synergy;
    ctx.write_text(
        "synergy.csv",
        &csv(
            "baseline_mean,delta_attention,delta_ff,delta_combined,synergy",
            &[vec![
                num(s.baseline_mean),
                num(s.delta_attention),
                num(s.delta_ff),
                num(s.delta_combined),
                num(s.synergy),
            ]],
        ),
    )?;

    let timing_rows: Vec<Vec<String>> = out
        .runs
        .iter()
        .zip(&train_seconds)
        .map(|(run, &t)| {
            vec![
                run.variant.name().to_string(),
                num(t),
                num(t / train_seconds[0]),
            ]
        })
        .collect();
    ctx.write_text(
        "timing.csv",
        &csv("variant,train_seconds,ratio_vs_standard", &timing_rows),
    )?;

    let summary = format_summary(&summary_rows(&records));
    ctx.write_text("summary.txt", &summary)?;
    print!("{summary}");
    println!(
        "synergy: combined {:.4} vs attention {:.4} + feedforward {:.4} -> {:.4}",
        s.delta_combined, s.delta_attention, s.delta_ff, s.synergy
    );
    println!(
        "train wall-clock ratio quantum/standard: {:.2}",
        train_seconds[3] / train_seconds[0]
    );

    ctx.write_config(cfg)?;
    ctx.finish()
}
