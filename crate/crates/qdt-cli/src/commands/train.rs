use std::path::Path;

use qdt::train::{train, EpochStats, TrainHistory};

use crate::config::RunConfig;
use crate::error::Result;
use crate::manifest::RunContext;
use crate::tables::{csv, num};

pub const LOSS_HEADER: &str =
    "epoch,mean_loss,final_loss,mean_grad_norm,max_grad_norm,clipped_fraction";

pub fn loss_rows(epochs: &[EpochStats]) -> Vec<Vec<String>> {
    epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                num(e.mean_loss),
                num(e.final_loss),
                num(e.mean_grad_norm),
                num(e.max_grad_norm),
                num(e.clipped_fraction),
            ]
        })
        .collect()
}

pub fn interference_rows(weights: &[Vec<f64>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (layer, ws) in weights.iter().enumerate() {
        for (channel, &w) in ws.iter().enumerate() {
            rows.push(vec![layer.to_string(), channel.to_string(), num(w)]);
        }
    }
    rows
}

/// Wall-clock readings live apart from the loss files so that every
/// deterministic artifact of a run is byte-reproducible.
pub fn timing_csv(epochs: &[EpochStats]) -> String {
    let mut rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), num(e.wall_seconds)])
        .collect();
    let total: f64 = epochs.iter().map(|e| e.wall_seconds).sum();
    rows.push(vec!["total".to_string(), num(total)]);
    csv("epoch,wall_seconds", &rows)
}

pub fn print_epoch(e: &EpochStats) {
    println!(
        "epoch {:>3}: mean loss {:.6}, final {:.6}, grad norm {:.4} (max {:.4}), clipped {:>3.0}%, {:.1}s",
        e.epoch,
        e.mean_loss,
        e.final_loss,
        e.mean_grad_norm,
        e.max_grad_norm,
        e.clipped_fraction * 100.0,
        e.wall_seconds
    );
}

pub fn print_resolved(cfg: &RunConfig) {
    println!(
        "training config: variant {}, lr {}, weight decay {}, batch size {}, epochs {}, grad clip {}, seed {}",
        cfg.variant,
        num(cfg.learning_rate),
        num(cfg.weight_decay),
        cfg.batch_size,
        cfg.epochs,
        num(cfg.grad_clip),
        cfg.seed
    );
}

pub fn write_history(
    ctx: &mut RunContext,
    history: &TrainHistory,
    suffix: &str,
) -> Result<()> {
    ctx.write_text(
        &format!("loss{suffix}.csv"),
        &csv(LOSS_HEADER, &loss_rows(&history.epochs)),
    )?;
    if !history.interference_weights.is_empty() {
        ctx.write_text(
            &format!("interference{suffix}.csv"),
            &csv(
                "layer,channel,weight",
                &interference_rows(&history.interference_weights),
            ),
        )?;
    }
    ctx.write_text(&format!("timing{suffix}.csv"), &timing_csv(&history.epochs))
}

pub fn run(cfg: &RunConfig, data: &Path, mut ctx: RunContext) -> Result<()> {
    let ds = qdt::data::load(data)?;
    ctx.note_input(data);
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    print_resolved(cfg);

    let (params, history) = train(&ds, &model_cfg, &train_cfg, print_epoch)?;

    let ckpt = ctx.path("checkpoint.ckpt");
    qdt::checkpoint::save(&params, &model_cfg, &ckpt)?;
    ctx.note_artifact("checkpoint.ckpt");
    ctx.note_artifact("checkpoint.ckpt.sha256");

    write_history(&mut ctx, &history, "")?;
    let step_rows: Vec<Vec<String>> = history
        .step_losses
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i.to_string(), num(l)])
        .collect();
    ctx.write_text("loss_steps.csv", &csv("step,loss", &step_rows))?;

    println!(
        "trained {} parameters for {} steps; final loss {}",
        params.count(),
        history.total_steps,
        num(history.final_loss())
    );
    println!("wrote {}", ckpt.display());

    ctx.write_config(cfg)?;
    ctx.finish()
}
