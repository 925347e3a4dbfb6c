//! Flat tabular output. Floats are written with the shortest representation
//! that parses back to the same bits, so files regenerated from parsed
//! records are byte-identical to the originals.

use qdt::eval::EvalReport;

use crate::error::{CliError, Result};

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One evaluation episode, denormalized so the record file alone can
/// reproduce the run summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub variant: String,
    pub params: usize,
    pub final_loss: f64,
    pub target: f64,
    pub episode: usize,
    pub ret: f64,
}

pub const EPISODES_HEADER: &str = "variant,params,final_loss,target,episode,return";

impl EpisodeRecord {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.variant.clone(),
            self.params.to_string(),
            num(self.final_loss),
            num(self.target),
            self.episode.to_string(),
            num(self.ret),
        ]
    }

    pub fn parse(line: &str, path: &str, lineno: usize) -> Result<EpisodeRecord> {
        let bad = |what: &str| {
            CliError::Io(format!("{path}:{lineno}: bad episode record ({what})"))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad("wrong field count"));
        }
        Ok(EpisodeRecord {
            variant: fields[0].to_string(),
            params: fields[1].parse().map_err(|_| bad("params"))?,
            final_loss: fields[2].parse().map_err(|_| bad("final_loss"))?,
            target: fields[3].parse().map_err(|_| bad("target"))?,
            episode: fields[4].parse().map_err(|_| bad("episode"))?,
            ret: fields[5].parse().map_err(|_| bad("return"))?,
        })
    }
}

pub fn episode_records(variant: &str, report: &EvalReport) -> Vec<EpisodeRecord> {
    let mut out = Vec::new();
    for block in &report.targets {
        for (episode, &ret) in block.returns.iter().enumerate() {
            out.push(EpisodeRecord {
                variant: variant.to_string(),
                params: report.param_count,
                final_loss: report.final_train_loss,
                target: block.target,
                episode,
                ret,
            });
        }
    }
    out
}

pub fn parse_episode_file(path: &str, text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == EPISODES_HEADER => {}
        _ => {
            return Err(CliError::Io(format!(
                "{path}:1: expected header {EPISODES_HEADER:?}"
            )))
        }
    }
    lines
        .map(|(i, line)| EpisodeRecord::parse(line, path, i + 1))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub avg_return: f64,
    pub avg_std: f64,
    pub parameters: usize,
    pub final_loss: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate per-episode records into summary rows, grouping by variant in
/// first-seen order. This is the only way summaries are produced, so a
/// summary regenerated from its record file matches the original exactly.
pub fn summary_rows(records: &[EpisodeRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    order
        .iter()
        .map(|&variant| {
            let of_variant: Vec<&EpisodeRecord> =
                records.iter().filter(|r| r.variant == variant).collect();
            let returns: Vec<f64> = of_variant.iter().map(|r| r.ret).collect();
            let (avg_return, avg_std) = mean_std(&returns);
            SummaryRow {
                variant: variant.to_string(),
                avg_return,
                avg_std,
                parameters: of_variant[0].params,
                final_loss: of_variant[0].final_loss,
            }
        })
        .collect()
}

/// Space-aligned summary table with the columns variant, avg_return,
/// avg_std, parameters, final_loss.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let header = ["variant", "avg_return", "avg_std", "parameters", "final_loss"];
    let mut cells: Vec<[String; 5]> = vec![header.map(str::to_string)];
    for r in rows {
        cells.push([
            r.variant.clone(),
            num(r.avg_return),
            num(r.avg_std),
            r.parameters.to_string(),
            num(r.final_loss),
        ]);
    }
    let mut width = [0usize; 5];
    for row in &cells {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        for (col, cell) in row.iter().enumerate() {
            if col > 0 {
                out.push_str("  ");
            }
            if col + 1 == row.len() {
                out.push_str(cell);
            } else {
                out.push_str(&format!("{cell:<w$}", w = width[col]));
            }
        }
        out.push('\n');
    }
    out
}
