use std::path::Path;

use crate::error::{CliError, Result};
use crate::tables::{format_summary, parse_episode_file, summary_rows};

/// Rebuild the run summary purely from the stored per-episode records.
/// Aggregation goes through the same code path as the original write, so
/// the regenerated text is byte-identical to `summary.txt`.
pub fn run(dir: &Path) -> Result<()> {
    let episodes = dir.join("episodes.csv");
    let text =
        std::fs::read_to_string(&episodes).map_err(|e| CliError::io(&episodes, e))?;
    let records = parse_episode_file(&episodes.display().to_string(), &text)?;
    if records.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no episode records to aggregate",
            episodes.display()
        )));
    }
    let summary = format_summary(&summary_rows(&records));
    let out = dir.join("summary_regenerated.txt");
    std::fs::write(&out, &summary).map_err(|e| CliError::io(&out, e))?;
    print!("{summary}");
    println!(
        "aggregated {} episode records; wrote {}",
        records.len(),
        out.display()
    );
    Ok(())
}
