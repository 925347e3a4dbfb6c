use crate::error::{CliError, Result};
use crate::tables::num;

pub fn run(seed: u64, inject_alpha: f64) -> Result<()> {
    if inject_alpha != 0.0 {
        println!(
            "fault injection: forcing entanglement strength {} into the reduction check",
            num(inject_alpha)
        );
    }
    let checks = qdt::verify::run_all(seed, inject_alpha).map_err(|e| match e {
        qdt::Error::NumericAbort { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Check(format!("verification suite failed to run: {other}")),
    })?;

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failing = Vec::new();
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<width$}  metric {:<10.3e} threshold {}",
            c.name,
            c.metric,
            num(c.threshold)
        );
        if !c.passed() {
            failing.push(c.name.clone());
        }
    }
    if failing.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{} of {} checks failed: {}",
            failing.len(),
            checks.len(),
            failing.join(", ")
        )))
    }
}
