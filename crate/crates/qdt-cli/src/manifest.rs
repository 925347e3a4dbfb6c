//! Run directories and their manifests. Every artifact-producing command
//! works inside one directory under the run root and finishes by writing a
//! single manifest listing what it read and wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub struct RunContext {
    dir: PathBuf,
    run_id: String,
    verb: &'static str,
    started_ms: u64,
    inputs: Vec<String>,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    run_id: &'a str,
    verb: &'a str,
    tool_version: &'a str,
    started_unix_ms: u64,
    finished_unix_ms: u64,
    inputs: &'a [String],
    artifacts: &'a [String],
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunContext {
    /// Root precedence: `--run-root` flag, then QDT_RUN_ROOT, then `runs`.
    pub fn create(
        run_root: Option<PathBuf>,
        run: Option<String>,
        verb: &'static str,
        default_name: &str,
    ) -> Result<RunContext> {
        let root = run_root
            .or_else(|| std::env::var_os("QDT_RUN_ROOT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        let run_id = run.unwrap_or_else(|| default_name.to_string());
        let dir = root.join(&run_id);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(RunContext {
            dir,
            run_id,
            verb,
            started_ms: now_ms(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn note_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    /// Register a file created inside the run directory.
    pub fn note_artifact(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    /// Register a file created at an explicit path outside the directory.
    pub fn note_external_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        self.note_artifact(name);
        Ok(())
    }

    pub fn write_config(&mut self, cfg: &RunConfig) -> Result<()> {
        self.write_text("config.toml", &cfg.to_toml()?)
    }

    /// Write the manifest; call last so the artifact list is complete.
    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            run_id: &self.run_id,
            verb: self.verb,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix_ms: self.started_ms,
            finished_unix_ms: now_ms(),
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        let path = self.dir.join("manifest.toml");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
