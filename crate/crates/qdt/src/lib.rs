//! Desk-scale offline RL laboratory around a quantum-inspired decision
//! transformer.
//!
//! The crate is organized along the pipeline: [`env`] simulates the linear
//! control task, [`data`] collects tiered offline datasets from a scripted
//! policy, [`model`] defines the transformer and its ablation variants on top
//! of the `gradcore` tape, [`train`] fits action predictions with AdamW, and
//! [`eval`] runs return-conditioned rollouts, the ablation matrix, and the
//! cross-tier generalization protocol. [`verify`] bundles the self-check
//! suite the CLI exposes.

pub mod checkpoint;
pub mod data;
pub mod env;
pub mod eval;
pub mod model;
pub mod seeds;
mod textio;
pub mod train;
pub mod verify;

/// Errors shared across the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] gradcore::GradError),
    #[error("{0}")]
    Contract(String),
    #[error("numeric abort at step {step}: {detail}")]
    NumericAbort { step: usize, detail: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported {kind} version {found}, this build reads version {supported}")]
    Version {
        kind: &'static str,
        found: String,
        supported: String,
    },
    #[error("checksum mismatch for {path}")]
    Checksum { path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
