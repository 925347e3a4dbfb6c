//! Shared plumbing for the versioned text containers (datasets and
//! checkpoints): checksummed writes, sidecar verification, float rows in
//! shortest round-trip form, and a line-oriented parser with positioned
//! error reporting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_owned()).unwrap_or_default();
    name.push(".sha256");
    path.with_file_name(name)
}

/// Write `buf` to `path` and its digest to the `.sha256` sidecar.
pub(crate) fn write_with_checksum(path: &Path, buf: &str) -> Result<()> {
    let digest = Sha256::digest(buf.as_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    fs::write(&side, format!("{digest:x}  {name}\n")).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Read `path`, verify the sidecar digest when one exists, and decode UTF-8.
pub(crate) fn read_verified(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    verify_checksum(path, &bytes)?;
    String::from_utf8(bytes).map_err(|_| Error::parse(path, 0, "file is not valid UTF-8"))
}

fn verify_checksum(path: &Path, bytes: &[u8]) -> Result<()> {
    let side = sidecar_path(path);
    let recorded = match fs::read_to_string(&side) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(&side, e)),
    };
    let recorded = recorded.split_whitespace().next().unwrap_or("");
    let actual = format!("{:x}", Sha256::digest(bytes));
    if recorded != actual {
        return Err(Error::Checksum {
            path: path.display().to_string(),
        });
    }
    Ok(())
}

/// Append `label v1 v2 ...` with floats in shortest round-trip form.
pub(crate) fn push_floats(buf: &mut String, label: &str, values: &[f64]) -> Result<()> {
    buf.push_str(label);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::contract(format!("non-finite value in {label}")));
        }
        let _ = write!(buf, " {v}");
    }
    buf.push('\n');
    Ok(())
}

pub(crate) struct Parser<'a> {
    pub(crate) path: &'a Path,
    pub(crate) lines: Vec<&'a str>,
    pub(crate) at: usize,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(path: &'a Path, text: &'a str) -> Parser<'a> {
        Parser {
            path,
            lines: text.lines().collect(),
            at: 0,
        }
    }

    pub(crate) fn next_line(&mut self, what: &str) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.at)
            .copied()
            .ok_or_else(|| self.err_at(self.at + 1, format!("unexpected end of file, wanted {what}")))?;
        self.at += 1;
        Ok(line)
    }

    /// Line `at` (1-based) being the one just consumed, report there.
    pub(crate) fn err(&self, msg: impl Into<String>) -> Error {
        self.err_at(self.at, msg.into())
    }

    pub(crate) fn err_at(&self, line: usize, msg: String) -> Error {
        Error::parse(self.path, line, msg)
    }

    /// Consume a `label <rest>` line and hand back the rest.
    pub(crate) fn field(&mut self, label: &str) -> Result<&'a str> {
        let line = self.next_line(label)?;
        line.strip_prefix(label)
            .map(str::trim_start)
            .ok_or_else(|| self.err(format!("expected {label:?} line, found {line:?}")))
    }

    pub(crate) fn f64_field(&mut self, label: &str) -> Result<f64> {
        let s = self.field(label)?;
        s.parse::<f64>()
            .map_err(|_| self.err(format!("bad float {s:?} in {label}")))
    }

    pub(crate) fn usize_field(&mut self, label: &str) -> Result<usize> {
        let s = self.field(label)?;
        s.parse::<usize>()
            .map_err(|_| self.err(format!("bad count {s:?} in {label}")))
    }

    pub(crate) fn floats_field(&mut self, label: &str, n: usize) -> Result<Vec<f64>> {
        let body = self.field(label)?;
        let mut out = Vec::with_capacity(n);
        for tok in body.split_whitespace() {
            match tok.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    let msg = format!("bad float {tok:?} in {label}");
                    return Err(self.err(msg));
                }
            }
        }
        if out.len() != n {
            return Err(self.err(format!(
                "expected {n} values in {label}, found {}",
                out.len()
            )));
        }
        Ok(out)
    }

    /// Error when any line is left unconsumed.
    pub(crate) fn expect_end(&self, what: &str) -> Result<()> {
        if self.at != self.lines.len() {
            return Err(self.err_at(self.at + 1, format!("trailing content after {what}")));
        }
        Ok(())
    }
}
