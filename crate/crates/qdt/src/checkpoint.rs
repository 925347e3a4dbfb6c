//! Versioned text container for trained model parameters.
//!
//! Layout: a header with the format version and every architecture field,
//! then one `tensor <name> <len>` + value-row pair per parameter leaf in
//! canonical order. Floats use shortest round-trip form, so a load of a save
//! reproduces every bit; a `.sha256` sidecar guards against corruption.

use std::fmt::Write as _;
use std::path::Path;

use gradcore::Tensor;

use crate::model::{init_params, ModelConfig, ModelVariant, ParameterSet};
use crate::textio::{push_floats, read_verified, write_with_checksum, Parser};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &str = "qdt-checkpoint v";

pub fn save(
    params: &ParameterSet<Tensor>,
    cfg: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    let _ = writeln!(buf, "{MAGIC}{FORMAT_VERSION}");
    let _ = writeln!(buf, "d_model {}", cfg.d_model);
    let _ = writeln!(buf, "n_layers {}", cfg.n_layers);
    let _ = writeln!(buf, "n_heads {}", cfg.n_heads);
    let _ = writeln!(buf, "context_len {}", cfg.context_len);
    let _ = writeln!(buf, "d_ff {}", cfg.d_ff);
    let _ = writeln!(buf, "alpha_e {}", cfg.alpha_e);
    let _ = writeln!(buf, "n_channels {}", cfg.n_channels);
    let _ = writeln!(buf, "t_max {}", cfg.t_max);
    let _ = writeln!(buf, "state_dim {}", cfg.state_dim);
    let _ = writeln!(buf, "action_dim {}", cfg.action_dim);
    let _ = writeln!(buf, "variant {}", cfg.variant);
    let _ = writeln!(buf, "tensors {}", params.n_leaves());
    for (meta, value) in params.metas().iter().zip(params.values()) {
        let _ = writeln!(buf, "tensor {} {}", meta.name, value.len());
        push_floats(&mut buf, "values", value.data())?;
    }
    write_with_checksum(path, &buf)
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, ParameterSet<Tensor>)> {
    let path = path.as_ref();
    let text = read_verified(path)?;
    let mut p = Parser::new(path, &text);

    let magic = p.next_line("header")?;
    let version = magic
        .strip_prefix(MAGIC)
        .ok_or_else(|| p.err_at(1, format!("expected {MAGIC:?} header, found {magic:?}")))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version {
            kind: "checkpoint",
            found: version.to_string(),
            supported: FORMAT_VERSION.to_string(),
        });
    }

    let cfg = ModelConfig {
        d_model: p.usize_field("d_model")?,
        n_layers: p.usize_field("n_layers")?,
        n_heads: p.usize_field("n_heads")?,
        context_len: p.usize_field("context_len")?,
        d_ff: p.usize_field("d_ff")?,
        alpha_e: p.f64_field("alpha_e")?,
        n_channels: p.usize_field("n_channels")?,
        t_max: p.usize_field("t_max")?,
        state_dim: p.usize_field("state_dim")?,
        action_dim: p.usize_field("action_dim")?,
        variant: {
            let s = p.field("variant")?;
            s.parse::<ModelVariant>().map_err(|e| p.err(e.to_string()))?
        },
    };
    cfg.validate()?;

    // the architecture dictates leaf names, shapes, and order; the file
    // must match exactly
    let mut params = init_params(&cfg, 0);
    let n = p.usize_field("tensors")?;
    if n != params.n_leaves() {
        return Err(p.err(format!(
            "checkpoint has {n} tensors, architecture wants {}",
            params.n_leaves()
        )));
    }
    for i in 0..params.n_leaves() {
        let head = p.field("tensor")?;
        let mut it = head.split_whitespace();
        let name = it.next().unwrap_or_default();
        let len = it
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| p.err("bad tensor length"))?;
        if it.next().is_some() {
            return Err(p.err("extra tokens after tensor header"));
        }
        let meta = &params.metas()[i];
        if name != meta.name {
            return Err(p.err(format!(
                "expected tensor {:?} at position {i}, found {name:?}",
                meta.name
            )));
        }
        if len != meta.len() {
            return Err(p.err(format!(
                "tensor {name:?} holds {len} values, architecture wants {}",
                meta.len()
            )));
        }
        let shape = meta.shape.clone();
        let values = p.floats_field("values", len)?;
        params.values_mut()[i] = Tensor::from_vec(&shape, values)?;
    }
    p.expect_end("the last tensor")?;
    Ok((cfg, params))
}
