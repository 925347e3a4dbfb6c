//! Versioned text container for offline datasets.
//!
//! Layout: one header block (version, tier, discount, seed, statistics,
//! trajectory count), then per trajectory a `traj <index> <len>` line followed
//! by five parallel-array lines (states, actions, rewards, rtg, timesteps).
//! Floats are written in shortest round-trip form so load(save(d)) == d
//! bit-for-bit. A `<name>.sha256` sidecar carries the content digest and is
//! verified on load when present.

use std::fmt::Write as _;
use std::path::Path;

use crate::env::{ACTION_DIM, STATE_DIM};
use crate::textio::{push_floats, write_with_checksum, read_verified, Parser};
use crate::{Error, Result};

use super::{OfflineDataset, Tier, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &str = "qdt-dataset v";

pub fn save(ds: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    let _ = writeln!(buf, "{MAGIC}{FORMAT_VERSION}");
    let _ = writeln!(buf, "tier {}", ds.tier);
    let _ = writeln!(buf, "gamma {}", ds.gamma);
    let _ = writeln!(buf, "source_seed {}", ds.source_seed);
    push_floats(&mut buf, "state_mean", &ds.state_mean)?;
    push_floats(&mut buf, "state_std", &ds.state_std)?;
    push_floats(&mut buf, "return_scale", &[ds.return_scale])?;
    let _ = writeln!(buf, "trajectories {}", ds.trajectories.len());
    for (i, t) in ds.trajectories.iter().enumerate() {
        let _ = writeln!(buf, "traj {i} {}", t.len());
        push_floats(&mut buf, "states", t.states.as_flattened())?;
        push_floats(&mut buf, "actions", t.actions.as_flattened())?;
        push_floats(&mut buf, "rewards", &t.rewards)?;
        push_floats(&mut buf, "rtg", &t.rtg)?;
        buf.push_str("timesteps");
        for ts in &t.timesteps {
            let _ = write!(buf, " {ts}");
        }
        buf.push('\n');
    }

    write_with_checksum(path, &buf)
}

pub fn load(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let text = read_verified(path)?;
    let mut p = Parser::new(path, &text);

    let magic = p.next_line("header")?;
    let version = magic
        .strip_prefix(MAGIC)
        .ok_or_else(|| p.err_at(1, format!("expected {MAGIC:?} header, found {magic:?}")))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version {
            kind: "dataset",
            found: version.to_string(),
            supported: FORMAT_VERSION.to_string(),
        });
    }

    let tier: Tier = p
        .field("tier")?
        .parse()
        .map_err(|e| p.err(format!("{e}")))?;
    let gamma = p.f64_field("gamma")?;
    let source_seed = p
        .field("source_seed")?
        .parse::<u64>()
        .map_err(|e| p.err(format!("bad seed: {e}")))?;
    let state_mean = to_array11(&p.floats_field("state_mean", STATE_DIM)?);
    let state_std = to_array11(&p.floats_field("state_std", STATE_DIM)?);
    let return_scale = p.floats_field("return_scale", 1)?[0];
    let n_traj = p
        .field("trajectories")?
        .parse::<usize>()
        .map_err(|e| p.err(format!("bad trajectory count: {e}")))?;

    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let head = p.field("traj")?;
        let mut it = head.split_whitespace();
        let idx = it
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| p.err("bad trajectory index"))?;
        let len = it
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| p.err("bad trajectory length"))?;
        if it.next().is_some() {
            return Err(p.err("extra tokens after trajectory header"));
        }
        if idx != i {
            return Err(p.err(format!("expected trajectory {i}, found {idx}")));
        }
        if len == 0 {
            return Err(p.err("empty trajectory"));
        }
        let states = group11(p.floats_field("states", STATE_DIM * len)?);
        let actions = group3(p.floats_field("actions", ACTION_DIM * len)?);
        let rewards = p.floats_field("rewards", len)?;
        let rtg = p.floats_field("rtg", len)?;
        let ts_line = p.field("timesteps")?;
        let mut timesteps = Vec::with_capacity(len);
        for tok in ts_line.split_whitespace() {
            timesteps.push(
                tok.parse::<u32>()
                    .map_err(|_| p.err(format!("bad timestep {tok:?}")))?,
            );
        }
        if timesteps.len() != len {
            return Err(p.err(format!(
                "expected {len} timesteps, found {}",
                timesteps.len()
            )));
        }
        trajectories.push(Trajectory {
            states,
            actions,
            rewards,
            rtg,
            timesteps,
        });
    }
    p.expect_end("the last trajectory")?;

    Ok(OfflineDataset {
        trajectories,
        tier,
        state_mean,
        state_std,
        return_scale,
        gamma,
        source_seed,
    })
}

fn to_array11(v: &[f64]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    out.copy_from_slice(v);
    out
}

fn group11(flat: Vec<f64>) -> Vec<[f64; STATE_DIM]> {
    flat.chunks_exact(STATE_DIM).map(to_array11).collect()
}

fn group3(flat: Vec<f64>) -> Vec<[f64; ACTION_DIM]> {
    flat.chunks_exact(ACTION_DIM)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}
