//! Stable seed derivation.
//!
//! Every stochastic stage (episode resets, policy noise, batch sampling,
//! parameter init, evaluation episodes) derives its stream seed from the
//! user-facing seed plus fixed salts, so streams never collide and runs are
//! reproducible across platforms. `std::hash` is deliberately avoided: its
//! output is not stable across Rust releases.

/// splitmix64 finalizer; the de-facto standard 64-bit mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Fold an ordered list of parts into one seed.
pub fn derive(parts: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3; // pi, nothing up the sleeve
    for &p in parts {
        acc = mix(acc ^ p);
    }
    acc
}

pub const SALT_ENV: u64 = 0x1;
pub const SALT_POLICY: u64 = 0x2;
pub const SALT_INIT: u64 = 0x3;
pub const SALT_BATCH: u64 = 0x4;
pub const SALT_EVAL: u64 = 0x5;
pub const SALT_OFFLINE: u64 = 0x6;
pub const SALT_VERIFY: u64 = 0x7;
