//! Dataset statistics, return-to-go oracle, and the on-disk format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdt::data::{self, compute_rtg, Tier, TierSpec};
use qdt::env::EnvConfig;
use qdt::Error;

fn small_dataset() -> data::OfflineDataset {
    let spec = TierSpec {
        name: Tier::Medium,
        n_trajectories: 3,
        noise_std: 0.3,
    };
    let cfg = EnvConfig {
        max_steps: 17,
        ..EnvConfig::default()
    };
    data::collect(&spec, &cfg, 7)
}

#[test]
fn rtg_recursion_matches_brute_force_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let len = rng.gen_range(1..=50);
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let gamma = match case % 4 {
            0 => 0.99,
            1 => 0.0,
            2 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        };
        let fast = compute_rtg(&rewards, gamma).unwrap();
        for t in 0..len {
            let slow: f64 = (t..len)
                .map(|k| gamma.powi((k - t) as i32) * rewards[k])
                .sum();
            assert!(
                (fast[t] - slow).abs() < 1e-10,
                "case {case} t {t}: {} vs {slow}",
                fast[t]
            );
        }
    }
}

#[test]
fn medium_tier_statistics_normalize_cleanly() {
    let ds = data::collect(
        &Tier::Medium.default_spec(),
        &EnvConfig::default(),
        42,
    );
    assert_eq!(ds.trajectories.len(), 500);

    let stats = ds.stats();
    let n = ds.total_steps() as f64;
    let mut mean = [0.0; 11];
    let mut sq = [0.0; 11];
    for t in &ds.trajectories {
        for s in &t.states {
            let z = stats.normalize_state(s);
            for d in 0..11 {
                mean[d] += z[d] / n;
                sq[d] += z[d] * z[d] / n;
            }
        }
        for &r in &t.rtg {
            let scaled = stats.scale_rtg(r);
            assert!((-1.0..=1.0).contains(&scaled), "scaled rtg {scaled}");
        }
    }
    for d in 0..11 {
        assert!(mean[d].abs() < 1e-9, "dim {d} mean {}", mean[d]);
        let std = (sq[d] - mean[d] * mean[d]).sqrt();
        assert!((std - 1.0).abs() < 1e-9, "dim {d} std {std}");
    }
}

#[test]
fn expert_tier_outscores_random_tier() {
    let cfg = EnvConfig::default();
    let mean_return = |tier: Tier| {
        let spec = TierSpec {
            n_trajectories: 100,
            ..tier.default_spec()
        };
        let ds = data::collect(&spec, &cfg, 5);
        ds.trajectories
            .iter()
            .map(|t| t.undiscounted_return())
            .sum::<f64>()
            / ds.trajectories.len() as f64
    };
    let expert = mean_return(Tier::Expert);
    let random = mean_return(Tier::Random);
    assert!(
        expert > random,
        "expert mean {expert} should beat random mean {random}"
    );
}

#[test]
fn save_load_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("medium.qds");
    let ds = small_dataset();
    data::save(&ds, &path).unwrap();
    assert!(path.with_file_name("medium.qds.sha256").exists());
    let back = data::load(&path).unwrap();
    assert_eq!(ds, back);
}

#[test]
fn version_gate_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qds");
    data::save(&small_dataset(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("qdt-dataset v1", "qdt-dataset v2", 1);
    std::fs::write(&path, bumped).unwrap();
    std::fs::remove_file(path.with_file_name("d.qds.sha256")).unwrap();
    match data::load(&path) {
        Err(Error::Version { found, supported, .. }) => {
            assert_eq!(found, "2");
            assert_eq!(supported, "1");
        }
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn truncated_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qds");
    data::save(&small_dataset(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    std::fs::remove_file(path.with_file_name("d.qds.sha256")).unwrap();
    assert!(matches!(data::load(&path), Err(Error::Parse { .. })));
}

#[test]
fn corrupted_bytes_fail_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qds");
    data::save(&small_dataset(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] = bytes[mid].wrapping_add(1);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(data::load(&path), Err(Error::Checksum { .. })));
}

#[test]
fn garbled_float_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qds");
    data::save(&small_dataset(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("rewards ", "rewards oops ", 1);
    std::fs::write(&path, broken).unwrap();
    std::fs::remove_file(path.with_file_name("d.qds.sha256")).unwrap();
    match data::load(&path) {
        Err(Error::Parse { line, msg, .. }) => {
            assert!(line > 0);
            assert!(msg.contains("oops"), "message was {msg:?}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}
