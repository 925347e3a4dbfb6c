//! End-to-end checks of the `qdt` binary: exit codes, artifact layout,
//! config layering, and output determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qdt")
}

fn run_in(root: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("QDT_RUN_ROOT", root)
        .output()
        .expect("spawn qdt")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Tiny-model flags shared by the fast training tests.
const TINY: &[&str] = &[
    "--d-model", "8", "--n-layers", "1", "--n-heads", "2", "--context-len", "4",
    "--d-ff", "16", "--t-max", "64", "--batch-size", "4",
];

fn gen_tiny(root: &Path, run: &str, tier: &str, n: &str, seed: &str) -> PathBuf {
    let out = run_in(
        root,
        &[
            "gen-data", "--tier", tier, "--seed", seed, "--n-trajectories", n,
            "--max-steps", "30", "--run", run,
        ],
    );
    assert_eq!(code(&out), 0, "gen-data failed: {}", stderr(&out));
    root.join(run).join(format!("{tier}.ds"))
}

#[test]
fn gen_data_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "6", "42");
    assert!(ds.exists());
    assert!(ds.with_extension("ds.sha256").exists());
    let manifest =
        std::fs::read_to_string(dir.path().join("g").join("manifest.toml")).unwrap();
    assert!(manifest.contains("verb = \"gen-data\""));
    assert!(manifest.contains("medium.ds"));
    let snapshot =
        std::fs::read_to_string(dir.path().join("g").join("config.toml")).unwrap();
    assert!(snapshot.contains("tier = \"medium\""));
    assert!(snapshot.contains("n_trajectories = 6"));
}

#[test]
fn gen_data_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_tiny(dir.path(), "a", "medium", "5", "42");
    let b = gen_tiny(dir.path(), "b", "medium", "5", "42");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_tier_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-data", "--tier", "gold"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_out_path_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--tier", "medium", "--n-trajectories", "2",
            "--max-steps", "10", "--out", "/nonexistent-root/x.ds",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/nonexistent-root/x.ds"));
}

#[test]
fn train_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "5", "1");
    let mut args = vec!["train", "--data", ds.to_str().unwrap(), "--run", "t"];
    args.extend_from_slice(TINY);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains(
            "training config: variant quantum, lr 0.0001, weight decay 0.0001, \
             batch size 4, epochs 20, grad clip 1, seed 42"
        ),
        "resolved line missing in: {text}"
    );
}

#[test]
fn one_epoch_train_logs_one_epoch_record() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "5", "2");
    let mut args = vec![
        "train", "--data", ds.to_str().unwrap(), "--variant", "quantum",
        "--epochs", "1", "--run", "t",
    ];
    args.extend_from_slice(TINY);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let loss =
        std::fs::read_to_string(dir.path().join("t").join("loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines.len(), 2, "header plus exactly one epoch: {loss}");
    assert!(lines[0].starts_with("epoch,mean_loss"));
    assert!(lines[1].starts_with("0,"));
    assert!(dir.path().join("t").join("checkpoint.ckpt").exists());
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["train", "--data", "x.ds", "--variant", "classical"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["train", "--data", "no-such.ds"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no-such.ds"));
}

#[test]
fn poisoned_dataset_aborts_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "1", "3");
    // corrupt every state of the only trajectory so the first sampled
    // batch aborts; drop the sidecar so the checksum gate does not fire
    // first
    let text = std::fs::read_to_string(&ds).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for line in &mut lines {
        if let Some(rest) = line.strip_prefix("states ") {
            let n = rest.split(' ').count();
            *line = format!("states{}", " NaN".repeat(n));
            break;
        }
    }
    std::fs::write(&ds, lines.join("\n") + "\n").unwrap();
    std::fs::remove_file(ds.with_extension("ds.sha256")).unwrap();

    let mut args = vec![
        "train", "--data", ds.to_str().unwrap(), "--epochs", "1", "--run", "t",
    ];
    args.extend_from_slice(TINY);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("numeric abort"));
}

#[test]
fn eval_missing_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "3", "4");
    let out = run_in(
        dir.path(),
        &[
            "eval", "--checkpoint", "no-such.ckpt", "--data", ds.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_tiny(dir.path(), "g", "medium", "5", "5");
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        "d_model = 8\nn_layers = 1\nn_heads = 2\ncontext_len = 4\nd_ff = 16\n\
         t_max = 64\nbatch_size = 4\nepochs = 2\nseed = 7\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train", "--data", ds.to_str().unwrap(), "--config",
            cfg_path.to_str().unwrap(), "--epochs", "1", "--run", "t",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let snapshot =
        std::fs::read_to_string(dir.path().join("t").join("config.toml")).unwrap();
    // the flag wins over the file, the file over the default
    assert!(snapshot.contains("epochs = 1"));
    assert!(snapshot.contains("d_model = 8"));
    assert!(snapshot.contains("seed = 7"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "learnin_rate = 0.1\n").unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--tier", "medium", "--config", cfg_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learnin_rate"));
}

#[test]
fn snapshot_feeds_back_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = gen_tiny(dir.path(), "a", "medium", "4", "6");
    let snapshot = dir.path().join("a").join("config.toml");
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--config", snapshot.to_str().unwrap(), "--run", "b",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let second = dir.path().join("b").join("medium.ds");
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn run_root_flag_beats_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let flag_root = dir.path().join("flagged");
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--tier", "medium", "--n-trajectories", "2",
            "--max-steps", "10", "--run-root", flag_root.to_str().unwrap(),
            "--run", "g",
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(flag_root.join("g").join("medium.ds").exists());
    assert!(!dir.path().join("g").exists());
}

#[test]
fn ci_profile_shrinks_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-data", "--profile", "ci", "--max-steps", "10", "--run", "g",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("50 trajectories"));
    let snapshot =
        std::fs::read_to_string(dir.path().join("g").join("config.toml")).unwrap();
    assert!(snapshot.contains("profile = \"ci\""));
    assert!(snapshot.contains("d_model = 32"));
    assert!(snapshot.contains("epochs = 3"));
    assert!(snapshot.contains("episodes_per_target = 5"));
}

#[test]
fn verify_passes_and_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["verify"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("all 26 checks passed"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn verify_fault_injection_trips_the_attention_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["verify", "--inject-alpha", "0.3"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"));
    assert!(stderr(&out).contains("reduction attention alpha=0"));
}
