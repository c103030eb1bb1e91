use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hamlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamlearn")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[model.arch]
hidden = 8

[collect]
trajectories = 2
steps = 20

[collect.lidar]
beams = 90
noise_sigma = 0.0

[train]
iterations = 30
lr = 1e-2
test_fraction = 0.5

[verify]
matching_states = 50
derivative_states = 20
gradient_params = 10
energy_duration = 0.2
so3_steps = 20

[paths]
dataset = "data"
out = "out"
"#;

fn run_ok(args: &[&str]) -> Output {
    let out = hamlearn(args);
    assert_eq!(code(&out), 0, "{}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn collect_train_track_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();

    let collected = run_ok(&["collect", "--config", cfg]);
    assert!(String::from_utf8_lossy(&collected.stdout).contains("trajectories 2"));
    assert!(dir.path().join("data/dataset.jsonl").is_file());
    assert!(dir.path().join("data/traj_000_truth.csv").is_file());

    let trained = run_ok(&["train", "--config", cfg, "--threads", "1"]);
    let stdout = String::from_utf8_lossy(&trained.stdout);
    assert!(stdout.contains("truth") && stdout.contains("learned"), "{stdout}");
    let loss = std::fs::read_to_string(dir.path().join("out/loss.csv")).unwrap();
    let rows: Vec<Vec<&str>> = loss.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 31);
    let first: f64 = rows[0][1].parse().unwrap();
    let last: f64 = rows[30][1].parse().unwrap();
    assert!(last / first < 0.1, "{first} -> {last}");
    assert!(dir.path().join("out/model.ckpt").is_file());
    assert!(dir.path().join("out/terms.csv").is_file());

    let track = write_config(
        dir.path(),
        "track.toml",
        r#"
extends = "small.toml"
[model]
source = "checkpoint"
[control]
starts = [[1.0, 1.0, 0.0]]
compare_nominal = true
[control.closed_loop]
duration = 5.0
[paths]
checkpoint = "out/model.ckpt"
out = "track"
"#,
    );
    run_ok(&["track", "--config", track.to_str().unwrap()]);
    let metrics = std::fs::read_to_string(dir.path().join("track/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.contains("learned,0,") && metrics.contains("nominal,0,"));
    let log = std::fs::read_to_string(dir.path().join("track/track_learned_0.csv")).unwrap();
    assert_eq!(log.lines().count(), 252);
}

#[test]
fn collect_is_reproducible_from_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["collect", "--config", cfg, "--seed", "9", "--out", a.to_str().unwrap()]);
    run_ok(&["collect", "--config", cfg, "--seed", "9", "--out", b.to_str().unwrap()]);
    for name in ["dataset.jsonl", "traj_000_scans.csv", "traj_001_truth.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    run_ok(&["collect", "--config", cfg, "--seed", "10", "--out", c.to_str().unwrap()]);
    assert_ne!(std::fs::read(a.join("dataset.jsonl")).unwrap(), std::fs::read(c.join("dataset.jsonl")).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write_config(dir.path(), "zero.toml", "[collect]\ntrajectories = 0\n");
    assert_eq!(code(&hamlearn(&["collect", "--config", zero.to_str().unwrap()])), 2);
    let unknown = write_config(dir.path(), "unknown.toml", "[train]\nlearning_rate = 0.1\n");
    assert_eq!(code(&hamlearn(&["verify", "--config", unknown.to_str().unwrap()])), 2);
    let no_data = write_config(dir.path(), "nodata.toml", "[paths]\ndataset = \"missing\"\nout = \"out\"\n");
    assert_eq!(code(&hamlearn(&["train", "--config", no_data.to_str().unwrap()])), 2);
    let no_ckpt = write_config(
        dir.path(),
        "nockpt.toml",
        "[model]\nsource = \"checkpoint\"\n[paths]\ncheckpoint = \"absent.ckpt\"\nout = \"out\"\n",
    );
    assert_eq!(code(&hamlearn(&["track", "--config", no_ckpt.to_str().unwrap()])), 2);
    assert_eq!(code(&hamlearn(&["verify", "--config", dir.path().join("nope.toml").to_str().unwrap()])), 2);
}

#[test]
fn verify_reports_and_track_enforces_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = run_ok(&["verify", "--config", cfg.to_str().unwrap()]);
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("matching_residual") && !report.contains("FAIL"), "{report}");
    assert!(dir.path().join("out/verify.csv").is_file());

    let strict = write_config(
        dir.path(),
        "strict.toml",
        r#"
extends = "small.toml"
[model]
source = "truth"
[control]
starts = [[1.0, 0.0, 0.0]]
rms_bound = 1e-6
[control.closed_loop]
duration = 2.0
"#,
    );
    assert_eq!(code(&hamlearn(&["track", "--config", strict.to_str().unwrap()])), 1);
}
