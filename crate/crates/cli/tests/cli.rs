//! End-to-end contract of the `distilforge` binary.

use std::path::Path;
use std::process::{Command, Output};

use distilforge_core::PeerNetwork;

const CONFIG: &str = r#"{
    "dataset": {"kind": "blobs", "num_classes": 3, "per_class": 15, "test_per_class": 5,
                "dim": 2, "spread": 0.5, "seed": 7},
    "net1": {"input_dim": 2, "hidden_dims": [8, 4], "num_classes": 3, "init_seed": 1},
    "net2": {"input_dim": 2, "hidden_dims": [6, 4], "num_classes": 3, "init_seed": 2},
    "train": {"stage1_epochs": 2, "stage2_epochs": 2, "batch_size": 16, "lr_milestones": [1]},
    "output_dir": "out",
    "repetitions": REPS
}"#;

fn write_config(
    dir: &Path,
    reps: usize,
    edit: impl FnOnce(String) -> String,
) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, edit(CONFIG.replace("REPS", &reps.to_string()))).unwrap();
    path
}

fn distilforge(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_distilforge"));
    cmd.args(args).env_remove("DISTILFORGE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Exactly one non-empty line on stderr, prefixed with the error class.
fn assert_single_error_line(out: &Output, class: &str) -> String {
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{class}]")), "{err}");
    lines[0].to_string()
}

#[test]
fn run_writes_metrics_and_four_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, |s| s);
    let out = distilforge(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let seed = dir.path().join("out/seed_0");
    let csv = std::fs::read_to_string(seed.join("metrics.csv")).unwrap();
    // Header plus one row per (epoch, net) in both stages.
    assert_eq!(csv.lines().count(), 1 + 2 * 2 + 2 * 2);
    for name in [
        "net1_stage1.json",
        "net2_stage1.json",
        "net1_stage2.json",
        "net2_stage2.json",
    ] {
        let net = PeerNetwork::load(&seed.join(name)).unwrap();
        assert_eq!(net.config().input_dim, 2);
    }
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn three_seeds_summarize_three_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 3, |s| s);
    let out = distilforge(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([0, 1, 2]));
    for net in ["net1", "net2"] {
        let values = summary[net]["values"].as_array().unwrap();
        assert_eq!(values.len(), 3);
        let mean = values.iter().map(|v| v.as_f64().unwrap()).sum::<f64>() / 3.0;
        assert!((summary[net]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!(summary[net]["std"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn negative_learning_rate_exits_1_naming_lr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, |s| {
        s.replace(r#""batch_size": 16"#, r#""batch_size": 16, "lr": -0.1"#)
    });
    let out = distilforge(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let line = assert_single_error_line(&out, "config");
    assert!(line.contains("lr"), "{line}");
}

#[test]
fn existing_outputs_need_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, |s| s);
    let cfg = cfg.to_str().unwrap();
    assert!(distilforge(&["run", cfg], &[]).status.success());
    let before = std::fs::read(dir.path().join("out/seed_0/metrics.csv")).unwrap();

    let again = distilforge(&["run", cfg], &[]);
    assert_eq!(again.status.code(), Some(1));
    assert!(assert_single_error_line(&again, "output").contains("--overwrite"));

    let forced = distilforge(&["run", cfg, "--overwrite"], &[]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(
        std::fs::read(dir.path().join("out/seed_0/metrics.csv")).unwrap(),
        before
    );
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, |s| s);
    let out = distilforge(
        &["run", cfg.to_str().unwrap()],
        &[("DISTILFORGE_SEED", "42")],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/seed_42/metrics.csv").exists());

    let bad = distilforge(
        &["run", cfg.to_str().unwrap()],
        &[("DISTILFORGE_SEED", "forty")],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(assert_single_error_line(&bad, "config").contains("DISTILFORGE_SEED"));
}

#[test]
fn divergence_exits_2_naming_the_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1, |s| {
        s.replace(r#""batch_size": 16"#, r#""batch_size": 16, "lr": 1e300"#)
    });
    let out = distilforge(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let line = assert_single_error_line(&out, "divergence");
    assert!(line.contains("epoch"), "{line}");
}

#[test]
fn missing_config_and_bad_arguments_fail_on_one_line() {
    let out = distilforge(&["run", "/nonexistent/config.json"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_single_error_line(&out, "config");

    let out = distilforge(&["train"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_single_error_line(&out, "usage");
}

#[test]
fn verify_passes_and_catches_a_corrupted_huber() {
    let ok = distilforge(&["verify"], &[]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let table = String::from_utf8_lossy(&ok.stdout).into_owned();
    assert!(
        table.lines().filter(|l| l.starts_with("PASS")).count() >= 10,
        "{table}"
    );

    let bad = distilforge(&["verify", "--inject-fault", "huber"], &[]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(assert_single_error_line(&bad, "verify").contains("huber"));
}

#[test]
fn ablate_writes_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 2, |s| s);
    let out = distilforge(&["ablate", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(
        table.lines().next().unwrap(),
        "variant,net,mean_top1,std_top1,seeds"
    );
    assert!(rows.iter().all(|r| r.ends_with(",2")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("ordering pass") || stdout.contains("ordering warn"),
        "{stdout}"
    );
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        distilforge_cli::ExperimentConfig::from_json(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
