//! End-to-end checks of the `rkd` binary: exit codes, output files, and
//! determinism across reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
n_clients = 4
rounds = 2
local_epochs = 1
batch_size = 16
kd_epochs = 1
master_seed = 17

[dataset]
kind = "synthetic"
n_per_class = 30
num_classes = 3
dim = 9
spread = 0.1
test_n_per_class = 10
"#;

fn rkd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkd"))
        .args(args)
        .current_dir(dir)
        .env_remove("RKD_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_produces_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = rkd(&["run", "--config", &cfg, "--output-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("run complete: 2 rounds"), "{stdout}");

    // Defaults the config file omitted are echoed to stderr.
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("default applied: k_sigma = 1.0"), "{stderr}");

    // One run directory, named by config hash, holding the artifacts.
    let entries: Vec<_> = fs::read_dir(dir.path().join("out")).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let run_dir = entries[0].as_ref().unwrap().path();
    for file in ["reports.csv", "diagnostics.jsonl", "final_model.ckpt", "resolved_config.toml"] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let csv = fs::read_to_string(run_dir.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "hash comment, header, two rounds");
}

#[test]
fn reruns_are_byte_identical_and_parallel_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(rkd(&["run", "--config", &cfg, "--output-dir", "a"], dir.path()).status.success());
    assert!(rkd(&["run", "--config", &cfg, "--output-dir", "b"], dir.path()).status.success());
    assert!(rkd(
        &["run", "--config", &cfg, "--output-dir", "c", "--parallel"],
        dir.path()
    )
    .status
    .success());

    let read = |base: &str| {
        let run_dir = fs::read_dir(dir.path().join(base))
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        fs::read(run_dir.join("reports.csv")).unwrap()
    };
    let a = read("a");
    assert_eq!(a, read("b"));
    assert_eq!(a, read("c"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    // Constraint violation via override.
    let out = rkd(
        &["run", "--config", &cfg, "--set", "malicious_fraction=1.5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("malicious_fraction"), "{stderr}");

    // Missing config file.
    let out = rkd(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // Unknown key in the file.
    fs::write(dir.path().join("bad.toml"), format!("typo_field = 1\n{CONFIG}")).unwrap();
    let out = rkd(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_field"));
}

#[test]
fn runtime_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    // Valid config, but the checkpoint to evaluate does not exist.
    let out = rkd(
        &["eval", "--config", &cfg, "--checkpoint", "missing.ckpt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn env_var_sets_the_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_rkd"))
        .args(["run", "--config", &cfg])
        .current_dir(dir.path())
        .env("RKD_OUTPUT_DIR", dir.path().join("from_env"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("from_env").is_dir());
}

#[test]
fn summarize_groups_runs_of_one_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(rkd(&["run", "--config", &cfg, "--output-dir", "s"], dir.path()).status.success());
    assert!(rkd(
        &["run", "--config", &cfg, "--output-dir", "s", "--set", "master_seed=18"],
        dir.path()
    )
    .status
    .success());

    let mut csvs: Vec<String> = fs::read_dir(dir.path().join("s"))
        .unwrap()
        .map(|e| {
            e.unwrap()
                .path()
                .join("reports.csv")
                .to_str()
                .unwrap()
                .to_string()
        })
        .collect();
    csvs.sort();
    assert_eq!(csvs.len(), 2, "two seeds, two run directories");

    let mut args = vec!["summarize", "--timings"];
    args.extend(csvs.iter().map(String::as_str));
    let out = rkd(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // Different seeds hash differently, so two groups of one run each.
    assert_eq!(stdout.matches("config ").count(), 2, "{stdout}");
    assert!(stdout.contains("±"), "{stdout}");
    assert!(stdout.contains("mean phase seconds"), "{stdout}");
    assert!(stdout.contains("local_train"), "{stdout}");
}

#[test]
fn inspect_and_bench_run_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = rkd(
        &["inspect-partition", "--config", &cfg, "--set", "malicious_fraction=0.5"],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("malicious"), "{stdout}");

    let out = rkd(
        &["bench-defense", "--config", &cfg, "--iterations", "2"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("hdbscan"));
}

#[test]
fn eval_matches_the_final_report_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(rkd(&["run", "--config", &cfg, "--output-dir", "e"], dir.path()).status.success());
    let run_dir = fs::read_dir(dir.path().join("e"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();

    let out = rkd(
        &[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            run_dir.join("final_model.ckpt").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);

    let csv = fs::read_to_string(run_dir.join("reports.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert!(stdout.contains(&format!("mta {}", fields[1])), "{stdout} vs {last}");
    assert!(stdout.contains(&format!("asr {}", fields[2])), "{stdout} vs {last}");
}
