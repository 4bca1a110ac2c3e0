//! Subcommand implementations. Each returns what it would print to
//! stdout, so tests can check output without spawning the binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rkd_core::defense::{
    classify_benign, cosine_scores, dynamic_min_cluster_size, hdbscan_1d, run_selection,
};
use rkd_core::nn::{load_checkpoint, ParamVector};
use rkd_core::sim::{
    evaluate, local_train, run_experiment, setup_experiment, write_atomic, ClientRole,
    ExperimentConfig, RunOptions,
};

use crate::config_load::render_resolved;
use crate::error::{CliError, CliResult};

/// Flag value, then the environment, then `runs/` in the working
/// directory. Every run writes into a subdirectory named by config hash.
pub fn resolve_output_dir(flag: Option<PathBuf>, hash: &str) -> PathBuf {
    let base = flag
        .or_else(|| std::env::var_os("RKD_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    base.join(hash)
}

/// Runs the experiment, persisting reports, checkpoints and the resolved
/// config snapshot under `dir`.
pub fn cmd_run(config: &ExperimentConfig, dir: &Path, parallel: bool) -> CliResult<String> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let snapshot = render_resolved(config)?;
    write_atomic(&dir.join("resolved_config.toml"), snapshot.as_bytes())
        .map_err(CliError::from)?;

    let opts = RunOptions {
        parallel,
        output_dir: Some(dir.to_path_buf()),
    };
    let out = run_experiment(config, &opts)?;
    let last = out.reports.last().expect("at least one round");
    Ok(format!(
        "run complete: {} rounds, final mta {:.6}, final asr {:.6}\nreports: {}\n",
        out.reports.len(),
        last.mta,
        last.asr,
        dir.join("reports.csv").display()
    ))
}

/// Builds an experiment and describes the data split without training.
pub fn cmd_inspect_partition(config: &ExperimentConfig) -> CliResult<String> {
    let setup = setup_experiment(config)?;
    let mut out = String::new();
    writeln!(out, "config {}", config.config_hash()).unwrap();
    writeln!(
        out,
        "distillation holdout: {} samples ({} kept for clients)",
        setup.unlabeled.n(),
        setup.clients.iter().map(|c| c.data.n()).sum::<usize>()
    )
    .unwrap();
    writeln!(
        out,
        "model layers: {:?}, {} parameters",
        setup.global.layer_sizes(),
        setup.global.param_count()
    )
    .unwrap();
    for c in &setup.clients {
        let role = match c.role {
            ClientRole::Malicious => "malicious",
            ClientRole::Benign => "benign",
        };
        writeln!(
            out,
            "client {:>3} [{role:>9}]: {:>5} samples, class counts {:?}",
            c.client_id,
            c.data.n(),
            c.data.class_counts()
        )
        .unwrap();
    }
    Ok(out)
}

/// Loads a checkpoint and scores it against the config's test sets.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path) -> CliResult<String> {
    let setup = setup_experiment(config)?;
    let mut file = fs::File::open(checkpoint)
        .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", checkpoint.display())))?;
    let model = load_checkpoint(&mut file)?;
    let (mta, asr) = evaluate(&model, &setup.test, &setup.poisoned)?;
    Ok(format!("mta {mta:.6}\nasr {asr:.6}\n"))
}

/// Trains one round's submissions, then times each defense stage over
/// `iterations` repetitions.
pub fn cmd_bench_defense(config: &ExperimentConfig, iterations: usize) -> CliResult<String> {
    if iterations == 0 {
        return Err(CliError::Config("iterations must be at least 1".into()));
    }
    let setup = setup_experiment(config)?;
    let params: Vec<ParamVector> = setup
        .clients
        .iter()
        .map(|c| {
            local_train(
                c,
                &c.model,
                &config.attack,
                config.local_epochs,
                config.local_lr,
                config.batch_size,
                config.master_seed,
                0,
            )
            .map(|o| o.submitted)
        })
        .collect::<rkd_core::Result<Vec<_>>>()?;
    let ids: Vec<usize> = (0..params.len()).collect();
    let global = setup.global.flatten();
    let q = config
        .q_override
        .unwrap_or_else(|| dynamic_min_cluster_size(params.len(), 0));

    let mut score_s = 0.0;
    let mut cluster_s = 0.0;
    let mut classify_s = 0.0;
    let mut select_s = 0.0;
    for _ in 0..iterations {
        let t = Instant::now();
        let scores = cosine_scores(&ids, &params, &global)?;
        score_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let labels = hdbscan_1d(&scores.scores, q)?;
        cluster_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let outcome = classify_benign(&scores, &labels, q)?;
        classify_s += t.elapsed().as_secs_f64();

        let benign: Vec<usize> = outcome.benign_clients.iter().copied().collect();
        let benign_params: Vec<ParamVector> =
            benign.iter().map(|&i| params[i].clone()).collect();
        let t = Instant::now();
        run_selection(&benign, &benign_params, config.k_sigma)?;
        select_s += t.elapsed().as_secs_f64();
    }

    let k = iterations as f64;
    let mut out = String::new();
    writeln!(
        out,
        "defense stage timing: {} clients, {} parameters, mean of {iterations} iterations",
        params.len(),
        global.len()
    )
    .unwrap();
    writeln!(out, "  cosine_scores {:>12.6} ms", 1e3 * score_s / k).unwrap();
    writeln!(out, "  hdbscan       {:>12.6} ms", 1e3 * cluster_s / k).unwrap();
    writeln!(out, "  classify      {:>12.6} ms", 1e3 * classify_s / k).unwrap();
    writeln!(out, "  selection     {:>12.6} ms", 1e3 * select_s / k).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_load::parse_config;

    const CONFIG: &str = r#"
n_clients = 4
rounds = 2
local_epochs = 1
batch_size = 16
kd_epochs = 1
master_seed = 3

[dataset]
kind = "synthetic"
n_per_class = 30
num_classes = 3
dim = 9
spread = 0.1
test_n_per_class = 10
"#;

    fn config() -> ExperimentConfig {
        parse_config(CONFIG, &[]).unwrap().config
    }

    #[test]
    fn run_writes_reports_snapshot_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_run(&config(), dir.path(), false).unwrap();
        assert!(out.contains("run complete: 2 rounds"), "{out}");
        assert!(dir.path().join("reports.csv").exists());
        assert!(dir.path().join("diagnostics.jsonl").exists());
        assert!(dir.path().join("final_model.ckpt").exists());

        let snapshot = fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
        let reparsed = parse_config(&snapshot, &[]).unwrap().config;
        assert_eq!(reparsed, config());
    }

    #[test]
    fn eval_scores_a_written_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        cmd_run(&config(), dir.path(), false).unwrap();
        let out = cmd_eval(&config(), &dir.path().join("final_model.ckpt")).unwrap();
        assert!(out.starts_with("mta "), "{out}");
        assert!(out.contains("\nasr "), "{out}");
    }

    #[test]
    fn inspect_partition_lists_every_client() {
        let out = cmd_inspect_partition(&config()).unwrap();
        assert!(out.contains("client   0"), "{out}");
        assert!(out.contains("client   3"), "{out}");
        assert!(out.contains("distillation holdout: 14 samples"), "{out}");
    }

    #[test]
    fn bench_defense_reports_all_four_stages() {
        let out = cmd_bench_defense(&config(), 2).unwrap();
        for stage in ["cosine_scores", "hdbscan", "classify", "selection"] {
            assert!(out.contains(stage), "{out}");
        }
    }

    #[test]
    fn output_dir_resolution_prefers_flag_over_default() {
        let dir = resolve_output_dir(Some(PathBuf::from("/tmp/x")), "abc");
        assert_eq!(dir, PathBuf::from("/tmp/x/abc"));
        // With no flag the base is the environment or ./runs; both end in
        // the hash either way.
        let dir = resolve_output_dir(None, "abc");
        assert!(dir.ends_with("abc"));
    }
}
