use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rkd_cli::commands::{
    cmd_bench_defense, cmd_eval, cmd_inspect_partition, cmd_run, resolve_output_dir,
};
use rkd_cli::summarize::{read_phase_means, read_report_csv, render_summary, RunSummary};
use rkd_cli::{parse_config, CliError, CliResult, LoadedConfig};

/// Deterministic federated learning simulator with a clustering and
/// distillation defense against backdoor attacks.
#[derive(Parser)]
#[command(name = "rkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and persist reports and checkpoints.
    Run {
        /// Experiment config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Where run directories go; defaults to $RKD_OUTPUT_DIR or ./runs.
        /// Files land in a per-config subdirectory named by config hash.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Train clients on worker threads (results are identical).
        #[arg(long)]
        parallel: bool,
        /// Config override as key.path=value; repeatable, applied in order.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Show the client shards, roles and holdout for a config.
    InspectPartition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a model checkpoint on a config's clean and triggered test sets.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file to load.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Summarize final-round metrics across runs, grouped by config hash.
    Summarize {
        /// One or more reports.csv files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also print mean per-phase seconds from sibling diagnostics.jsonl.
        #[arg(long)]
        timings: bool,
    },
    /// Time the defense stages on one round of real submissions.
    BenchDefense {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(config_path: &PathBuf, overrides: &[String]) -> CliResult<LoadedConfig> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let loaded = parse_config(&text, overrides)?;
    for line in &loaded.defaults_applied {
        eprintln!("default applied: {line}");
    }
    Ok(loaded)
}

fn real_main() -> CliResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output_dir,
            parallel,
            overrides,
        } => {
            let loaded = load(&config, &overrides)?;
            let dir = resolve_output_dir(output_dir, &loaded.config.config_hash());
            eprintln!("writing to {}", dir.display());
            print!("{}", cmd_run(&loaded.config, &dir, parallel)?);
        }
        Command::InspectPartition { config, overrides } => {
            let loaded = load(&config, &overrides)?;
            print!("{}", cmd_inspect_partition(&loaded.config)?);
        }
        Command::Eval {
            config,
            checkpoint,
            overrides,
        } => {
            let loaded = load(&config, &overrides)?;
            print!("{}", cmd_eval(&loaded.config, &checkpoint)?);
        }
        Command::Summarize { reports, timings } => {
            let runs: Vec<RunSummary> = reports
                .iter()
                .map(|p| read_report_csv(p))
                .collect::<CliResult<Vec<_>>>()?;
            let mut phase_tables = Vec::new();
            if timings {
                for p in &reports {
                    let diag = p.with_file_name("diagnostics.jsonl");
                    phase_tables.push((diag.clone(), read_phase_means(&diag)?));
                }
            }
            print!("{}", render_summary(&runs, &phase_tables));
        }
        Command::BenchDefense {
            config,
            iterations,
            overrides,
        } => {
            let loaded = load(&config, &overrides)?;
            print!("{}", cmd_bench_defense(&loaded.config, iterations)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
