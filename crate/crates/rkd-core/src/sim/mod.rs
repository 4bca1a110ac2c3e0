//! The deterministic federated simulation: configuration, client state,
//! the round loop, experiment assembly, and reporting.

pub mod client;
pub mod config;
pub mod experiment;
pub mod report;
pub mod round;

pub use client::{local_train, ClientRole, ClientState, LocalTrainOutput};
pub use config::{AblationFlags, DatasetSource, DispatchStrategy, ExperimentConfig};
pub use experiment::{
    run_experiment, setup_experiment, ExperimentOutput, ExperimentSetup, RunOptions,
};
pub use report::{
    render_diagnostics_jsonl, render_reports_csv, write_atomic, write_diagnostics_jsonl,
    write_reports_csv, PhaseTimings, RoundReport,
};
pub use round::{evaluate, run_round, RoundEnv, RoundOutput};
