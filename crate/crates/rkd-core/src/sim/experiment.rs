//! Experiment assembly and the multi-round driver.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{dba_subtrigger, AttackKind, MaliciousClientState};
use crate::data::{
    build_poisoned_testset, dirichlet_partition, holdout_distillation_set, load_idx, synth_blobs,
    Dataset, PoisonedTestset, TriggerSpec, UnlabeledData,
};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, save_checkpoint, MlpModel};
use crate::rng::derive_seed;
use crate::sim::client::{ClientRole, ClientState};
use crate::sim::config::{DatasetSource, ExperimentConfig};
use crate::sim::report::{write_atomic, write_diagnostics_jsonl, write_reports_csv, RoundReport};
use crate::sim::round::{run_round, RoundEnv};

/// Execution choices that do not affect results, only where they go and
/// how fast they arrive.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Train clients on rayon worker threads.
    pub parallel: bool,
    /// When set, reports and checkpoints are persisted here after every
    /// round (the directory is created if missing).
    pub output_dir: Option<PathBuf>,
}

pub struct ExperimentOutput {
    pub reports: Vec<RoundReport>,
    pub final_model: MlpModel,
    pub config_hash: String,
}

/// Everything `run_experiment` builds before round zero.
pub struct ExperimentSetup {
    pub clients: Vec<ClientState>,
    pub global: MlpModel,
    pub unlabeled: UnlabeledData,
    pub test: Dataset,
    pub poisoned: PoisonedTestset,
    /// The full trigger evaluation stamps, identical for every run of the
    /// same config: configured trigger or the 3x3 default.
    pub eval_trigger: TriggerSpec,
}

fn load_dataset_pair(source: &DatasetSource, master_seed: u64) -> Result<(Dataset, Dataset)> {
    match source {
        DatasetSource::Synthetic {
            n_per_class,
            num_classes,
            dim,
            spread,
            test_n_per_class,
        } => {
            let train = synth_blobs(
                *n_per_class,
                *num_classes,
                *dim,
                *spread,
                derive_seed(master_seed, "data-train", 0),
            )?;
            let test = synth_blobs(
                *test_n_per_class,
                *num_classes,
                *dim,
                *spread,
                derive_seed(master_seed, "data-test", 0),
            )?;
            Ok((train, test))
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(&fs::read(train_images)?, &fs::read(train_labels)?)?;
            let test = load_idx(&fs::read(test_images)?, &fs::read(test_labels)?)?;
            if train.dim() != test.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "train images have {} pixels, test images {}",
                    train.dim(),
                    test.dim()
                )));
            }
            Ok((train, test))
        }
    }
}

/// Builds the datasets, the distillation holdout, the client shards, the
/// initial global model and the poisoned evaluation set.
///
/// The holdout is split off before partitioning regardless of aggregator,
/// so client shards are identical across aggregator choices under the same
/// seed. Malicious roles go to the lowest `floor(fraction * n)` client ids.
/// Evaluation always stamps the full, unadapted trigger; distributed
/// attackers stamp only their assigned slice during training.
pub fn setup_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let (train, test) = load_dataset_pair(&cfg.dataset, cfg.master_seed)?;
    if train.num_classes() != test.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} classes, test {}",
            train.num_classes(),
            test.num_classes()
        )));
    }

    let (height, width) = test.square_geometry();
    let eval_trigger = match &cfg.attack.trigger {
        Some(t) => t.clone(),
        None => TriggerSpec::default_for(height, width)?,
    };
    let poisoned = build_poisoned_testset(&test, &eval_trigger)?;

    let (unlabeled, pool) = holdout_distillation_set(
        &train,
        cfg.distill_fraction,
        derive_seed(cfg.master_seed, "holdout", 0),
    )?;
    let plan = dirichlet_partition(
        &pool,
        cfg.n_clients,
        cfg.alpha,
        derive_seed(cfg.master_seed, "partition", 0),
    )?;

    let layer_sizes: Vec<usize> = std::iter::once(train.dim())
        .chain(cfg.hidden_layers.iter().copied())
        .chain(std::iter::once(train.num_classes()))
        .collect();
    let global = init_mlp(&layer_sizes, derive_seed(cfg.master_seed, "global-init", 0))?;

    let n_malicious = (cfg.malicious_fraction * cfg.n_clients as f64).floor() as usize;
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for (i, indices) in plan.assignments.iter().enumerate() {
        let malicious = i < n_malicious;
        let attack_state = if malicious {
            let mut state = MaliciousClientState::new(i);
            if cfg.attack.kind == AttackKind::Dba {
                state.sub_trigger = Some(dba_subtrigger(&eval_trigger, n_malicious, i)?);
            }
            Some(state)
        } else {
            None
        };
        clients.push(ClientState {
            client_id: i,
            role: if malicious {
                ClientRole::Malicious
            } else {
                ClientRole::Benign
            },
            data: pool.subset(indices)?,
            model: global.clone(),
            attack: attack_state,
        });
    }

    Ok(ExperimentSetup {
        clients,
        global,
        unlabeled,
        test,
        poisoned,
        eval_trigger,
    })
}

fn save_model_atomic(model: &MlpModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    save_checkpoint(model, &mut bytes)?;
    write_atomic(path, &bytes)
}

/// Runs the configured number of rounds and returns every round report
/// plus the final global model. With an output directory set, persists
/// `reports.csv`, `diagnostics.jsonl` and a checkpoint after each round,
/// so an interrupted run leaves the completed rounds on disk.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let setup = setup_experiment(cfg)?;
    let ExperimentSetup {
        mut clients,
        mut global,
        unlabeled,
        test,
        poisoned,
        ..
    } = setup;

    let config_hash = cfg.config_hash();
    if let Some(dir) = &opts.output_dir {
        fs::create_dir_all(dir)?;
    }

    let env = RoundEnv {
        unlabeled: &unlabeled,
        test: &test,
        poisoned: &poisoned,
        parallel: opts.parallel,
    };

    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let out = run_round(&mut clients, &global, cfg, &env, round)?;
        global = out.new_global;
        reports.push(out.report);

        if let Some(dir) = &opts.output_dir {
            write_reports_csv(&dir.join("reports.csv"), &reports, &config_hash)?;
            write_diagnostics_jsonl(&dir.join("diagnostics.jsonl"), &reports)?;
            save_model_atomic(&global, &dir.join(format!("round_{round:04}.ckpt")))?;
        }
    }

    if let Some(dir) = &opts.output_dir {
        save_model_atomic(&global, &dir.join("final_model.ckpt"))?;
    }

    Ok(ExperimentOutput {
        reports,
        final_model: global,
        config_hash,
    })
}
