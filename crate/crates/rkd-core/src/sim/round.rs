//! One federated round: local training, aggregation with or without the
//! defense, evaluation, and model dispatch.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;

use crate::attacks::add_noise_exact_norm;
use crate::baselines::{coord_median_aggregate, fedavg, fedavg_weighted, rlr_aggregate, AggregatorKind};
use crate::data::{Dataset, PoisonedTestset, UnlabeledData};
use crate::defense::{
    classify_benign, cosine_scores, dynamic_min_cluster_size, hdbscan_1d, run_selection,
};
use crate::distill::{distill, DistillPlan};
use crate::error::{Error, Result};
use crate::nn::{MlpModel, ParamVector};
use crate::rng::stream;
use crate::sim::client::{local_train, ClientState, LocalTrainOutput};
use crate::sim::config::{DispatchStrategy, ExperimentConfig};
use crate::sim::report::{PhaseTimings, RoundReport};

/// Round-invariant context shared by every round of one experiment.
pub struct RoundEnv<'a> {
    pub unlabeled: &'a UnlabeledData,
    pub test: &'a Dataset,
    pub poisoned: &'a PoisonedTestset,
    /// Train clients on rayon worker threads. Client work is a pure
    /// function of (master_seed, round, client_id), so this cannot change
    /// any result, only wall time.
    pub parallel: bool,
}

pub struct RoundOutput {
    pub new_global: MlpModel,
    pub report: RoundReport,
}

/// Clean-test accuracy and attack success rate of one model.
pub fn evaluate(model: &MlpModel, test: &Dataset, poisoned: &PoisonedTestset) -> Result<(f64, f64)> {
    if test.n() == 0 {
        return Err(Error::EmptyInput("empty test set".into()));
    }
    if poisoned.dataset.n() == 0 {
        return Err(Error::EmptyInput("empty poisoned test set".into()));
    }
    let preds = model.predict(test.images())?;
    let correct = preds.iter().zip(test.labels()).filter(|(p, l)| p == l).count();
    let mta = correct as f64 / test.n() as f64;

    let preds = model.predict(poisoned.dataset.images())?;
    let hits = preds.iter().filter(|&&p| p == poisoned.target_label).count();
    let asr = hits as f64 / poisoned.dataset.n() as f64;
    Ok((mta, asr))
}

fn average_subset(
    params: &[ParamVector],
    sample_counts: &[f64],
    subset: &[usize],
    weighted: bool,
) -> Result<ParamVector> {
    let vecs: Vec<ParamVector> = subset.iter().map(|&i| params[i].clone()).collect();
    if weighted {
        let w: Vec<f64> = subset.iter().map(|&i| sample_counts[i]).collect();
        fedavg_weighted(&vecs, &w)
    } else {
        fedavg(&vecs)
    }
}

/// Runs round `round` in place: trains every client from the model it
/// currently holds, aggregates per the configured rule, evaluates the new
/// global, then overwrites each client's model with whatever the dispatch
/// strategy sends it. Client ids must equal their slice positions.
pub fn run_round(
    clients: &mut [ClientState],
    global: &MlpModel,
    cfg: &ExperimentConfig,
    env: &RoundEnv,
    round: usize,
) -> Result<RoundOutput> {
    let n = clients.len();
    if n == 0 {
        return Err(Error::EmptyInput("round with zero clients".into()));
    }
    if clients.iter().enumerate().any(|(i, c)| c.client_id != i) {
        return Err(Error::InvalidArgument(
            "client ids must match their positions".into(),
        ));
    }
    if cfg.aggregator.kind == AggregatorKind::Rkd && n < 2 {
        return Err(Error::InvalidArgument(
            "the clustering defense needs at least two clients".into(),
        ));
    }

    let t = Instant::now();
    let train = |c: &ClientState| {
        local_train(
            c,
            &c.model,
            &cfg.attack,
            cfg.local_epochs,
            cfg.local_lr,
            cfg.batch_size,
            cfg.master_seed,
            round,
        )
    };
    let outputs: Vec<LocalTrainOutput> = if env.parallel {
        clients.par_iter().map(train).collect::<Result<Vec<_>>>()?
    } else {
        clients.iter().map(train).collect::<Result<Vec<_>>>()?
    };
    let local_train_s = t.elapsed().as_secs_f64();

    for (c, o) in clients.iter_mut().zip(&outputs) {
        if let (Some(state), Some(trig)) = (c.attack.as_mut(), o.adapted_trigger.as_ref()) {
            state.adapted_trigger = Some(trig.clone());
        }
    }

    let ids: Vec<usize> = (0..n).collect();
    let params: Vec<ParamVector> = outputs.iter().map(|o| o.submitted.clone()).collect();
    let sample_counts: Vec<f64> = clients.iter().map(|c| c.data.n() as f64).collect();
    let global_params = global.flatten();

    let mut timings = PhaseTimings {
        local_train: local_train_s,
        ..PhaseTimings::default()
    };

    let mut benign_ids: Vec<usize> = ids.clone();
    let mut ensemble_ids: Vec<usize> = ids.clone();
    let mut q_used = 0usize;
    let mut fallback_all_benign = false;
    let mut zero_norm_clients = Vec::new();
    let mut scores_out = None;
    let mut cluster_labels = None;
    let mut cluster_means = None;
    let mut selection_threshold = None;
    let mut epoch_kl = Vec::new();

    let new_global = match cfg.aggregator.kind {
        AggregatorKind::Fedavg => {
            let t = Instant::now();
            let avg = average_subset(&params, &sample_counts, &ids, cfg.weighted_fedavg)?;
            timings.aggregate = t.elapsed().as_secs_f64();
            MlpModel::unflatten(&avg, global.layer_sizes())?
        }
        AggregatorKind::CoordMedian => {
            let t = Instant::now();
            let agg = coord_median_aggregate(&params)?;
            timings.aggregate = t.elapsed().as_secs_f64();
            MlpModel::unflatten(&agg, global.layer_sizes())?
        }
        AggregatorKind::Rlr => {
            let t = Instant::now();
            let updates: Vec<ParamVector> = params
                .iter()
                .map(|p| p.sub(&global_params))
                .collect::<Result<Vec<_>>>()?;
            let agg = rlr_aggregate(
                &updates,
                cfg.aggregator.rlr_threshold.expect("validated"),
                cfg.aggregator.server_lr.expect("validated"),
                &global_params,
            )?;
            timings.aggregate = t.elapsed().as_secs_f64();
            MlpModel::unflatten(&agg, global.layer_sizes())?
        }
        AggregatorKind::Rkd => {
            let t = Instant::now();
            q_used = cfg
                .q_override
                .unwrap_or_else(|| dynamic_min_cluster_size(n, round));
            if !cfg.ablation.no_clustering {
                let scores = if cfg.cosine_on_updates {
                    let updates: Vec<ParamVector> = params
                        .iter()
                        .map(|p| p.sub(&global_params))
                        .collect::<Result<Vec<_>>>()?;
                    let mean_update = fedavg(&updates)?;
                    cosine_scores(&ids, &updates, &mean_update)?
                } else {
                    cosine_scores(&ids, &params, &global_params)?
                };
                let labels = hdbscan_1d(&scores.scores, q_used)?;
                let outcome = classify_benign(&scores, &labels, q_used)?;
                benign_ids = outcome.benign_clients.iter().copied().collect();
                fallback_all_benign = outcome.fallback_all_benign;
                zero_norm_clients = scores.zero_norm_clients.clone();
                scores_out = Some(outcome.scores);
                cluster_labels = Some(outcome.labels);
                cluster_means = Some(outcome.cluster_means);
            }
            if cfg.ablation.no_median_selection {
                ensemble_ids = benign_ids.clone();
            } else {
                let benign_params: Vec<ParamVector> =
                    benign_ids.iter().map(|&i| params[i].clone()).collect();
                let selection = run_selection(&benign_ids, &benign_params, cfg.k_sigma)?;
                ensemble_ids = selection.selected.clone();
                selection_threshold = Some(selection.threshold);
            }
            timings.defense = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let avg = average_subset(&params, &sample_counts, &ensemble_ids, cfg.weighted_fedavg)?;
            timings.aggregate = t.elapsed().as_secs_f64();
            let init = MlpModel::unflatten(&avg, global.layer_sizes())?;

            if cfg.ablation.no_kd {
                init
            } else {
                let t = Instant::now();
                let members: Vec<MlpModel> = ensemble_ids
                    .iter()
                    .map(|&i| MlpModel::unflatten(&params[i], global.layer_sizes()))
                    .collect::<Result<Vec<_>>>()?;
                let plan = DistillPlan {
                    ensemble: &members,
                    unlabeled: env.unlabeled,
                    temperature: cfg.temperature,
                    epochs: cfg.kd_epochs,
                    kd_lr: cfg.kd_lr,
                    batch_size: cfg.batch_size,
                    swa_per_batch: cfg.swa_per_batch,
                    grad_scale_t_squared: cfg.kd_grad_scale_t_squared,
                };
                let seed = crate::rng::derive_seed(cfg.master_seed, "distill", round as u64);
                let result = distill(&plan, &init, seed)?;
                epoch_kl = result.epoch_kl;
                timings.distill = t.elapsed().as_secs_f64();
                result.model
            }
        }
    };

    let t = Instant::now();
    let (mta, asr) = evaluate(&new_global, env.test, env.poisoned)?;
    timings.evaluate = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let benign: BTreeSet<usize> = benign_ids.iter().copied().collect();
    let perturbed: Option<MlpModel> =
        if cfg.dispatch_strategy == DispatchStrategy::Perturbation && benign.len() < n {
            // One noise draw per round; every flagged client receives the
            // same perturbed model.
            let mut rng = stream(cfg.master_seed, "dispatch-noise", round as u64);
            let noisy = add_noise_exact_norm(&new_global.flatten(), cfg.noise_norm, &mut rng)?;
            Some(MlpModel::unflatten(&noisy, global.layer_sizes())?)
        } else {
            None
        };
    for (i, c) in clients.iter_mut().enumerate() {
        c.model = if benign.contains(&i) {
            new_global.clone()
        } else {
            match cfg.dispatch_strategy {
                DispatchStrategy::Exclusion => outputs[i].trained.clone(),
                DispatchStrategy::Perturbation => {
                    perturbed.clone().expect("perturbed model was built")
                }
            }
        };
    }
    timings.dispatch = t.elapsed().as_secs_f64();

    let report = RoundReport {
        round,
        mta,
        asr,
        benign_set: benign_ids,
        ensemble: ensemble_ids,
        q_used,
        fallback_all_benign,
        zero_norm_clients,
        scores: scores_out,
        cluster_labels,
        cluster_means,
        selection_threshold,
        epoch_kl,
        phase_seconds: timings,
    };

    Ok(RoundOutput { new_global, report })
}
