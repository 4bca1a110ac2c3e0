//! Client state and the local training step, including malicious behavior.

use crate::attacks::{
    additive_perturbation, pgd_trigger_optimize, scale_params_raw, scale_update,
    sign_flip_attack, AttackConfig, AttackKind, MaliciousClientState,
};
use crate::data::{poison_client_data, Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_backward, sgd_step, MlpModel, ParamVector};
use crate::rng::{derive_seed, shuffled_indices, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientRole {
    Benign,
    Malicious,
}

/// One simulated client: its shard, its role, and the model it currently
/// holds (whatever the server dispatched to it last round).
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub role: ClientRole,
    pub data: Dataset,
    pub model: MlpModel,
    pub attack: Option<MaliciousClientState>,
}

/// What one client hands back after a round of local work.
#[derive(Clone, Debug)]
pub struct LocalTrainOutput {
    /// The parameter vector submitted to the server, after any model
    /// manipulation the client applies.
    pub submitted: ParamVector,
    /// The honestly trained model, before manipulation. Under exclusion
    /// dispatch a flagged client keeps training from this, not from its
    /// own sabotage vector.
    pub trained: MlpModel,
    /// Present when the client adapted its trigger this round.
    pub adapted_trigger: Option<TriggerSpec>,
}

/// Seed scope for one (round, client) pair. Rounds stay below 2^32 at desk
/// scale, so the packing cannot collide.
fn round_client_index(round: usize, client_id: usize) -> u64 {
    ((round as u64) << 32) | client_id as u64
}

/// The trigger this client stamps into its training data this round, if
/// any, plus the adapted trigger to carry into the next round.
fn poisoning_trigger(
    state: &ClientState,
    received: &MlpModel,
    attack: &AttackConfig,
) -> Result<(Option<TriggerSpec>, Option<TriggerSpec>)> {
    let geometry = state.data.square_geometry();
    match attack.kind {
        AttackKind::StaticTrigger => {
            let t = match &attack.trigger {
                Some(t) => t.clone(),
                None => TriggerSpec::default_for(geometry.0, geometry.1)?,
            };
            Ok((Some(t), None))
        }
        AttackKind::Dba => {
            let part = state
                .attack
                .as_ref()
                .and_then(|a| a.sub_trigger.clone())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "client {} runs the distributed attack but has no sub-trigger",
                        state.client_id
                    ))
                })?;
            Ok((Some(part), None))
        }
        AttackKind::PgdTrigger => {
            let base = match state.attack.as_ref().and_then(|a| a.adapted_trigger.clone()) {
                Some(t) => t,
                None => match &attack.trigger {
                    Some(t) => t.clone(),
                    None => TriggerSpec::default_for(geometry.0, geometry.1)?,
                },
            };
            let out = pgd_trigger_optimize(
                received,
                state.data.images(),
                &base,
                attack.pgd_steps.expect("validated"),
                attack.pgd_step_size.expect("validated"),
                attack.pgd_epsilon.expect("validated"),
            )?;
            Ok((Some(out.trigger.clone()), Some(out.trigger)))
        }
        // Model manipulation attacks poison data only when a trigger is
        // configured explicitly; on their own they leave the shard clean.
        AttackKind::Scale | AttackKind::SignFlip | AttackKind::Additive => {
            Ok((attack.trigger.clone(), None))
        }
    }
}

/// One round of local work: optional data poisoning, `epochs` passes of
/// mini-batch SGD from the received model, then the role-specific model
/// manipulation. With zero epochs the honest result is the received model
/// itself, bit for bit.
///
/// All randomness is a function of (master_seed, round, client_id), so the
/// call is pure and safe to run for many clients in parallel. The data
/// poisoning row choice is derived from the client id alone, keeping each
/// client's poisoned subset fixed across rounds.
pub fn local_train(
    state: &ClientState,
    received: &MlpModel,
    attack: &AttackConfig,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    master_seed: u64,
    round: usize,
) -> Result<LocalTrainOutput> {
    if state.data.n() == 0 {
        return Err(Error::EmptyInput(format!(
            "client {} has no training samples",
            state.client_id
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }

    let mut adapted_trigger = None;
    let poisoned: Option<Dataset> = if state.role == ClientRole::Malicious {
        let (trigger, adapted) = poisoning_trigger(state, received, attack)?;
        adapted_trigger = adapted;
        match trigger {
            Some(t) => Some(poison_client_data(
                &state.data,
                &t,
                attack.poison_fraction,
                derive_seed(master_seed, "poison-data", state.client_id as u64),
            )?),
            None => None,
        }
    } else {
        None
    };
    let data = poisoned.as_ref().unwrap_or(&state.data);

    let train_seed = derive_seed(
        master_seed,
        "local-train",
        round_client_index(round, state.client_id),
    );
    let mut model = received.clone();
    for epoch in 0..epochs {
        let mut rng = stream(train_seed, "epoch", epoch as u64);
        let order = shuffled_indices(data.n(), &mut rng);
        for chunk in order.chunks(batch_size) {
            let images = data.images().gather_rows(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let grads = cross_entropy_backward(&model, &images, &labels)?;
            model = sgd_step(&model, &grads, lr)?;
        }
    }

    let submitted = if state.role == ClientRole::Benign {
        model.flatten()
    } else {
        match attack.kind {
            AttackKind::StaticTrigger | AttackKind::Dba | AttackKind::PgdTrigger => model.flatten(),
            AttackKind::Scale => {
                let gamma = attack.gamma.expect("validated") as f32;
                if attack.scale_raw {
                    scale_params_raw(&model.flatten(), gamma)?
                } else {
                    scale_update(&model.flatten(), &received.flatten(), gamma)?
                }
            }
            AttackKind::SignFlip => {
                let grads = cross_entropy_backward(&model, data.images(), data.labels())?;
                sign_flip_attack(&model, &grads, attack.top_fraction.expect("validated"))?
            }
            AttackKind::Additive => additive_perturbation(
                &model.flatten(),
                attack.delta_norm.expect("validated"),
                derive_seed(
                    master_seed,
                    "additive-noise",
                    round_client_index(round, state.client_id),
                ),
            )?,
        }
    };

    Ok(LocalTrainOutput {
        submitted,
        trained: model,
        adapted_trigger,
    })
}
