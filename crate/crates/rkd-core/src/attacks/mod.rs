//! Client-side attacks: trigger poisoning of training data and
//! model poisoning of the trained parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{apply_trigger, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_loss, input_gradient, GradVector, MlpModel, ParamVector, Tensor};
use crate::rng::stream;

/// Which attack the malicious clients run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Every malicious client stamps the same trigger on part of its data.
    StaticTrigger,
    /// The trigger is dealt out in disjoint pieces, one per malicious client.
    Dba,
    /// Each malicious client re-optimizes the trigger against the model it
    /// received before poisoning.
    PgdTrigger,
    /// The trained update is amplified by `gamma` before submission.
    Scale,
    /// Signs of the most loss-relevant parameters are flipped.
    SignFlip,
    /// A fixed-norm random vector is added to the trained parameters.
    Additive,
}

impl AttackKind {
    /// Kinds whose clients poison training data even without an explicit
    /// trigger in the config (the dataset-default trigger fills in).
    pub fn is_data_poisoning(self) -> bool {
        matches!(
            self,
            AttackKind::StaticTrigger | AttackKind::Dba | AttackKind::PgdTrigger
        )
    }
}

fn default_poison_fraction() -> f64 {
    0.5
}

/// Attack parameters shared by every malicious client.
///
/// `kind` picks the mechanism; fields the mechanism does not read are
/// ignored. The exception is `trigger`: model-poisoning kinds (scale,
/// sign_flip, additive) also poison data when a trigger is configured
/// explicitly, so one run can plant a backdoor and amplify it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default)]
    pub trigger: Option<TriggerSpec>,
    /// Update amplification factor for `scale`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Fraction of parameters flipped by `sign_flip`, in (0,1].
    #[serde(default)]
    pub top_fraction: Option<f64>,
    /// Exact L2 norm of the `additive` perturbation.
    #[serde(default)]
    pub delta_norm: Option<f64>,
    #[serde(default)]
    pub pgd_steps: Option<usize>,
    #[serde(default)]
    pub pgd_step_size: Option<f64>,
    #[serde(default)]
    pub pgd_epsilon: Option<f64>,
    /// Fraction of each malicious client's samples that get the trigger.
    #[serde(default = "default_poison_fraction")]
    pub poison_fraction: f64,
    /// Scale the raw parameter vector instead of the update.
    #[serde(default)]
    pub scale_raw: bool,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        AttackConfig {
            kind,
            trigger: None,
            gamma: None,
            top_fraction: None,
            delta_norm: None,
            pgd_steps: None,
            pgd_step_size: None,
            pgd_epsilon: None,
            poison_fraction: default_poison_fraction(),
            scale_raw: false,
        }
    }

    /// Checks that every field the chosen kind reads is present and sane.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::config(
                "attack.poison_fraction",
                format!("must lie in [0,1], got {}", self.poison_fraction),
            ));
        }
        if let Some(t) = &self.trigger {
            t.validate()
                .map_err(|e| Error::config("attack.trigger", e.to_string()))?;
        }
        match self.kind {
            AttackKind::Scale => match self.gamma {
                Some(g) if g.is_finite() && g > 0.0 => {}
                Some(g) => {
                    return Err(Error::config(
                        "attack.gamma",
                        format!("must be positive and finite, got {g}"),
                    ))
                }
                None => return Err(Error::config("attack.gamma", "required for kind scale")),
            },
            AttackKind::SignFlip => match self.top_fraction {
                Some(f) if f > 0.0 && f <= 1.0 => {}
                Some(f) => {
                    return Err(Error::config(
                        "attack.top_fraction",
                        format!("must lie in (0,1], got {f}"),
                    ))
                }
                None => {
                    return Err(Error::config(
                        "attack.top_fraction",
                        "required for kind sign_flip",
                    ))
                }
            },
            AttackKind::Additive => match self.delta_norm {
                Some(d) if d.is_finite() && d > 0.0 => {}
                Some(d) => {
                    return Err(Error::config(
                        "attack.delta_norm",
                        format!("must be positive and finite, got {d}"),
                    ))
                }
                None => {
                    return Err(Error::config(
                        "attack.delta_norm",
                        "required for kind additive",
                    ))
                }
            },
            AttackKind::PgdTrigger => {
                match self.pgd_steps {
                    Some(s) if s >= 1 => {}
                    Some(_) => {
                        return Err(Error::config("attack.pgd_steps", "must be at least 1"))
                    }
                    None => {
                        return Err(Error::config(
                            "attack.pgd_steps",
                            "required for kind pgd_trigger",
                        ))
                    }
                }
                match self.pgd_step_size {
                    Some(s) if s.is_finite() && s >= 0.0 => {}
                    Some(s) => {
                        return Err(Error::config(
                            "attack.pgd_step_size",
                            format!("must be finite and non-negative, got {s}"),
                        ))
                    }
                    None => {
                        return Err(Error::config(
                            "attack.pgd_step_size",
                            "required for kind pgd_trigger",
                        ))
                    }
                }
                match self.pgd_epsilon {
                    Some(e) if (0.0..=1.0).contains(&e) => {}
                    Some(e) => {
                        return Err(Error::config(
                            "attack.pgd_epsilon",
                            format!("must lie in [0,1], got {e}"),
                        ))
                    }
                    None => {
                        return Err(Error::config(
                            "attack.pgd_epsilon",
                            "required for kind pgd_trigger",
                        ))
                    }
                }
            }
            AttackKind::StaticTrigger | AttackKind::Dba => {}
        }
        Ok(())
    }
}

/// Attack-side state a malicious client carries across rounds. The local
/// model itself lives with the simulator's per-client state.
#[derive(Clone, Debug)]
pub struct MaliciousClientState {
    pub client_id: usize,
    /// The piece of the shared trigger this client stamps (dba).
    pub sub_trigger: Option<TriggerSpec>,
    /// The trigger as adapted so far (pgd_trigger); starts as the full one.
    pub adapted_trigger: Option<TriggerSpec>,
}

impl MaliciousClientState {
    pub fn new(client_id: usize) -> Self {
        MaliciousClientState {
            client_id,
            sub_trigger: None,
            adapted_trigger: None,
        }
    }
}

/// Deals a contiguous row-major slice of the full patch to one of
/// `n_parts` colluding clients. Parts are disjoint, non-empty, and cover
/// the patch exactly.
pub fn dba_subtrigger(
    full: &TriggerSpec,
    n_parts: usize,
    part_index: usize,
) -> Result<TriggerSpec> {
    if full.active_cells.is_some() {
        return Err(Error::InvalidArgument(
            "cannot subdivide a trigger that is already a part".into(),
        ));
    }
    let cells = full.patch_cells();
    if n_parts == 0 || n_parts > cells {
        return Err(Error::InvalidArgument(format!(
            "{n_parts} parts for a {cells}-cell patch"
        )));
    }
    if part_index >= n_parts {
        return Err(Error::InvalidArgument(format!(
            "part {part_index} of {n_parts}"
        )));
    }
    let start = part_index * cells / n_parts;
    let end = (part_index + 1) * cells / n_parts;
    let mut part = full.clone();
    part.active_cells = if start == 0 && end == cells {
        None
    } else {
        Some(start..end)
    };
    Ok(part)
}

/// Moves `params` away from `reference` by `gamma`:
/// reference + gamma * (params - reference).
pub fn scale_update(
    params: &ParamVector,
    reference: &ParamVector,
    gamma: f32,
) -> Result<ParamVector> {
    if params.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params vs {} reference",
            params.len(),
            reference.len()
        )));
    }
    check_gamma(gamma)?;
    let values = params
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&p, &r)| r + gamma * (p - r))
        .collect();
    Ok(ParamVector::new(values))
}

/// Fidelity variant that scales the raw vector rather than the update.
pub fn scale_params_raw(params: &ParamVector, gamma: f32) -> Result<ParamVector> {
    check_gamma(gamma)?;
    Ok(params.scale(gamma))
}

fn check_gamma(gamma: f32) -> Result<()> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive and finite, got {gamma}"
        )));
    }
    Ok(())
}

/// Flips the sign of the ceil(top_fraction * P) parameters whose importance
/// -(dL/dw) * w is highest. Ties break on the lower parameter index.
pub fn sign_flip_attack(
    model: &MlpModel,
    loss_grads: &GradVector,
    top_fraction: f64,
) -> Result<ParamVector> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_fraction must lie in (0,1], got {top_fraction}"
        )));
    }
    let params = model.flatten();
    let p = params.len();
    if loss_grads.values.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients vs {} parameters",
            loss_grads.values.len(),
            p
        )));
    }
    let scores: Vec<f64> = loss_grads
        .values
        .iter()
        .zip(params.values())
        .map(|(&g, &w)| {
            let s = -(g as f64) * (w as f64);
            // Canonicalize -0.0 so zero scores are exact ties under total_cmp.
            if s == 0.0 {
                0.0
            } else {
                s
            }
        })
        .collect();
    let k = ((top_fraction * p as f64).ceil() as usize).min(p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = params.into_values();
    for &j in &order[..k] {
        out[j] = -out[j];
    }
    Ok(ParamVector::new(out))
}

/// Adds Gaussian noise whose realized f32 difference from `params` has L2
/// norm `norm`.
///
/// Adding a tiny vector to f32 parameters rounds every coordinate, which
/// drifts the realized norm by far more than the noise contract tolerates.
/// The coordinate with the finest representable spacing is therefore set
/// last, to whatever residual makes the total land on the target. With a
/// parameter below ~1e-2 in magnitude present (a bias in practice) the
/// realized norm lands within 1e-10 for norms up to ~1e-2; larger norms are
/// limited by the anchor's own f32 quantization, roughly norm * 1e-7.
pub fn add_noise_exact_norm(
    params: &ParamVector,
    norm: f64,
    rng: &mut impl Rng,
) -> Result<ParamVector> {
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise norm must be positive and finite, got {norm}"
        )));
    }
    if params.is_empty() {
        return Err(Error::EmptyInput("no parameters to perturb".into()));
    }
    let p = params.len();
    let g = params.values();
    let (dir, dir_norm) = loop {
        let d: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let ss: f64 = d.iter().map(|x| x * x).sum();
        if ss > 0.0 {
            break (d, ss.sqrt());
        }
    };
    let scale = norm / dir_norm;
    let anchor = (0..p)
        .min_by(|&a, &b| f32_spacing(g[a]).total_cmp(&f32_spacing(g[b])).then(a.cmp(&b)))
        .unwrap();
    let mut out: Vec<f32> = (0..p)
        .map(|j| {
            if j == anchor {
                g[j]
            } else {
                (g[j] as f64 + scale * dir[j]) as f32
            }
        })
        .collect();
    let realized: f64 = (0..p)
        .filter(|&j| j != anchor)
        .map(|j| {
            let d = out[j] as f64 - g[j] as f64;
            d * d
        })
        .sum();
    let residual = (norm * norm - realized).max(0.0).sqrt();
    out[anchor] = (g[anchor] as f64 + residual * dir[anchor].signum()) as f32;
    Ok(ParamVector::new(out))
}

/// Distance from |v| to the next representable f32 above it.
fn f32_spacing(v: f32) -> f64 {
    let a = v.abs();
    f32::from_bits(a.to_bits() + 1) as f64 - a as f64
}

/// Adds a seeded Gaussian vector rescaled to L2 norm `delta_norm`.
pub fn additive_perturbation(
    params: &ParamVector,
    delta_norm: f64,
    seed: u64,
) -> Result<ParamVector> {
    let mut rng = stream(seed, "perturb", 0);
    add_noise_exact_norm(params, delta_norm, &mut rng)
}

/// Outcome of trigger adaptation: the adapted trigger plus the loss toward
/// the target class before each step and after the last one (steps + 1
/// entries).
#[derive(Clone, Debug)]
pub struct PgdResult {
    pub trigger: TriggerSpec,
    pub losses: Vec<f64>,
}

/// Adapts the active patch values against `model` so triggered inputs pull
/// toward the trigger's target label: signed gradient steps of `step_size`
/// on each active cell, projected back into
/// [max(0, v0 - epsilon), min(1, v0 + epsilon)] around the starting value
/// v0 of that cell. Inactive cells and pixels outside the patch are never
/// touched.
pub fn pgd_trigger_optimize(
    model: &MlpModel,
    clean_batch: &Tensor,
    trigger: &TriggerSpec,
    steps: usize,
    step_size: f64,
    epsilon: f64,
) -> Result<PgdResult> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "trigger adaptation needs at least one step".into(),
        ));
    }
    if !(step_size.is_finite() && step_size >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be finite and non-negative, got {step_size}"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in [0,1], got {epsilon}"
        )));
    }
    if clean_batch.n_rows() == 0 {
        return Err(Error::EmptyInput("empty batch for trigger adaptation".into()));
    }
    if clean_batch.n_cols() != trigger.image_height * trigger.image_width {
        return Err(Error::ShapeMismatch(format!(
            "batch of {}-pixel rows vs a trigger declared for {}x{} images",
            clean_batch.n_cols(),
            trigger.image_height,
            trigger.image_width
        )));
    }
    if trigger.target_label >= model.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "target label {} out of range for {} outputs",
            trigger.target_label,
            model.output_dim()
        )));
    }
    let pix = trigger.active_cell_pixels();
    let v0 = trigger.values.clone();
    let labels = vec![trigger.target_label; clean_batch.n_rows()];
    let mut work = trigger.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let stamped = stamp_batch(clean_batch, &work)?;
        losses.push(cross_entropy_loss(model, &stamped, &labels)?);
        let grad = input_gradient(model, &stamped, work.target_label)?;
        for &(cell, idx) in &pix {
            // One shared patch value feeds every row, so its derivative is
            // the sum over rows.
            let total: f64 = (0..grad.n_rows()).map(|r| grad.row(r)[idx] as f64).sum();
            let dir = if total > 0.0 {
                1.0
            } else if total < 0.0 {
                -1.0
            } else {
                0.0
            };
            let lo = (v0[cell] as f64 - epsilon).max(0.0);
            let hi = (v0[cell] as f64 + epsilon).min(1.0);
            let moved = work.values[cell] as f64 - step_size * dir;
            work.values[cell] = moved.clamp(lo, hi) as f32;
        }
    }
    let stamped = stamp_batch(clean_batch, &work)?;
    losses.push(cross_entropy_loss(model, &stamped, &labels)?);
    Ok(PgdResult {
        trigger: work,
        losses,
    })
}

fn stamp_batch(batch: &Tensor, trigger: &TriggerSpec) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.n_rows() * batch.n_cols());
    for r in 0..batch.n_rows() {
        data.extend(apply_trigger(batch.row(r), trigger)?);
    }
    Tensor::new(batch.n_rows(), batch.n_cols(), data)
}
