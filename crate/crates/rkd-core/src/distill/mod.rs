//! Knowledge distillation from a model ensemble into a single student:
//! averaged teacher logits, temperature-softened pseudo-labels, KL-loss
//! training, and a running weight average over the training trajectory.

use crate::data::UnlabeledData;
use crate::error::{Error, Result};
use crate::nn::{
    kl_divergence_backward, sgd_step, softmax_temperature, MlpModel, ParamVector, Tensor,
};
use crate::rng::{shuffled_indices, stream};

/// Everything one distillation round needs besides the student itself.
#[derive(Clone, Debug)]
pub struct DistillPlan<'a> {
    pub ensemble: &'a [MlpModel],
    pub unlabeled: &'a UnlabeledData,
    pub temperature: f32,
    pub epochs: usize,
    pub kd_lr: f32,
    pub batch_size: usize,
    /// Fold the student into the running average after every mini-batch
    /// instead of once per epoch.
    pub swa_per_batch: bool,
    /// Multiply the distillation gradient by temperature squared, the usual
    /// correction for the 1/T in the softened softmax.
    pub grad_scale_t_squared: bool,
}

impl DistillPlan<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble.is_empty() {
            return Err(Error::EmptyInput("distillation needs an ensemble".into()));
        }
        let arch = self.ensemble[0].layer_sizes();
        for (i, m) in self.ensemble.iter().enumerate() {
            if m.layer_sizes() != arch {
                return Err(Error::ShapeMismatch(format!(
                    "ensemble member {i} has layers {:?}, expected {arch:?}",
                    m.layer_sizes()
                )));
            }
        }
        if self.unlabeled.n() == 0 {
            return Err(Error::EmptyInput("no distillation data".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "distillation needs at least one epoch".into(),
            ));
        }
        if !(self.kd_lr.is_finite() && self.kd_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.kd_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Arithmetic mean of the member logits, accumulated in f64.
pub fn ensemble_logits(ensemble: &[MlpModel], batch: &Tensor) -> Result<Tensor> {
    if ensemble.is_empty() {
        return Err(Error::EmptyInput("no ensemble members".into()));
    }
    let arch = ensemble[0].layer_sizes();
    let n = batch.n_rows();
    let classes = ensemble[0].output_dim();
    let mut sums = vec![0.0f64; n * classes];
    for (i, m) in ensemble.iter().enumerate() {
        if m.layer_sizes() != arch {
            return Err(Error::ShapeMismatch(format!(
                "ensemble member {i} has layers {:?}, expected {arch:?}",
                m.layer_sizes()
            )));
        }
        let logits = m.forward(batch)?;
        for (s, &v) in sums.iter_mut().zip(logits.data()) {
            *s += v as f64;
        }
    }
    let scale = 1.0 / ensemble.len() as f64;
    Tensor::new(n, classes, sums.iter().map(|&s| (s * scale) as f32).collect())
}

/// Temperature-softened probabilities of the teacher logits.
pub fn pseudo_labels(logits: &Tensor, temperature: f32) -> Result<Tensor> {
    softmax_temperature(logits, temperature)
}

/// Running mean of parameter snapshots, kept in f64 so folding error stays
/// far below the 1e-6 contract.
#[derive(Clone, Debug)]
pub struct SwaState {
    averaged: Vec<f64>,
    n_updates: usize,
}

impl SwaState {
    /// Starts the average at one snapshot.
    pub fn new(first: &ParamVector) -> SwaState {
        SwaState {
            averaged: first.values().iter().map(|&v| v as f64).collect(),
            n_updates: 1,
        }
    }

    pub fn n_updates(&self) -> usize {
        self.n_updates
    }

    pub fn averaged_params(&self) -> ParamVector {
        ParamVector::new(self.averaged.iter().map(|&v| v as f32).collect())
    }
}

/// One running-mean step: (n * averaged + current) / (n + 1).
pub fn swa_fold(state: &SwaState, current: &ParamVector) -> Result<SwaState> {
    if current.len() != state.averaged.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params folded into an average of {}",
            current.len(),
            state.averaged.len()
        )));
    }
    let n = state.n_updates as f64;
    let averaged = state
        .averaged
        .iter()
        .zip(current.values())
        .map(|(&avg, &x)| (n * avg + x as f64) / (n + 1.0))
        .collect();
    Ok(SwaState {
        averaged,
        n_updates: state.n_updates + 1,
    })
}

/// The distilled model plus the mean KL loss of each epoch.
#[derive(Clone, Debug)]
pub struct DistillResult {
    pub model: MlpModel,
    pub epoch_kl: Vec<f64>,
}

/// Trains `init` to match the ensemble's softened outputs on the unlabeled
/// set, then returns the running average of the per-epoch snapshots.
///
/// Pseudo-labels are computed once up front, not per epoch. Mini-batch
/// order is reshuffled each epoch from (seed, "kd-epoch", epoch).
pub fn distill(plan: &DistillPlan, init: &MlpModel, seed: u64) -> Result<DistillResult> {
    plan.validate()?;
    if init.layer_sizes() != plan.ensemble[0].layer_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "student has layers {:?}, ensemble {:?}",
            init.layer_sizes(),
            plan.ensemble[0].layer_sizes()
        )));
    }
    let logits = ensemble_logits(plan.ensemble, plan.unlabeled.images())?;
    let teacher = pseudo_labels(&logits, plan.temperature)?;
    let lr = if plan.grad_scale_t_squared {
        plan.kd_lr * plan.temperature * plan.temperature
    } else {
        plan.kd_lr
    };

    let n = plan.unlabeled.n();
    let mut student = init.clone();
    let mut swa = SwaState::new(&init.flatten());
    let mut epoch_kl = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        let mut rng = stream(seed, "kd-epoch", epoch as u64);
        let order = shuffled_indices(n, &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(plan.batch_size) {
            let batch = plan.unlabeled.images().gather_rows(chunk)?;
            let teacher_batch = teacher.gather_rows(chunk)?;
            let grads = kl_divergence_backward(&student, &batch, &teacher_batch, plan.temperature)?;
            loss_sum += grads.loss;
            batches += 1;
            student = sgd_step(&student, &grads, lr)?;
            if plan.swa_per_batch {
                swa = swa_fold(&swa, &student.flatten())?;
            }
        }
        if !plan.swa_per_batch {
            swa = swa_fold(&swa, &student.flatten())?;
        }
        epoch_kl.push(loss_sum / batches as f64);
    }
    let model = MlpModel::unflatten(&swa.averaged_params(), init.layer_sizes())?;
    Ok(DistillResult { model, epoch_kl })
}
