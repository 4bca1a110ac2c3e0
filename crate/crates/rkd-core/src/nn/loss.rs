//! Loss functions, exact gradients and the SGD update.
//!
//! Gradients are accumulated in f64 and stored as f32 in the canonical
//! parameter layout (see `MlpModel::flatten`). The ReLU derivative is taken
//! as 0 at exactly 0.

use crate::error::{Error, Result};
use crate::nn::{MlpModel, ParamVector, Tensor};

/// Gradient of a scalar loss with respect to every model parameter, in
/// canonical flat order, together with the loss value itself.
#[derive(Clone, Debug)]
pub struct GradVector {
    pub values: Vec<f32>,
    pub loss: f64,
}

fn check_temperature(temperature: f32) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(temperature as f64)
}

/// Row-wise softmax of `logits / temperature` with max subtraction.
pub fn softmax_temperature(logits: &Tensor, temperature: f32) -> Result<Tensor> {
    let t = check_temperature(temperature)?;
    let mut out = Vec::with_capacity(logits.data().len());
    for row in logits.rows_iter() {
        out.extend(softmax_row(row, t).into_iter().map(|p| p as f32));
    }
    Tensor::new(logits.n_rows(), logits.n_cols(), out)
}

fn softmax_row(row: &[f32], t: f64) -> Vec<f64> {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64 / t));
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 / t - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn check_nonempty_batch(batch: &Tensor) -> Result<()> {
    if batch.n_rows() == 0 {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    Ok(())
}

/// Mean cross entropy of the model's softmax output against integer labels.
pub fn cross_entropy_loss(model: &MlpModel, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    check_nonempty_batch(batch)?;
    check_labels(labels, batch.n_rows(), model.output_dim())?;
    let logits = model.forward(batch)?;
    let mut total = 0.0f64;
    for (row, &y) in logits.rows_iter().zip(labels) {
        total += log_sum_exp(row) - row[y] as f64;
    }
    Ok(total / batch.n_rows() as f64)
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let s: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
    m + s.ln()
}

/// Mean cross entropy and its gradient with respect to every parameter.
pub fn cross_entropy_backward(
    model: &MlpModel,
    batch: &Tensor,
    labels: &[usize],
) -> Result<GradVector> {
    check_nonempty_batch(batch)?;
    check_labels(labels, batch.n_rows(), model.output_dim())?;
    let trace = model.forward_trace(batch)?;
    let logits = trace.last().unwrap();
    let n = batch.n_rows();
    let classes = model.output_dim();

    let mut loss = 0.0f64;
    let mut delta = vec![0.0f64; n * classes];
    for (i, (row, &y)) in logits.rows_iter().zip(labels).enumerate() {
        loss += log_sum_exp(row) - row[y] as f64;
        let probs = softmax_row(row, 1.0);
        for c in 0..classes {
            let target = if c == y { 1.0 } else { 0.0 };
            delta[i * classes + c] = (probs[c] - target) / n as f64;
        }
    }
    loss /= n as f64;

    let values = backward_params(model, &trace, delta);
    Ok(GradVector { values, loss })
}

/// KL divergence KL(teacher || softmax(logits / temperature)), averaged over
/// the batch, and its parameter gradient. Teacher rows must be probability
/// vectors: non-negative entries summing to 1 within 1e-5.
pub fn kl_divergence_backward(
    model: &MlpModel,
    batch: &Tensor,
    teacher_probs: &Tensor,
    temperature: f32,
) -> Result<GradVector> {
    let t = check_temperature(temperature)?;
    check_nonempty_batch(batch)?;
    let classes = model.output_dim();
    check_teacher(teacher_probs, batch.n_rows(), classes)?;
    let trace = model.forward_trace(batch)?;
    let logits = trace.last().unwrap();
    let n = batch.n_rows();

    let mut loss = 0.0f64;
    let mut delta = vec![0.0f64; n * classes];
    for (i, (row, teach)) in logits.rows_iter().zip(teacher_probs.rows_iter()).enumerate() {
        let probs = softmax_row(row, t);
        let row_sum: f64 = teach.iter().map(|&v| v as f64).sum();
        for c in 0..classes {
            let tc = teach[c] as f64;
            if tc > 0.0 {
                loss += tc * (tc.ln() - probs[c].ln());
            }
            // d/dz_c of -sum_k t_k ln softmax(z/T)_k, averaged over rows.
            delta[i * classes + c] = (probs[c] * row_sum - tc) / (t * n as f64);
        }
    }
    loss /= n as f64;

    let values = backward_params(model, &trace, delta);
    Ok(GradVector { values, loss })
}

/// Loss part of [`kl_divergence_backward`] without the gradient.
pub fn kl_divergence_loss(
    model: &MlpModel,
    batch: &Tensor,
    teacher_probs: &Tensor,
    temperature: f32,
) -> Result<f64> {
    let t = check_temperature(temperature)?;
    check_nonempty_batch(batch)?;
    check_teacher(teacher_probs, batch.n_rows(), model.output_dim())?;
    let logits = model.forward(batch)?;
    let mut loss = 0.0f64;
    for (row, teach) in logits.rows_iter().zip(teacher_probs.rows_iter()) {
        let probs = softmax_row(row, t);
        for (c, &tv) in teach.iter().enumerate() {
            let tc = tv as f64;
            if tc > 0.0 {
                loss += tc * (tc.ln() - probs[c].ln());
            }
        }
    }
    Ok(loss / batch.n_rows() as f64)
}

fn check_teacher(teacher: &Tensor, n: usize, classes: usize) -> Result<()> {
    if teacher.n_rows() != n || teacher.n_cols() != classes {
        return Err(Error::ShapeMismatch(format!(
            "teacher probabilities {}x{} vs expected {}x{}",
            teacher.n_rows(),
            teacher.n_cols(),
            n,
            classes
        )));
    }
    for (i, row) in teacher.rows_iter().enumerate() {
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "teacher row {i} has a negative probability"
            )));
        }
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidArgument(format!(
                "teacher row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// One SGD step: returns a model with `p - lr * g` for every parameter.
pub fn sgd_step(model: &MlpModel, grads: &GradVector, lr: f32) -> Result<MlpModel> {
    if !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite lr {lr}")));
    }
    if grads.values.len() != model.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient entries for {} parameters",
            grads.values.len(),
            model.param_count()
        )));
    }
    let params = model.flatten();
    let updated: Vec<f32> = params
        .values()
        .iter()
        .zip(&grads.values)
        .map(|(&p, &g)| p - lr * g)
        .collect();
    MlpModel::unflatten(&ParamVector::new(updated), model.layer_sizes())
}

/// Gradient of the mean cross entropy toward `target_label` with respect to
/// the input pixels. Output has the same shape as `batch`.
pub fn input_gradient(model: &MlpModel, batch: &Tensor, target_label: usize) -> Result<Tensor> {
    check_nonempty_batch(batch)?;
    let classes = model.output_dim();
    if target_label >= classes {
        return Err(Error::InvalidArgument(format!(
            "target label {target_label} out of range for {classes} classes"
        )));
    }
    let trace = model.forward_trace(batch)?;
    let logits = trace.last().unwrap();
    let n = batch.n_rows();

    let mut delta = vec![0.0f64; n * classes];
    for (i, row) in logits.rows_iter().enumerate() {
        let probs = softmax_row(row, 1.0);
        for c in 0..classes {
            let target = if c == target_label { 1.0 } else { 0.0 };
            delta[i * classes + c] = (probs[c] - target) / n as f64;
        }
    }
    backward_input(model, &trace, delta)
}

/// Shared backward pass: propagates `delta = dL/dz_L` down the layers and
/// collects parameter gradients in canonical flat order.
fn backward_params(model: &MlpModel, trace: &[Tensor], mut delta: Vec<f64>) -> Vec<f32> {
    let n = trace[0].n_rows();
    let layers = model.n_layers();
    // Per-layer gradients, assembled back to front.
    let mut grads_rev: Vec<(Vec<f32>, Vec<f32>)> = Vec::with_capacity(layers);
    for l in (0..layers).rev() {
        let fan_in = model.layer_sizes()[l];
        let fan_out = model.layer_sizes()[l + 1];
        let below = &trace[l];

        let mut gw = vec![0.0f64; fan_out * fan_in];
        let mut gb = vec![0.0f64; fan_out];
        for b in 0..n {
            let act = activation_row(below, b, l);
            for o in 0..fan_out {
                let d = delta[b * fan_out + o];
                gb[o] += d;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(act.iter()) {
                    *g += d * a;
                }
            }
        }
        grads_rev.push((
            gw.into_iter().map(|v| v as f32).collect(),
            gb.into_iter().map(|v| v as f32).collect(),
        ));

        if l > 0 {
            delta = propagate_delta(model, trace, &delta, l, n);
        }
    }

    let mut values = Vec::with_capacity(model.param_count());
    for (gw, gb) in grads_rev.into_iter().rev() {
        values.extend(gw);
        values.extend(gb);
    }
    values
}

fn backward_input(model: &MlpModel, trace: &[Tensor], mut delta: Vec<f64>) -> Result<Tensor> {
    let n = trace[0].n_rows();
    for l in (1..model.n_layers()).rev() {
        delta = propagate_delta(model, trace, &delta, l, n);
    }
    // Through the first layer onto the raw input (no activation there).
    let fan_in = model.layer_sizes()[0];
    let fan_out = model.layer_sizes()[1];
    let w = model.weight(0);
    let mut out = vec![0.0f32; n * fan_in];
    for b in 0..n {
        for i in 0..fan_in {
            let mut acc = 0.0f64;
            for o in 0..fan_out {
                acc += w[o * fan_in + i] as f64 * delta[b * fan_out + o];
            }
            out[b * fan_in + i] = acc as f32;
        }
    }
    Tensor::new(n, fan_in, out)
}

/// delta at layer l (over z_l) -> delta at layer l-1 (over z_{l-1}),
/// applying the ReLU mask of z_{l-1}.
fn propagate_delta(
    model: &MlpModel,
    trace: &[Tensor],
    delta: &[f64],
    l: usize,
    n: usize,
) -> Vec<f64> {
    let fan_in = model.layer_sizes()[l];
    let fan_out = model.layer_sizes()[l + 1];
    let w = model.weight(l);
    let z_below = &trace[l];
    let mut next = vec![0.0f64; n * fan_in];
    for b in 0..n {
        for i in 0..fan_in {
            if z_below.row(b)[i] > 0.0 {
                let mut acc = 0.0f64;
                for o in 0..fan_out {
                    acc += w[o * fan_in + i] as f64 * delta[b * fan_out + o];
                }
                next[b * fan_in + i] = acc;
            }
        }
    }
    next
}

/// Activation feeding layer `l`: the raw input for l == 0, otherwise
/// relu of the stored pre-activations.
fn activation_row(below: &Tensor, row: usize, l: usize) -> Vec<f64> {
    if l == 0 {
        below.row(row).iter().map(|&v| v as f64).collect()
    } else {
        below.row(row).iter().map(|&v| (v.max(0.0)) as f64).collect()
    }
}
