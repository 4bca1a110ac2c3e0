//! Multilayer perceptron with ReLU hidden activations and raw logit outputs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::stream;

/// Flat view of all model parameters in canonical order: for each layer,
/// the weight matrix row-major (out x in) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
}

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Self {
        ParamVector { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_same_len(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_same_len(self, other)?;
        Ok(ParamVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_same_len(self, other)?;
        Ok(ParamVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f32) -> ParamVector {
        ParamVector::new(self.values.iter().map(|&v| v * factor).collect())
    }
}

fn check_same_len(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameter vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Number of parameters for a given layer size list.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least input and output layer, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "zero-width layer in {:?}",
            layer_sizes
        )));
    }
    Ok(())
}

/// Fully connected network. Hidden layers apply ReLU, the last layer emits
/// raw logits. Weight matrices are stored row-major as (fan_out x fan_in).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

/// Kaiming-normal initialisation: weights from N(0, 2/fan_in), biases zero.
/// Layer `l` draws from the stream `(seed, "init", l)`.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    validate_layer_sizes(layer_sizes)?;
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for (l, w) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = stream(seed, "init", l as u64);
        let layer: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (z * std) as f32
            })
            .collect();
        weights.push(layer);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

impl MlpModel {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub(crate) fn weight(&self, layer: usize) -> &[f32] {
        &self.weights[layer]
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layer_sizes)
    }

    /// Logits for a batch, shape (n x output_dim).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(batch)?.pop().unwrap())
    }

    /// Pre-activation values per layer plus the input: returns
    /// `[input, z_1, ..., z_L]` where `z_L` are the logits. Hidden layer
    /// activations are `relu(z_l)`; the trace stores pre-activations so
    /// backward passes can recover the ReLU mask exactly.
    pub(crate) fn forward_trace(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        if batch.n_cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch width {} vs model input {}",
                batch.n_cols(),
                self.input_dim()
            )));
        }
        let n = batch.n_rows();
        let mut trace = Vec::with_capacity(self.n_layers() + 1);
        trace.push(batch.clone());
        let mut act = batch.clone();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = vec![0.0f32; n * fan_out];
            for i in 0..n {
                let row = act.row(i);
                for o in 0..fan_out {
                    let w = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                    let mut acc = self.biases[l][o] as f64;
                    for (x, wv) in row.iter().zip(w) {
                        acc += *x as f64 * *wv as f64;
                    }
                    z[i * fan_out + o] = acc as f32;
                }
            }
            let zt = Tensor::new(n, fan_out, z)?;
            if l + 1 < self.n_layers() {
                let a: Vec<f32> = zt.data().iter().map(|&v| v.max(0.0)).collect();
                act = Tensor::new(n, fan_out, a)?;
            }
            trace.push(zt);
        }
        Ok(trace)
    }

    pub fn flatten(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            values.extend_from_slice(&self.weights[l]);
            values.extend_from_slice(&self.biases[l]);
        }
        ParamVector::new(values)
    }

    pub fn unflatten(params: &ParamVector, layer_sizes: &[usize]) -> Result<MlpModel> {
        validate_layer_sizes(layer_sizes)?;
        let expected = param_count(layer_sizes);
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for layer sizes {:?} (need {})",
                params.len(),
                layer_sizes,
                expected
            )));
        }
        let vals = params.values();
        let mut offset = 0usize;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            weights.push(vals[offset..offset + fan_in * fan_out].to_vec());
            offset += fan_in * fan_out;
            biases.push(vals[offset..offset + fan_out].to_vec());
            offset += fan_out;
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Predicted class per row: argmax of logits, lowest index on ties.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits
            .rows_iter()
            .map(|row| {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}
