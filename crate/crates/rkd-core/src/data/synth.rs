//! Synthetic Gaussian-blob datasets, a desk-scale stand-in for image corpora.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::stream;

/// Class centers follow a deterministic stripe pattern: coordinate j of
/// class k's center is 0.85 when j mod num_classes == k and 0.15 otherwise.
/// Every class therefore keeps discriminative coordinates across the whole
/// image, so local occlusions (trigger patches) cannot erase a class.
/// Samples are center + spread * N(0, I), clipped to [0,1]; class k draws
/// from the stream (seed, "blobs", k), so per-class data is stable under
/// changes to the other classes.
pub fn synth_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f32,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "n_per_class, num_classes and dim must all be at least 1".into(),
        ));
    }
    if num_classes > dim {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes need at least that many dimensions, got {dim}"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }

    let n = n_per_class * num_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        let center: Vec<f32> = (0..dim)
            .map(|j| if j % num_classes == k { 0.85 } else { 0.15 })
            .collect();
        let mut rng = stream(seed, "blobs", k as u64);
        for _ in 0..n_per_class {
            for &c in &center {
                let z: f64 = rng.sample(StandardNormal);
                data.push((c + spread * z as f32).clamp(0.0, 1.0));
            }
            labels.push(k);
        }
    }
    Dataset::new(Tensor::new(n, dim, data)?, labels, num_classes)
}
