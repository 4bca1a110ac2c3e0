//! Ensemble selection: element-wise median, L1 distances, and the
//! mean-plus-k-sigma threshold.

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Result of narrowing the benign set down to the distillation ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleSelection {
    pub median_params: ParamVector,
    /// L1 distance to the median, parallel to the benign id list.
    pub distances: Vec<f64>,
    pub threshold: f64,
    /// Selected client ids, ascending.
    pub selected: Vec<usize>,
    pub k_sigma: f64,
}

/// Per-coordinate median across the given vectors. Even counts average the
/// two middle values.
pub fn elementwise_median(params: &[ParamVector]) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::EmptyInput("median of zero parameter vectors".into()))?;
    let dim = first.len();
    if params.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch(
            "parameter vectors of differing lengths".into(),
        ));
    }
    let n = params.len();
    let mut out = Vec::with_capacity(dim);
    let mut column = vec![0.0f32; n];
    for j in 0..dim {
        for (i, p) in params.iter().enumerate() {
            column[i] = p.values()[j];
        }
        column.sort_unstable_by(f32::total_cmp);
        let m = if n % 2 == 1 {
            column[n / 2]
        } else {
            ((column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0) as f32
        };
        out.push(m);
    }
    Ok(ParamVector::new(out))
}

/// d_i = sum_j |p_i[j] - median[j]|, accumulated in f64.
pub fn l1_distances(params: &[ParamVector], median: &ParamVector) -> Result<Vec<f64>> {
    params
        .iter()
        .map(|p| {
            if p.len() != median.len() {
                return Err(Error::ShapeMismatch(format!(
                    "vector of length {} vs median of length {}",
                    p.len(),
                    median.len()
                )));
            }
            Ok(p.values()
                .iter()
                .zip(median.values())
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum())
        })
        .collect()
}

/// Keeps every client whose distance is at most mean + k_sigma * stddev
/// (population stddev). The minimum-distance client always qualifies, so
/// the selection is never empty for k_sigma >= 0.
pub fn select_ensemble(
    benign_ids: &[usize],
    distances: &[f64],
    median_params: ParamVector,
    k_sigma: f64,
) -> Result<EnsembleSelection> {
    if benign_ids.is_empty() {
        return Err(Error::EmptyInput("selection over zero clients".into()));
    }
    if benign_ids.len() != distances.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} distances",
            benign_ids.len(),
            distances.len()
        )));
    }
    if !(k_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "k_sigma must be non-negative, got {k_sigma}"
        )));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let threshold = mean + k_sigma * var.sqrt();
    let mut selected: Vec<usize> = benign_ids
        .iter()
        .zip(distances)
        .filter(|(_, &d)| d <= threshold)
        .map(|(&id, _)| id)
        .collect();
    selected.sort_unstable();
    Ok(EnsembleSelection {
        median_params,
        distances: distances.to_vec(),
        threshold,
        selected,
        k_sigma,
    })
}

/// Full selection stage: median, distances, then the threshold cut.
/// `benign_params` is parallel to `benign_ids`.
pub fn run_selection(
    benign_ids: &[usize],
    benign_params: &[ParamVector],
    k_sigma: f64,
) -> Result<EnsembleSelection> {
    if benign_ids.len() != benign_params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} parameter vectors",
            benign_ids.len(),
            benign_params.len()
        )));
    }
    let median = elementwise_median(benign_params)?;
    let distances = l1_distances(benign_params, &median)?;
    select_ensemble(benign_ids, &distances, median, k_sigma)
}
