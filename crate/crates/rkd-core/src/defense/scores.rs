//! Cosine similarity scores and the round-scheduled minimum cluster size.

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Per-client cosine similarity against the global model, in client order.
#[derive(Clone, Debug)]
pub struct SimilarityScores {
    pub client_ids: Vec<usize>,
    pub scores: Vec<f32>,
    /// Clients whose parameter vector had zero norm; their score is 0.
    pub zero_norm_clients: Vec<usize>,
}

/// s_i = <p_i, g> / (|p_i|·|g|), accumulated in f64 and clamped to [-1, 1].
/// A zero-norm client vector scores 0 and is flagged rather than erroring;
/// a zero-norm global model is a hard error.
pub fn cosine_scores(
    client_ids: &[usize],
    client_params: &[ParamVector],
    global_params: &ParamVector,
) -> Result<SimilarityScores> {
    if client_ids.len() != client_params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} parameter vectors",
            client_ids.len(),
            client_params.len()
        )));
    }
    let g_norm = global_params.l2_norm();
    if g_norm == 0.0 {
        return Err(Error::InvalidArgument(
            "global model has zero norm, cosine scores undefined".into(),
        ));
    }
    let mut scores = Vec::with_capacity(client_params.len());
    let mut zero_norm_clients = Vec::new();
    for (&id, p) in client_ids.iter().zip(client_params) {
        let p_norm = p.l2_norm();
        if p_norm == 0.0 {
            zero_norm_clients.push(id);
            scores.push(0.0);
            continue;
        }
        let s = p.dot(global_params)? / (p_norm * g_norm);
        scores.push(s.clamp(-1.0, 1.0) as f32);
    }
    Ok(SimilarityScores {
        client_ids: client_ids.to_vec(),
        scores,
        zero_norm_clients,
    })
}

/// Q = max(2, ceil(0.2·N - r)), additionally capped at N. Evaluated in
/// integer arithmetic as ceil((N - 5r) / 5) so no float rounding can push
/// the ceiling off by one.
pub fn dynamic_min_cluster_size(n_clients: usize, round: usize) -> usize {
    assert!(n_clients >= 2, "need at least two clients");
    let n = n_clients as i64;
    let r = round as i64;
    let ceil = (n - 5 * r + 4).div_euclid(5);
    ceil.max(2).min(n) as usize
}
