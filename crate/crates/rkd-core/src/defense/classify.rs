//! Benign-cluster classification over HDBSCAN labels.

use std::collections::BTreeSet;

use crate::defense::SimilarityScores;
use crate::error::{Error, Result};

/// Outcome of one round's clustering step.
#[derive(Clone, Debug)]
pub struct ClusteringOutcome {
    pub client_ids: Vec<usize>,
    pub scores: Vec<f32>,
    /// Cluster label per client, -1 for noise.
    pub labels: Vec<i32>,
    /// Mean score per cluster id, ascending by id.
    pub cluster_means: Vec<(i32, f64)>,
    /// None only when the all-noise fallback fired.
    pub benign_cluster: Option<i32>,
    /// Client ids treated as benign this round.
    pub benign_clients: BTreeSet<usize>,
    pub q_used: usize,
    /// True when no cluster existed and every client was kept as benign.
    pub fallback_all_benign: bool,
}

/// Picks the cluster with the highest mean score as benign; noise points
/// are malicious. Ties go to the larger cluster, then the lower cluster id.
/// If clustering produced nothing but noise, every client is kept as benign
/// and the outcome is flagged so the round report can record the fallback.
pub fn classify_benign(
    scores: &SimilarityScores,
    labels: &[i32],
    q_used: usize,
) -> Result<ClusteringOutcome> {
    if labels.len() != scores.scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.scores.len()
        )));
    }

    let mut ids: Vec<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
    ids.sort_unstable();
    ids.dedup();

    let cluster_means: Vec<(i32, f64)> = ids
        .iter()
        .map(|&cl| {
            let members: Vec<f64> = labels
                .iter()
                .zip(&scores.scores)
                .filter(|(&l, _)| l == cl)
                .map(|(_, &s)| s as f64)
                .collect();
            (cl, members.iter().sum::<f64>() / members.len() as f64)
        })
        .collect();

    let mut benign_cluster: Option<i32> = None;
    let mut best_mean = f64::NEG_INFINITY;
    let mut best_size = 0usize;
    for &(cl, mean) in &cluster_means {
        let size = labels.iter().filter(|&&l| l == cl).count();
        let better = mean > best_mean || (mean == best_mean && size > best_size);
        // Iterating ids in ascending order makes the lower id win full ties.
        if better {
            benign_cluster = Some(cl);
            best_mean = mean;
            best_size = size;
        }
    }

    let (benign_clients, fallback) = match benign_cluster {
        Some(cl) => (
            scores
                .client_ids
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == cl)
                .map(|(&id, _)| id)
                .collect::<BTreeSet<_>>(),
            false,
        ),
        None => (scores.client_ids.iter().copied().collect(), true),
    };

    Ok(ClusteringOutcome {
        client_ids: scores.client_ids.clone(),
        scores: scores.scores.clone(),
        labels: labels.to_vec(),
        cluster_means,
        benign_cluster,
        benign_clients,
        q_used,
        fallback_all_benign: fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(ids: &[usize], scores: &[f32]) -> SimilarityScores {
        SimilarityScores {
            client_ids: ids.to_vec(),
            scores: scores.to_vec(),
            zero_norm_clients: vec![],
        }
    }

    #[test]
    fn highest_mean_cluster_wins() {
        let s = sim(&[0, 1, 2, 3], &[0.9, 0.91, 0.1, 0.12]);
        let out = classify_benign(&s, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(out.benign_cluster, Some(0));
        assert_eq!(out.benign_clients, BTreeSet::from([0, 1]));
        assert!(!out.fallback_all_benign);
    }

    #[test]
    fn noise_is_malicious() {
        let s = sim(&[5, 6, 7], &[0.8, 0.82, 0.1]);
        let out = classify_benign(&s, &[0, 0, -1], 2).unwrap();
        assert_eq!(out.benign_clients, BTreeSet::from([5, 6]));
    }

    #[test]
    fn all_noise_falls_back_to_everyone() {
        let s = sim(&[1, 2, 3], &[0.5, 0.6, 0.7]);
        let out = classify_benign(&s, &[-1, -1, -1], 2).unwrap();
        assert!(out.fallback_all_benign);
        assert_eq!(out.benign_cluster, None);
        assert_eq!(out.benign_clients, BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn mean_tie_prefers_larger_then_lower_id() {
        // Clusters 0 and 1 share the same mean; 1 is larger.
        let s = sim(&[0, 1, 2, 3, 4], &[0.5, 0.5, 0.5, 0.5, 0.5]);
        let out = classify_benign(&s, &[0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(out.benign_cluster, Some(1));
        // Same mean, same size: lower id wins.
        let s2 = sim(&[0, 1, 2, 3], &[0.4, 0.4, 0.4, 0.4]);
        let out2 = classify_benign(&s2, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(out2.benign_cluster, Some(0));
    }

    #[test]
    fn shifted_scores_keep_the_same_split() {
        let base = sim(&[0, 1, 2, 3], &[0.9, 0.91, 0.1, 0.12]);
        let labels = [0, 0, 1, 1];
        let a = classify_benign(&base, &labels, 2).unwrap();
        let shifted = sim(&[0, 1, 2, 3], &[0.99, 1.0, 0.19, 0.21]);
        let b = classify_benign(&shifted, &labels, 2).unwrap();
        assert_eq!(a.benign_clients, b.benign_clients);
    }
}
