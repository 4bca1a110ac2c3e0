//! Server-side defense pipeline: score client updates by cosine similarity
//! to the current global model, cluster the 1-D scores with HDBSCAN under a
//! round-scheduled minimum cluster size, keep the highest-mean cluster as
//! benign, then narrow that set to an ensemble via the element-wise median
//! and an L1 distance threshold.

mod classify;
mod hdbscan;
mod scores;
mod select;

pub use classify::{classify_benign, ClusteringOutcome};
pub use hdbscan::hdbscan_1d;
pub use scores::{cosine_scores, dynamic_min_cluster_size, SimilarityScores};
pub use select::{elementwise_median, l1_distances, run_selection, select_ensemble, EnsembleSelection};
