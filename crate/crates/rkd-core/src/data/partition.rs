//! Dirichlet Non-IID partitioning and the distillation holdout split.

use rand_distr::{Distribution, Gamma};

use crate::data::{Dataset, UnlabeledData};
use crate::error::{Error, Result};
use crate::rng::{shuffled_indices, stream};

/// Assignment of sample indices to clients.
#[derive(Clone, Debug)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

/// Per-client class proportions p_i ~ Dirichlet(alpha * 1_C); each class's
/// samples are dealt to clients proportionally to the normalized per-class
/// client weights with largest-remainder rounding. Clients left empty are
/// repaired by moving one sample from the largest client.
///
/// Streams: "partition-dirichlet"/client for the draws,
/// "partition-shuffle"/class for the within-class order.
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if dataset.n() < n_clients {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {} clients",
            dataset.n(),
            n_clients
        )));
    }
    let classes = dataset.num_classes();

    // p[i][c]: client i's Dirichlet proportions via normalized Gamma draws.
    let mut proportions = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let mut rng = stream(seed, "partition-dirichlet", i as u64);
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("gamma({alpha}): {e}")))?;
        loop {
            let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum.is_finite() && sum > 0.0 {
                proportions.push(draws.iter().map(|&g| g / sum).collect::<Vec<f64>>());
                break;
            }
            // All draws underflowed to zero (tiny alpha); redraw from the
            // same stream, still deterministic.
        }
    }

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..dataset.n())
            .filter(|&i| dataset.label(i) == c)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = stream(seed, "partition-shuffle", c as u64);
        let order = shuffled_indices(members.len(), &mut rng);
        members = order.into_iter().map(|k| members[k]).collect();

        let weight_sum: f64 = proportions.iter().map(|p| p[c]).sum();
        let m = members.len();
        // Largest-remainder rounding of m * normalized weights.
        let mut counts = vec![0usize; n_clients];
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(n_clients);
        let mut assigned = 0usize;
        for i in 0..n_clients {
            let share = if weight_sum > 0.0 {
                m as f64 * proportions[i][c] / weight_sum
            } else {
                m as f64 / n_clients as f64
            };
            let base = share.floor() as usize;
            counts[i] = base;
            assigned += base;
            remainders.push((share - base as f64, i));
        }
        // Ties broken toward the lower client id.
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for k in 0..(m - assigned) {
            counts[remainders[k].1] += 1;
        }

        let mut cursor = 0usize;
        for (i, &count) in counts.iter().enumerate() {
            assignments[i].extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Repair: every client must hold at least one sample.
    loop {
        let Some(empty) = assignments.iter().position(|a| a.is_empty()) else {
            break;
        };
        let donor = assignments
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        let moved = assignments[donor].pop().unwrap();
        assignments[empty].push(moved);
    }

    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan {
        assignments,
        alpha,
        seed,
    })
}

/// Splits off a uniformly chosen floor(fraction * n) subset whose labels are
/// discarded; the remainder keeps its labels and goes on to partitioning.
pub fn holdout_distillation_set(
    train: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(UnlabeledData, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0,1), got {fraction}"
        )));
    }
    let n = train.n();
    let size = (fraction * n as f64).floor() as usize;
    if size == 0 {
        return Err(Error::InvalidArgument(format!(
            "holdout of {n} samples at fraction {fraction} would be empty"
        )));
    }
    if size == n {
        return Err(Error::InvalidArgument(
            "holdout would consume the entire training set".into(),
        ));
    }
    let mut rng = stream(seed, "holdout", 0);
    let order = shuffled_indices(n, &mut rng);
    let mut held: Vec<usize> = order[..size].to_vec();
    let mut rest: Vec<usize> = order[size..].to_vec();
    held.sort_unstable();
    rest.sort_unstable();

    let holdout = UnlabeledData::new(train.images().gather_rows(&held)?)?;
    let remainder = train.subset(&rest)?;
    Ok((holdout, remainder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn balanced(n_per_class: usize, classes: usize) -> Dataset {
        synth_blobs(n_per_class, classes, classes.max(4), 0.05, 99).unwrap()
    }

    fn class_histogram(d: &Dataset, idx: &[usize], classes: usize) -> Vec<usize> {
        let mut h = vec![0usize; classes];
        for &i in idx {
            h[d.label(i)] += 1;
        }
        h
    }

    #[test]
    fn covers_all_samples_disjointly() {
        let d = balanced(30, 4);
        let plan = dirichlet_partition(&d, 7, 0.5, 3).unwrap();
        let mut seen = vec![false; d.n()];
        for a in &plan.assignments {
            assert!(!a.is_empty());
            for &i in a {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn huge_alpha_is_nearly_uniform() {
        let d = balanced(50, 4);
        let plan = dirichlet_partition(&d, 4, 1e6, 11).unwrap();
        for a in &plan.assignments {
            let h = class_histogram(&d, a, 4);
            for &count in &h {
                assert!(
                    (count as f64 - 12.5).abs() <= 2.0,
                    "histogram {h:?} strays from uniform"
                );
            }
        }
    }

    #[test]
    fn single_client_gets_everything() {
        let d = balanced(5, 2);
        let plan = dirichlet_partition(&d, 1, 0.5, 0).unwrap();
        assert_eq!(plan.assignments[0].len(), d.n());
    }

    #[test]
    fn more_clients_than_samples_is_an_error() {
        let d = balanced(1, 2);
        assert!(dirichlet_partition(&d, 3, 0.5, 0).is_err());
    }

    #[test]
    fn small_alpha_is_more_skewed_than_large() {
        let d = balanced(25, 4);
        let global: Vec<f64> = vec![0.25; 4];
        let mut skew = |alpha: f64| -> f64 {
            let mut total = 0.0;
            for seed in 0..100u64 {
                let plan = dirichlet_partition(&d, 5, alpha, seed).unwrap();
                for a in &plan.assignments {
                    let h = class_histogram(&d, a, 4);
                    let n: usize = h.iter().sum();
                    for (c, &count) in h.iter().enumerate() {
                        total += (count as f64 / n as f64 - global[c]).abs();
                    }
                }
            }
            total
        };
        let sharp = skew(0.1);
        let mild = skew(0.9);
        assert!(
            sharp > mild,
            "alpha=0.1 skew {sharp} should exceed alpha=0.9 skew {mild}"
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let d = balanced(20, 3);
        let a = dirichlet_partition(&d, 6, 0.3, 42).unwrap();
        let b = dirichlet_partition(&d, 6, 0.3, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = dirichlet_partition(&d, 6, 0.3, 43).unwrap();
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn holdout_sizes_and_disjointness() {
        let d = balanced(250, 4);
        let (held, rest) = holdout_distillation_set(&d, 0.16, 7).unwrap();
        assert_eq!(held.n(), 160);
        assert_eq!(rest.n(), d.n() - 160);
        assert!(holdout_distillation_set(&d, 0.0, 7).is_err());
        assert!(holdout_distillation_set(&d, 1.0, 7).is_err());
        let tiny = balanced(1, 2);
        assert!(holdout_distillation_set(&tiny, 0.16, 7).is_err());
    }

    #[test]
    fn holdout_is_deterministic() {
        let d = balanced(50, 2);
        let (h1, r1) = holdout_distillation_set(&d, 0.2, 5).unwrap();
        let (h2, r2) = holdout_distillation_set(&d, 0.2, 5).unwrap();
        assert_eq!(h1.images().data(), h2.images().data());
        assert_eq!(r1.labels(), r2.labels());
    }
}
