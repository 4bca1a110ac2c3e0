//! hdbscan_1d against the brute-force threshold-sweep oracle
//! (see tests/common), plus permutation equivariance.

mod common;

use common::{canonical_labels, gen_score_set, oracle_hdbscan_1d};
use rkd_core::defense::hdbscan_1d;
use rkd_core::rng::{shuffled_indices, stream};

#[test]
fn matches_brute_force_oracle_on_random_sets() {
    let mut checked = 0usize;
    for i in 0..1000u64 {
        for q in [2usize, 3] {
            let scores = gen_score_set(321, i);
            let got = canonical_labels(&hdbscan_1d(&scores, q).unwrap());
            let want = canonical_labels(&oracle_hdbscan_1d(&scores, q));
            assert_eq!(got, want, "instance {i}, q={q}, scores {scores:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 2000);
}

#[test]
fn matches_oracle_on_spec_shapes() {
    let cases: Vec<(Vec<f32>, usize)> = vec![
        (vec![0.90, 0.91, 0.92, 0.89, 0.10, 0.12], 2),
        (vec![0.9, 0.1], 2),
        (vec![0.4; 7], 3),
        (vec![0.0, 0.0, 1.0, 1.0], 2),
        (vec![0.0, 0.5, 1.0], 2),
        (vec![1.0, 1.0, 1.0, 0.0], 2),
    ];
    for (scores, q) in cases {
        let got = canonical_labels(&hdbscan_1d(&scores, q).unwrap());
        let want = canonical_labels(&oracle_hdbscan_1d(&scores, q));
        assert_eq!(got, want, "scores {scores:?}, q={q}");
    }
}

#[test]
fn permutation_equivariant_up_to_renaming() {
    for i in 0..200u64 {
        let scores = gen_score_set(77, i);
        let n = scores.len();
        let base = hdbscan_1d(&scores, 2).unwrap();
        let mut rng = stream(77, "perm", i);
        let perm = shuffled_indices(n, &mut rng);
        let shuffled: Vec<f32> = perm.iter().map(|&j| scores[j]).collect();
        let out = hdbscan_1d(&shuffled, 2).unwrap();
        // Mapping labels back through the permutation must match the base
        // labeling up to renaming.
        let mut back = vec![0i32; n];
        for (pos, &j) in perm.iter().enumerate() {
            back[j] = out[pos];
        }
        assert_eq!(
            canonical_labels(&base),
            canonical_labels(&back),
            "instance {i}: scores {scores:?} perm {perm:?}"
        );
    }
}
