use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textloom_core::clustering::{build_index, kmeans, BowVector, IndexInput};
use textloom_core::corpus::RecordId;

fn vector(dense: &[u32]) -> BowVector {
    BowVector::from_counts(dense.iter().enumerate().map(|(i, &c)| (i as u32, c)))
}

fn wcss(points: &[Vec<u32>], members: &[usize]) -> f64 {
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|&m| points[m][d] as f64).sum::<f64>() / members.len() as f64).collect();
    members.iter().map(|&m| (0..dim).map(|d| (points[m][d] as f64 - mean[d]).powi(2)).sum::<f64>()).sum()
}

#[test]
fn planted_blobs_match_exhaustive_minimum() {
    let points: Vec<Vec<u32>> =
        vec![vec![9, 1, 0], vec![10, 0, 0], vec![11, 2, 0], vec![0, 1, 10], vec![1, 0, 12], vec![0, 2, 11]];
    let mut best: Option<(f64, BTreeSet<usize>)> = None;
    for mask in 1u32..(1 << 5) {
        // point 5 always sits in the complement, so each split is seen once
        let a: Vec<usize> = (0..6).filter(|i| mask & (1 << i) != 0).collect();
        let b: Vec<usize> = (0..6).filter(|i| mask & (1 << i) == 0).collect();
        let cost = wcss(&points, &a) + wcss(&points, &b);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, a.into_iter().collect()));
        }
    }
    let (_, side) = best.unwrap();
    let want: BTreeSet<BTreeSet<usize>> = [side.clone(), (0..6).filter(|i| !side.contains(i)).collect()].into();

    let vectors: Vec<BowVector> = points.iter().map(|p| vector(p)).collect();
    for seed in 0..10 {
        let result = kmeans(&vectors, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let got: BTreeSet<BTreeSet<usize>> =
            (0..2).map(|c| (0..6).filter(|&i| result.assignments[i] == c).collect()).collect();
        assert_eq!(got, want, "seed {seed}");
    }
}

fn inputs_strategy() -> impl Strategy<Value = Vec<(u8, Vec<u32>)>> {
    prop::collection::vec((0u8..4, prop::collection::vec(0u32..5, 4)), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn index_is_a_partition_and_deterministic(raw in inputs_strategy(), k in 1usize..6, seed in any::<u64>()) {
        let vectors: Vec<BowVector> = raw.iter().map(|(_, v)| vector(v)).collect();
        let inputs: Vec<IndexInput<'_>> = raw
            .iter()
            .zip(&vectors)
            .enumerate()
            .map(|(i, ((sig, _), v))| IndexInput { id: RecordId(i as u32 * 3 + 1), signature: format!("s{sig}"), vector: v })
            .collect();
        let index = build_index(&inputs, 4, k, seed).unwrap();
        let mut all = Vec::new();
        for (sig, _, sub) in index.sub_clusters() {
            prop_assert!(!sub.member_ids.is_empty());
            for id in &sub.member_ids {
                let input = inputs.iter().find(|x| x.id == *id).unwrap();
                prop_assert_eq!(&input.signature, sig);
            }
            all.extend(sub.member_ids.iter().copied());
        }
        let set: BTreeSet<RecordId> = all.iter().copied().collect();
        prop_assert_eq!(set.len(), all.len());
        prop_assert_eq!(set, inputs.iter().map(|x| x.id).collect::<BTreeSet<_>>());
        for (sig, subs) in &index.groups {
            let members = inputs.iter().filter(|x| &x.signature == sig).count();
            prop_assert_eq!(subs.len(), k.min(members));
        }

        let again = build_index(&inputs, 4, k, seed).unwrap();
        let bits = |ix: &textloom_core::clustering::ClusterIndex| -> Vec<(Vec<RecordId>, Vec<u64>)> {
            ix.sub_clusters().map(|(_, _, s)| (s.member_ids.clone(), s.centroid.iter().map(|c| c.to_bits()).collect())).collect()
        };
        prop_assert_eq!(bits(&index), bits(&again));
    }

    #[test]
    fn converged_members_sit_nearest_their_own_centroid(raw in prop::collection::vec(prop::collection::vec(0u32..6, 3), 2..30), k in 1usize..5, seed in any::<u64>()) {
        let vectors: Vec<BowVector> = raw.iter().map(|v| vector(v)).collect();
        let result = kmeans(&vectors, 3, k, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assume!(result.iterations < textloom_core::clustering::MAX_ITERATIONS);
        let dist = |p: &[u32], c: &[f64]| p.iter().zip(c).map(|(&x, y)| (x as f64 - y).powi(2)).sum::<f64>();
        for (p, &own) in raw.iter().zip(&result.assignments) {
            let d_own = dist(p, &result.centroids[own]);
            for c in &result.centroids {
                prop_assert!(d_own <= dist(p, c) + 1e-9);
            }
        }
    }
}
