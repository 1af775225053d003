use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use textloom_core::clustering::{ClusterIndex, SubCluster};
use textloom_core::corpus::RecordId;
use textloom_core::sampler::SamplerState;
use textloom_core::scorer::UncertaintyScore;

#[derive(Debug, Clone)]
struct Fixture {
    /// Sub-cluster sizes per group.
    shape: Vec<Vec<usize>>,
    scored: Vec<Option<u8>>,
    labeled: Vec<bool>,
}

fn fixture() -> impl Strategy<Value = Fixture> {
    prop::collection::vec(prop::collection::vec(1usize..6, 1..4), 1..5).prop_flat_map(|shape| {
        let n: usize = shape.iter().flatten().sum();
        (
            Just(shape),
            prop::collection::vec(prop::option::of(0u8..6), n),
            prop::collection::vec(prop::bool::weighted(0.2), n),
        )
            .prop_map(|(shape, scored, labeled)| Fixture { shape, scored, labeled })
    })
}

fn build(f: &Fixture) -> SamplerState {
    let mut next = 0u32;
    let mut groups = BTreeMap::new();
    for (g, sizes) in f.shape.iter().enumerate() {
        let subs = sizes
            .iter()
            .map(|&s| {
                let member_ids = (0..s).map(|_| { next += 1; RecordId(next * 7 % 1009) }).collect();
                SubCluster { centroid: vec![], member_ids }
            })
            .collect();
        groups.insert(format!("sig{g:02}"), subs);
    }
    let index = ClusterIndex { k: 4, seed: 0, groups };
    let ids: Vec<RecordId> = index.sub_clusters().flat_map(|(_, _, s)| s.member_ids.clone()).collect();
    let mut state = SamplerState::new(index, 3);
    state.set_scores(ids.iter().zip(&f.scored).filter_map(|(&id, s)| {
        s.map(|s| UncertaintyScore { record_id: id, score: s as f64 * 0.25, model_version: 1 })
    }));
    for (&id, &l) in ids.iter().zip(&f.labeled) {
        if l {
            state.mark_labeled(id);
        }
    }
    state
}

fn sub_cluster_of(state: &SamplerState) -> BTreeMap<RecordId, usize> {
    state
        .index
        .sub_clusters()
        .enumerate()
        .flat_map(|(i, (_, _, s))| s.member_ids.iter().map(move |&id| (id, i)))
        .collect()
}

fn unlabeled(state: &SamplerState) -> BTreeSet<RecordId> {
    sub_cluster_of(state).into_keys().filter(|id| !state.labeled.contains(id)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn batches_hold_no_duplicates_or_labeled_ids(f in fixture(), sizes in prop::collection::vec(1usize..9, 1..6)) {
        let mut state = build(&f);
        let mut seen = BTreeSet::new();
        for size in sizes {
            let batch = state.next_batch(size);
            prop_assert!(batch.len() <= size);
            for id in batch.ids() {
                prop_assert!(!state.labeled.contains(&id));
                prop_assert!(seen.insert(id), "duplicate {id}");
            }
        }
    }

    #[test]
    fn full_round_touches_every_sub_cluster_once(f in fixture(), warmup in 0usize..3) {
        let mut state = build(&f);
        let _ = state.next_batch(warmup.max(1));
        let owner = sub_cluster_of(&state);
        let total = state.index.sub_cluster_count();
        let ranked = state.rank_within_subtypes();
        prop_assume!(ranked.iter().all(|r| !r.is_empty()));
        let batch = state.next_batch(total);
        let touched: Vec<usize> = batch.ids().iter().map(|id| owner[id]).collect();
        let distinct: BTreeSet<usize> = touched.iter().copied().collect();
        prop_assert_eq!(touched.len(), total);
        prop_assert_eq!(distinct.len(), total);
    }

    #[test]
    fn repeated_batches_exhaust_the_pool_exactly_once(f in fixture(), size in 1usize..7) {
        let mut state = build(&f);
        let expected = unlabeled(&state);
        let mut got = Vec::new();
        loop {
            let batch = state.next_batch(size);
            if batch.is_empty() {
                break;
            }
            got.extend(batch.ids());
        }
        let as_set: BTreeSet<RecordId> = got.iter().copied().collect();
        prop_assert_eq!(as_set.len(), got.len());
        prop_assert_eq!(as_set, expected);
    }

    #[test]
    fn uncertainty_is_non_increasing_within_a_sub_cluster(f in fixture(), size in 1usize..5) {
        let mut state = build(&f);
        let owner = sub_cluster_of(&state);
        let key = |s: &SamplerState, id: &RecordId| s.scores.get(id).map(|u| u.score);
        let mut last: BTreeMap<usize, Option<f64>> = BTreeMap::new();
        loop {
            let batch = state.next_batch(size);
            if batch.is_empty() {
                break;
            }
            for id in batch.ids() {
                let score = key(&state, &id);
                if let Some(prev) = last.get(&owner[&id]) {
                    match (prev, score) {
                        (Some(p), Some(s)) => prop_assert!(s <= *p),
                        (None, Some(_)) => prop_assert!(false, "scored id after unscored"),
                        _ => {}
                    }
                }
                last.insert(owner[&id], score);
            }
        }
    }

    #[test]
    fn random_batch_is_a_subset_of_the_available_pool(f in fixture(), size in 1usize..12, seed in any::<u64>()) {
        let mut state = build(&f);
        let pool = unlabeled(&state);
        let batch = state.random_batch(size, seed);
        let ids: BTreeSet<RecordId> = batch.ids().into_iter().collect();
        prop_assert_eq!(ids.len(), batch.len());
        prop_assert_eq!(batch.len(), size.min(pool.len()));
        prop_assert!(ids.is_subset(&pool));
    }
}

#[test]
fn random_single_draws_are_uniform() {
    let mut groups = BTreeMap::new();
    groups.insert(
        "a".to_string(),
        vec![SubCluster { centroid: vec![], member_ids: (1..=4).map(RecordId).collect() }],
    );
    let template = SamplerState::new(ClusterIndex { k: 1, seed: 0, groups }, 0);
    let mut counts = BTreeMap::<RecordId, usize>::new();
    for seed in 0..2000 {
        let mut state = template.clone();
        for id in state.random_batch(1, seed).ids() {
            *counts.entry(id).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 4);
    for (id, c) in counts {
        assert!((440..=560).contains(&c), "id {id} drawn {c} times");
    }
}
