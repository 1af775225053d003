//! Batch selection: uncertainty-ranked within each sub-type, round-robin
//! across sub-types and attribute groups, plus the uniform random baseline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterIndex;
use crate::corpus::{RecordId, TextLabel};
use crate::scorer::UncertaintyScore;

/// Position in the flattened (signature order, sub-cluster order) sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub group: usize,
    pub sub_cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub index: ClusterIndex,
    pub scores: BTreeMap<RecordId, UncertaintyScore>,
    pub labeled: BTreeSet<RecordId>,
    /// Ids already handed out; never issued again until released.
    pub issued: BTreeSet<RecordId>,
    pub cursor: Cursor,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub record_id: RecordId,
    pub suggestion: Option<TextLabel>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn ids(&self) -> Vec<RecordId> {
        self.items.iter().map(|i| i.record_id).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn from_ids(ids: Vec<RecordId>) -> Self {
        Self { items: ids.into_iter().map(|record_id| BatchItem { record_id, suggestion: None }).collect() }
    }
}

impl SamplerState {
    pub fn new(index: ClusterIndex, rng_seed: u64) -> Self {
        Self {
            index,
            scores: BTreeMap::new(),
            labeled: BTreeSet::new(),
            issued: BTreeSet::new(),
            cursor: Cursor::default(),
            rng_seed,
        }
    }

    fn available(&self, id: RecordId) -> bool {
        !self.labeled.contains(&id) && !self.issued.contains(&id)
    }

    /// Per sub-cluster (in iteration order), the available ids sorted by
    /// uncertainty descending. Unscored ids follow the scored ones; ties and
    /// unscored ids go by ascending id.
    pub fn rank_within_subtypes(&self) -> Vec<Vec<RecordId>> {
        self.index
            .sub_clusters()
            .map(|(_, _, sub)| {
                let mut ids: Vec<RecordId> =
                    sub.member_ids.iter().copied().filter(|&id| self.available(id)).collect();
                ids.sort_by(|a, b| {
                    let (sa, sb) = (self.scores.get(a), self.scores.get(b));
                    match (sa, sb) {
                        (Some(x), Some(y)) => y.score.total_cmp(&x.score).then(a.cmp(b)),
                        (Some(_), None) => std::cmp::Ordering::Less,
                        (None, Some(_)) => std::cmp::Ordering::Greater,
                        (None, None) => a.cmp(b),
                    }
                });
                ids
            })
            .collect()
    }

    fn flat_position(&self) -> usize {
        let mut pos = 0;
        for (g, subs) in self.index.groups.values().enumerate() {
            if g == self.cursor.group {
                return pos + self.cursor.sub_cluster.min(subs.len());
            }
            pos += subs.len();
        }
        0
    }

    fn set_flat_position(&mut self, mut pos: usize) {
        for (g, subs) in self.index.groups.values().enumerate() {
            if pos < subs.len() {
                self.cursor = Cursor { group: g, sub_cluster: pos };
                return;
            }
            pos -= subs.len();
        }
        self.cursor = Cursor::default();
    }

    /// Takes the top-ranked available id from each sub-cluster in turn,
    /// resuming at the cursor and skipping exhausted sub-clusters, until
    /// `size` ids are collected or nothing is left. Issued ids are recorded.
    pub fn next_batch(&mut self, size: usize) -> Batch {
        let mut ranked: Vec<std::collections::VecDeque<RecordId>> =
            self.rank_within_subtypes().into_iter().map(Into::into).collect();
        let total = ranked.len();
        if total == 0 || size == 0 {
            return Batch::default();
        }
        let mut pos = self.flat_position() % total;
        let mut picked = Vec::with_capacity(size);
        let mut idle = 0;
        while picked.len() < size && idle < total {
            match ranked[pos].pop_front() {
                Some(id) => {
                    picked.push(id);
                    idle = 0;
                }
                None => idle += 1,
            }
            pos = (pos + 1) % total;
        }
        self.set_flat_position(pos);
        self.issued.extend(picked.iter().copied());
        Batch::from_ids(picked)
    }

    /// Uniform draw without replacement from the available ids.
    pub fn random_batch(&mut self, size: usize, seed: u64) -> Batch {
        let pool: Vec<RecordId> = self
            .index
            .sub_clusters()
            .flat_map(|(_, _, s)| s.member_ids.iter().copied())
            .filter(|&id| self.available(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked: Vec<RecordId> = pool.choose_multiple(&mut rng, size.min(pool.len())).copied().collect();
        self.issued.extend(picked.iter().copied());
        Batch::from_ids(picked)
    }

    pub fn mark_labeled(&mut self, id: RecordId) {
        self.labeled.insert(id);
    }

    /// Issued but unlabeled ids.
    pub fn in_flight(&self) -> Vec<RecordId> {
        self.issued.difference(&self.labeled).copied().collect()
    }

    /// Makes in-flight ids available to future batches again.
    pub fn release_in_flight(&mut self) {
        let labeled = &self.labeled;
        self.issued.retain(|id| labeled.contains(id));
    }

    pub fn set_scores(&mut self, scores: impl IntoIterator<Item = UncertaintyScore>) {
        self.scores = scores.into_iter().map(|s| (s.record_id, s)).collect();
    }
}
