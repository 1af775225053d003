//! Bag-of-words vectors and the two-layer cluster index.
//!
//! The first layer groups records by attribute signature (the sorted set of
//! attribute names). The second layer splits each group into `k` sub-types
//! with Lloyd's K-means on raw count vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LinearizedData, RecordId, StructuredRecord};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;
pub const MAX_ITERATIONS: usize = 100;

/// Token to id map for bag-of-words vectors. Id 0 is reserved for tokens
/// outside the vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVocabulary {
    ids: HashMap<String, u32>,
}

impl BowVocabulary {
    pub const UNKNOWN: u32 = 0;

    pub fn build<'a, I, T>(sequences: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut ordered: BTreeSet<&str> = BTreeSet::new();
        for seq in sequences {
            ordered.extend(seq.into_iter().map(String::as_str));
        }
        let ids = ordered
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i as u32 + 1))
            .collect();
        Self { ids }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNKNOWN)
    }

    /// Number of dimensions, including the reserved unknown slot.
    pub fn dim(&self) -> usize {
        self.ids.len() + 1
    }
}

/// Sparse count vector with its squared norm cached as an exact integer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowVector {
    entries: Vec<(u32, u32)>,
    squared_norm: u64,
}

impl BowVector {
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (id, c) in counts {
            if c > 0 {
                *map.entry(id).or_default() += c;
            }
        }
        let entries: Vec<(u32, u32)> = map.into_iter().collect();
        let squared_norm = entries.iter().map(|&(_, c)| c as u64 * c as u64).sum();
        Self { entries, squared_norm }
    }

    /// Sorted `(token id, count)` pairs.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        (self.squared_norm as f64).sqrt()
    }

    pub fn squared_norm(&self) -> u64 {
        self.squared_norm
    }

    pub fn count(&self, id: u32) -> u32 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0)
    }

    pub fn dot(&self, other: &BowVector) -> u64 {
        let (mut i, mut j, mut acc) = (0, 0, 0u64);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 as u64 * b.1 as u64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut dense = vec![0.0; dim];
        for &(id, c) in &self.entries {
            dense[id as usize] = c as f64;
        }
        dense
    }

    /// Squared Euclidean distance to a dense point, given that point's squared norm.
    fn squared_distance(&self, dense: &[f64], dense_squared_norm: f64) -> f64 {
        let mut d = dense_squared_norm;
        for &(id, c) in &self.entries {
            let (x, y) = (c as f64, dense[id as usize]);
            d += x * x - 2.0 * x * y;
        }
        d.max(0.0)
    }
}

pub fn vectorize(data: &LinearizedData, vocab: &BowVocabulary) -> Result<BowVector> {
    if data.tokens.is_empty() {
        return Err(Error::EmptyTokens);
    }
    Ok(BowVector::from_counts(data.tokens.iter().map(|t| (vocab.id(t), 1))))
}

/// Cosine similarity of two count vectors, in `[0, 1]`.
pub fn cosine(a: &BowVector, b: &BowVector) -> Result<f64> {
    if a.squared_norm == 0 || b.squared_norm == 0 {
        return Err(Error::ZeroNorm);
    }
    let denom = (a.squared_norm as f64 * b.squared_norm as f64).sqrt();
    Ok((a.dot(b) as f64 / denom).min(1.0))
}

/// Sorted, de-duplicated attribute names joined with `|`.
pub fn attribute_signature(record: &StructuredRecord) -> String {
    let names: BTreeSet<&str> = record.attributes().into_iter().collect();
    names.into_iter().collect::<Vec<_>>().join("|")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCluster {
    pub centroid: Vec<f64>,
    pub member_ids: Vec<RecordId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndex {
    pub k: usize,
    pub seed: u64,
    /// Keyed by attribute signature; iteration order is the sorted signature order.
    pub groups: BTreeMap<String, Vec<SubCluster>>,
}

impl ClusterIndex {
    pub fn sub_cluster_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn sub_clusters(&self) -> impl Iterator<Item = (&str, usize, &SubCluster)> {
        self.groups
            .iter()
            .flat_map(|(sig, subs)| subs.iter().enumerate().map(move |(i, s)| (sig.as_str(), i, s)))
    }

    /// Signature of the group holding `id`.
    pub fn signature_of(&self, id: RecordId) -> Option<&str> {
        self.sub_clusters()
            .find(|(_, _, s)| s.member_ids.contains(&id))
            .map(|(sig, _, _)| sig)
    }
}

/// One record's clustering input.
pub struct IndexInput<'a> {
    pub id: RecordId,
    pub signature: String,
    pub vector: &'a BowVector,
}

/// Groups records by signature and runs K-means within each group.
pub fn build_index(inputs: &[IndexInput<'_>], dim: usize, k: usize, seed: u64) -> Result<ClusterIndex> {
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut grouped: BTreeMap<&str, Vec<&IndexInput<'_>>> = BTreeMap::new();
    for input in inputs {
        grouped.entry(input.signature.as_str()).or_default().push(input);
    }
    let grouped: Vec<(&str, Vec<&IndexInput<'_>>)> = grouped
        .into_iter()
        .map(|(sig, mut members)| {
            members.sort_by_key(|m| m.id);
            (sig, members)
        })
        .collect();

    let groups = grouped
        .par_iter()
        .enumerate()
        .map(|(ordinal, (sig, members))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ordinal as u64);
            let points: Vec<BowVector> = members.iter().map(|m| m.vector.clone()).collect();
            let result = kmeans(&points, dim, k, &mut rng);
            let mut subs: Vec<SubCluster> = result
                .centroids
                .into_iter()
                .map(|centroid| SubCluster { centroid, member_ids: Vec::new() })
                .collect();
            for (member, &cluster) in members.iter().zip(&result.assignments) {
                subs[cluster].member_ids.push(member.id);
            }
            (sig.to_string(), subs)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    Ok(ClusterIndex { k, seed, groups })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Lloyd's algorithm with farthest-point seeding after a random first center.
/// Runs with `min(k, points.len())` clusters; no cluster is left empty.
pub fn kmeans(points: &[BowVector], dim: usize, k: usize, rng: &mut impl Rng) -> KMeansResult {
    let n = points.len();
    let k = k.min(n).max(1);
    if n == 0 {
        return KMeansResult { assignments: Vec::new(), centroids: Vec::new(), iterations: 0 };
    }

    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = {
        let c = points[chosen[0]].to_dense(dim);
        let cn = squared(&c);
        points.iter().map(|p| p.squared_distance(&c, cn)).collect()
    };
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (next, _) = best.expect("k <= n leaves an unchosen point");
        chosen.push(next);
        let c = points[next].to_dense(dim);
        let cn = squared(&c);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(p.squared_distance(&c, cn));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].to_dense(dim)).collect();

    let mut assignments: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let norms: Vec<f64> = centroids.iter().map(|c| squared(c)).collect();
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (ci, c) in centroids.iter().enumerate() {
                    let d = p.squared_distance(c, norms[ci]);
                    if d < best.1 {
                        best = (ci, d);
                    }
                }
                best.0
            })
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;
        update_centroids(points, dim, &assignments, &mut centroids);
        repair_empty(points, dim, &mut assignments, &mut centroids);
    }

    KMeansResult { assignments, centroids, iterations }
}

fn squared(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn update_centroids(points: &[BowVector], dim: usize, assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for &(id, v) in p.entries() {
            sums[c][id as usize] += v as f64;
        }
    }
    for (c, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count > 0 {
            centroids[c] = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

/// Moves the point farthest from its centroid (among clusters with more than
/// one member) into each empty cluster.
fn repair_empty(points: &[BowVector], dim: usize, assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        for &c in assignments.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            if counts[c] < 2 {
                continue;
            }
            let d = p.squared_distance(&centroids[c], squared(&centroids[c]));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((moved, _)) = best else { return };
        assignments[moved] = empty;
        centroids[empty] = points[moved].to_dense(dim);
        update_centroids(points, dim, assignments, centroids);
    }
}
