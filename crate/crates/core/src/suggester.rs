//! Retrieval-based label suggestion: the label of the most cosine-similar
//! labeled record.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::BowVector;
use crate::corpus::{LabelSource, RecordId, TextLabel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub record_id: RecordId,
    pub vector: BowVector,
    pub label: TextLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledPool {
    entries: Vec<PoolEntry>,
}

impl LabeledPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero vectors are skipped; they can never be a match.
    pub fn push(&mut self, record_id: RecordId, vector: BowVector, label: TextLabel) {
        if vector.squared_norm() > 0 {
            self.entries.push(PoolEntry { record_id, vector, label });
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Compares cos(q, a) with cos(q, b) exactly: both are non-negative, so
/// comparing dot² / |x|² in integer arithmetic avoids rounding ties.
fn compare_similarity(query: &BowVector, a: &BowVector, b: &BowVector) -> Ordering {
    let (da, db) = (query.dot(a) as u128, query.dot(b) as u128);
    (da * da * b.squared_norm() as u128).cmp(&(db * db * a.squared_norm() as u128))
}

/// The best-matching pool entry; ties go to the smallest record id.
pub fn nearest<'a>(query: &BowVector, pool: &'a LabeledPool) -> Option<&'a PoolEntry> {
    if query.squared_norm() == 0 {
        return None;
    }
    let mut best: Option<&PoolEntry> = None;
    for entry in &pool.entries {
        best = match best {
            None => Some(entry),
            Some(b) => match compare_similarity(query, &entry.vector, &b.vector) {
                Ordering::Greater => Some(entry),
                Ordering::Equal if entry.record_id < b.record_id => Some(entry),
                _ => Some(b),
            },
        };
    }
    best
}

pub fn suggest(query: &BowVector, pool: &LabeledPool) -> Option<TextLabel> {
    nearest(query, pool).map(|e| e.label.clone())
}

/// Suggestions for every query, relabeled as predictions for their own ids.
pub fn predict_all<'a>(
    queries: impl IntoIterator<Item = (RecordId, &'a BowVector)>,
    pool: &LabeledPool,
) -> Result<BTreeMap<RecordId, TextLabel>> {
    if pool.is_empty() {
        return Err(Error::NothingToPredict);
    }
    let mut out = BTreeMap::new();
    for (id, vector) in queries {
        if let Some(entry) = nearest(vector, pool) {
            let label = TextLabel {
                record_id: id,
                text: entry.label.text.clone(),
                tokens: entry.label.tokens.clone(),
                source: LabelSource::Predicted,
            };
            out.insert(id, label);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(entries: &[(u32, u32)]) -> BowVector {
        BowVector::from_counts(entries.iter().copied())
    }

    fn label(id: u32, text: &str) -> TextLabel {
        TextLabel {
            record_id: RecordId(id),
            text: text.into(),
            tokens: text.split_whitespace().map(str::to_string).collect(),
            source: LabelSource::Human,
        }
    }

    fn pool(entries: &[(u32, &[(u32, u32)], &str)]) -> LabeledPool {
        let mut p = LabeledPool::new();
        for (id, counts, text) in entries {
            p.push(RecordId(*id), v(counts), label(*id, text));
        }
        p
    }

    #[test]
    fn empty_pool_gives_nothing() {
        assert_eq!(suggest(&v(&[(1, 1)]), &LabeledPool::new()), None);
        let err = predict_all([(RecordId(0), &v(&[(1, 1)]))], &LabeledPool::new()).unwrap_err();
        assert_eq!(err.to_string(), "nothing to predict from");
    }

    #[test]
    fn picks_highest_cosine() {
        let p = pool(&[(4, &[(1, 1), (2, 1)], "L1"), (2, &[(2, 1)], "L2")]);
        assert_eq!(suggest(&v(&[(1, 1)]), &p).unwrap().text, "L1");
    }

    #[test]
    fn identical_vector_wins() {
        let p = pool(&[(1, &[(1, 2), (2, 1)], "near"), (7, &[(1, 1), (2, 1)], "exact")]);
        assert_eq!(suggest(&v(&[(1, 1), (2, 1)]), &p).unwrap().text, "exact");
    }

    #[test]
    fn ties_go_to_smallest_id() {
        // cos = 1/sqrt(2) for both; the float values differ in the last bit
        let p = pool(&[(9, &[(1, 1), (2, 1)], "late"), (3, &[(1, 3), (3, 3)], "early")]);
        assert_eq!(suggest(&v(&[(1, 1)]), &p).unwrap().text, "early");
    }

    #[test]
    fn zero_query_gets_no_suggestion() {
        let p = pool(&[(0, &[(1, 1)], "x")]);
        assert_eq!(suggest(&v(&[]), &p), None);
    }

    #[test]
    fn predictions_carry_query_ids() {
        let p = pool(&[(0, &[(1, 1)], "only")]);
        let (a, b) = (v(&[(1, 1)]), v(&[(2, 4)]));
        let out = predict_all([(RecordId(5), &a), (RecordId(6), &b)], &p).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.values().all(|l| l.text == "only" && l.source == LabelSource::Predicted));
        assert_eq!(out[&RecordId(6)].record_id, RecordId(6));
        assert!(predict_all(std::iter::empty(), &p).unwrap().is_empty());
    }
}
