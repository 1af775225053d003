use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram match and candidate n-gram totals per order, plus the
/// candidate and effective reference lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Reference length closest to the candidate length; ties take the shorter.
fn closest_reference_len(candidate: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(candidate), r))
        .unwrap_or(0)
}

pub fn bleu_stats(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(Error::Config("bleu needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (candidate, refs) in candidates.iter().zip(references) {
        stats.candidate_len += candidate.len() as u64;
        stats.reference_len += closest_reference_len(candidate.len(), refs) as u64;
        for n in 1..=MAX_ORDER {
            let counts = ngram_counts(candidate, n);
            let mut max_ref: HashMap<&[String], u64> = HashMap::new();
            for r in refs {
                for (gram, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_default();
                    *slot = (*slot).max(c);
                }
            }
            stats.totals[n - 1] += counts.values().sum::<u64>();
            stats.matches[n - 1] +=
                counts.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum::<u64>();
        }
    }
    Ok(stats)
}

impl BleuStats {
    /// Geometric mean of the four precisions (add-one smoothed for orders
    /// two and up) times the brevity penalty.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..MAX_ORDER {
            log_sum += ((self.matches[n] + 1) as f64 / (self.totals[n] + 1) as f64).ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let brevity = if c > r { 0.0 } else { 1.0 - r / c };
        (log_sum / MAX_ORDER as f64 + brevity).exp()
    }
}

/// Corpus-level BLEU-4 of `candidates` against their reference sets.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(bleu_stats(candidates, references)?.score())
}
