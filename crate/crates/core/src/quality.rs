//! Lexical diversity statistics over the labeled text.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::TextLabel;

pub const DEFAULT_MSTTR_SEGMENT: usize = 50;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub total_tokens: usize,
    pub unique_tokens: usize,
    pub unique_trigrams: usize,
    /// Bits.
    pub shannon_token_entropy: f64,
    /// Bits.
    pub conditional_bigram_entropy: f64,
    /// Zero for an empty corpus.
    pub ttr: f64,
    /// `None` until one full segment exists.
    pub msttr: Option<f64>,
    pub labeled_count: usize,
    pub per_signature_coverage: BTreeMap<String, f64>,
}

/// Labeled and total record counts for one attribute signature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub labeled: usize,
    pub total: usize,
}

fn ttr(tokens: &[&str]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().collect::<HashSet<_>>().len() as f64 / tokens.len() as f64
}

/// Mean type-token ratio over consecutive non-overlapping segments; the
/// trailing partial segment is dropped.
pub fn msttr(tokens: &[&str], segment: usize) -> Option<f64> {
    if segment == 0 || tokens.len() < segment {
        return None;
    }
    let ratios: Vec<f64> = tokens.chunks_exact(segment).map(ttr).collect();
    Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Incremental n-gram counts over a growing token stream. Reports are built
/// from sorted maps so every float sum runs in a fixed order.
#[derive(Clone, Debug)]
pub struct QualityTracker {
    segment: usize,
    labeled_count: usize,
    total: usize,
    unigrams: BTreeMap<String, usize>,
    bigrams: BTreeMap<(String, String), usize>,
    firsts: BTreeMap<String, usize>,
    trigrams: HashSet<[String; 3]>,
    tail: Vec<String>,
    segment_types: HashSet<String>,
    segment_len: usize,
    segment_ttrs: Vec<f64>,
}

impl QualityTracker {
    pub fn new(msttr_segment: usize) -> Self {
        Self {
            segment: msttr_segment,
            labeled_count: 0,
            total: 0,
            unigrams: BTreeMap::new(),
            bigrams: BTreeMap::new(),
            firsts: BTreeMap::new(),
            trigrams: HashSet::new(),
            tail: Vec::new(),
            segment_types: HashSet::new(),
            segment_len: 0,
            segment_ttrs: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &TextLabel) {
        self.labeled_count += 1;
        for token in &label.tokens {
            self.push_token(token);
        }
    }

    fn push_token(&mut self, token: &str) {
        self.total += 1;
        *self.unigrams.entry(token.to_string()).or_default() += 1;
        if let Some(prev) = self.tail.last() {
            *self.bigrams.entry((prev.clone(), token.to_string())).or_default() += 1;
            *self.firsts.entry(prev.clone()).or_default() += 1;
        }
        if self.tail.len() == 2 {
            self.trigrams.insert([self.tail[0].clone(), self.tail[1].clone(), token.to_string()]);
            self.tail.remove(0);
        }
        self.tail.push(token.to_string());

        if self.segment > 0 {
            self.segment_types.insert(token.to_string());
            self.segment_len += 1;
            if self.segment_len == self.segment {
                self.segment_ttrs.push(self.segment_types.len() as f64 / self.segment as f64);
                self.segment_types.clear();
                self.segment_len = 0;
            }
        }
    }

    pub fn report(&self, coverage: &BTreeMap<String, Coverage>) -> QualityReport {
        let n = self.total as f64;
        let shannon = if self.total == 0 {
            0.0
        } else {
            self.unigrams
                .values()
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum::<f64>()
                .max(0.0)
        };
        let pairs = self.total.saturating_sub(1) as f64;
        let conditional = if pairs == 0.0 {
            0.0
        } else {
            self.bigrams
                .iter()
                .map(|((a, _), &c)| {
                    let joint = c as f64 / pairs;
                    -joint * (c as f64 / self.firsts[a] as f64).log2()
                })
                .sum::<f64>()
                .max(0.0)
        };
        let msttr = (!self.segment_ttrs.is_empty())
            .then(|| self.segment_ttrs.iter().sum::<f64>() / self.segment_ttrs.len() as f64);

        QualityReport {
            total_tokens: self.total,
            unique_tokens: self.unigrams.len(),
            unique_trigrams: self.trigrams.len(),
            shannon_token_entropy: shannon,
            conditional_bigram_entropy: conditional,
            ttr: if self.total == 0 { 0.0 } else { self.unigrams.len() as f64 / n },
            msttr,
            labeled_count: self.labeled_count,
            per_signature_coverage: coverage
                .iter()
                .map(|(sig, c)| (sig.clone(), if c.total == 0 { 0.0 } else { c.labeled as f64 / c.total as f64 }))
                .collect(),
        }
    }
}

/// Metrics over the concatenated token stream of `labels` in the given
/// order; n-grams run across label boundaries.
pub fn compute_report(
    labels: &[TextLabel],
    coverage: &BTreeMap<String, Coverage>,
    msttr_segment: usize,
) -> QualityReport {
    let mut tracker = QualityTracker::new(msttr_segment);
    for label in labels {
        tracker.push(label);
    }
    tracker.report(coverage)
}

impl QualityReport {
    /// Flat numeric fields in a fixed order. An undefined MSTTR is omitted.
    pub fn key_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("labeled_count".to_string(), self.labeled_count as f64),
            ("total_tokens".to_string(), self.total_tokens as f64),
            ("unique_tokens".to_string(), self.unique_tokens as f64),
            ("unique_trigrams".to_string(), self.unique_trigrams as f64),
            ("shannon_token_entropy".to_string(), self.shannon_token_entropy),
            ("conditional_bigram_entropy".to_string(), self.conditional_bigram_entropy),
            ("ttr".to_string(), self.ttr),
        ];
        if let Some(m) = self.msttr {
            out.push(("msttr".to_string(), m));
        }
        for (sig, frac) in &self.per_signature_coverage {
            out.push((format!("coverage.{sig}"), *frac));
        }
        out
    }

    /// One `key=value` line per field.
    pub fn to_key_value_text(&self) -> String {
        self.key_values().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoppingThresholds {
    pub min_labeled: Option<usize>,
    pub min_msttr: Option<f64>,
    pub min_ttr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop: bool,
    /// Met thresholds when stopping, unmet ones otherwise.
    pub reasons: Vec<String>,
}

pub fn should_stop(report: &QualityReport, thresholds: &StoppingThresholds) -> StopDecision {
    let mut met = Vec::new();
    let mut unmet = Vec::new();
    let mut check = |name: &str, ok: bool| if ok { met.push(name.to_string()) } else { unmet.push(name.to_string()) };
    if let Some(n) = thresholds.min_labeled {
        check("labeled_count", report.labeled_count >= n);
    }
    if let Some(m) = thresholds.min_msttr {
        check("msttr", report.msttr.is_some_and(|v| v >= m));
    }
    if let Some(t) = thresholds.min_ttr {
        check("ttr", report.ttr >= t);
    }
    if met.is_empty() && unmet.is_empty() {
        return StopDecision { stop: false, reasons: Vec::new() };
    }
    if unmet.is_empty() {
        StopDecision { stop: true, reasons: met }
    } else {
        StopDecision { stop: false, reasons: unmet }
    }
}
