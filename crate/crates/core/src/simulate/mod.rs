//! Replays gold labels through the annotation loop under each selection
//! strategy and scores retrieval-based predictions on a fixed test set.

mod bleu;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::vectorize;
use crate::corpus::{linearize, Corpus, LabelSource, TextLabel};
use crate::error::{Error, Result};
use crate::quality::QualityReport;
use crate::session::{Session, SessionConfig, Strategy};
use crate::suggester::{self, LabeledPool};

pub use bleu::{bleu, bleu_stats, BleuStats, MAX_ORDER};
pub use synth::{make_synthetic_dataset, make_synthetic_dataset_with, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStrategy {
    Sampler,
    Random,
    /// Every training record labeled; the upper reference.
    All,
}

impl SimStrategy {
    pub const ALL: [SimStrategy; 3] = [SimStrategy::Sampler, SimStrategy::Random, SimStrategy::All];

    pub fn as_str(self) -> &'static str {
        match self {
            SimStrategy::Sampler => "sampler",
            SimStrategy::Random => "random",
            SimStrategy::All => "all",
        }
    }
}

impl fmt::Display for SimStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampler" => Ok(SimStrategy::Sampler),
            "random" => Ok(SimStrategy::Random),
            "all" => Ok(SimStrategy::All),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub strategies: Vec<SimStrategy>,
    /// Ascending label counts at which BLEU is measured.
    pub budgets: Vec<usize>,
    pub batch_size: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Model, training and tokenizer settings shared by every cell; `k`,
    /// `seed` and `strategy` are overridden per cell.
    pub session: SessionConfig,
}

impl SimulationConfig {
    /// Small scorer and a sparse retraining schedule so a full run stays
    /// within minutes on a laptop.
    pub fn desk_scale() -> Self {
        let session = SessionConfig {
            retrain_interval: 200,
            background_training: false,
            model: crate::scorer::ModelConfig { model_dim: 16, layers: 1, heads: 2, ff_dim: 32, max_len: 48, seed: 0 },
            train: crate::scorer::TrainConfig {
                learning_rate: 0.05,
                batch_size: 16,
                epochs: 1,
                clip_norm: 1.0,
                seed: 0,
                cycle_samples: 128,
            },
            ..SessionConfig::default()
        };
        Self {
            strategies: SimStrategy::ALL.to_vec(),
            budgets: vec![200, 500, 1000, 2000],
            batch_size: 20,
            k: 5,
            seeds: vec![1, 2, 3, 4, 5],
            session,
        }
    }

    fn validate(&self, pool: usize) -> Result<()> {
        if self.seeds.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config("at least one seed and one strategy are required".into()));
        }
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) || self.budgets[0] == 0 {
            return Err(Error::Config("budgets must be positive and strictly ascending".into()));
        }
        if let Some(&b) = self.budgets.last().filter(|&&b| b > pool) {
            return Err(Error::Config(format!("budget {b} exceeds the training pool of {pool}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationCell {
    pub strategy: SimStrategy,
    pub seed: u64,
    pub budget: usize,
    pub bleu: f64,
    /// Wall time from the start of the run to this evaluation.
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub cells: Vec<SimulationCell>,
    /// Quality of the labeled pool at the largest budget, per strategy and seed.
    pub final_reports: Vec<(SimStrategy, u64, QualityReport)>,
}

impl SimulationResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,seed,budget,bleu,runtime_s\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{},{:.3}\n", c.strategy, c.seed, c.budget, c.bleu, c.runtime_s));
        }
        out
    }

    /// Mean BLEU over seeds, keyed by (strategy, budget).
    pub fn seed_means(&self) -> BTreeMap<(SimStrategy, usize), f64> {
        let mut acc: BTreeMap<(SimStrategy, usize), (f64, usize)> = BTreeMap::new();
        for c in &self.cells {
            let slot = acc.entry((c.strategy, c.budget)).or_default();
            slot.0 += c.bleu;
            slot.1 += 1;
        }
        acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
    }
}

/// Tokenized test inputs and references under a session's tokenizer.
struct TestSet {
    vectors: Vec<crate::clustering::BowVector>,
    references: Vec<Vec<Vec<String>>>,
}

fn prepare_test(session: &Session, test: &Corpus) -> Result<TestSet> {
    let cfg = session.config();
    let mut vectors = Vec::with_capacity(test.len());
    let mut references = Vec::with_capacity(test.len());
    for record in test.records() {
        let gold = record
            .gold_label
            .as_deref()
            .ok_or_else(|| Error::Config(format!("test record {} has no gold label", record.id)))?;
        let d = linearize(record, &cfg.delimiters, session.tokenizer())?;
        vectors.push(vectorize(&d, session.bow_vocabulary())?);
        references.push(vec![session.tokenizer().tokenize(gold)?]);
    }
    Ok(TestSet { vectors, references })
}

fn evaluate(pool: &LabeledPool, test: &TestSet) -> Result<f64> {
    let candidates: Vec<Vec<String>> = test
        .vectors
        .iter()
        .map(|v| suggester::nearest(v, pool).map(|e| e.label.tokens.clone()).unwrap_or_default())
        .collect();
    bleu(&candidates, &test.references)
}

fn cell_config(cfg: &SimulationConfig, strategy: Strategy, seed: u64) -> SessionConfig {
    SessionConfig { k: cfg.k, seed, strategy, background_training: false, ..cfg.session.clone() }
}

fn gold(corpus: &Corpus, id: crate::corpus::RecordId) -> Result<&str> {
    corpus
        .get(id)
        .and_then(|r| r.gold_label.as_deref())
        .ok_or_else(|| Error::Config(format!("training record {id} has no gold label")))
}

/// Oracle annotation loop for one (strategy, seed) cell, evaluated at each
/// budget on the way up to the largest one.
fn run_cell(
    train: &Corpus,
    test: &Corpus,
    cfg: &SimulationConfig,
    strategy: SimStrategy,
    seed: u64,
) -> Result<(Vec<SimulationCell>, QualityReport)> {
    let start = Instant::now();
    let session_strategy = match strategy {
        SimStrategy::Random => Strategy::Random,
        _ => Strategy::Sampler,
    };
    let mut session = Session::from_corpus(train.clone(), cell_config(cfg, session_strategy, seed))?;
    let test_set = prepare_test(&session, test)?;
    let mut cells = Vec::new();

    if strategy == SimStrategy::All {
        let mut pool = LabeledPool::new();
        let mut labels = Vec::with_capacity(train.len());
        for id in train.ids() {
            let label = TextLabel::new(id, gold(train, id)?, LabelSource::Human, session.tokenizer())?;
            pool.push(id, session.vector(id)?.clone(), label.clone());
            labels.push(label);
        }
        let score = evaluate(&pool, &test_set)?;
        for &budget in &cfg.budgets {
            cells.push(SimulationCell { strategy, seed, budget, bleu: score, runtime_s: start.elapsed().as_secs_f64() });
        }
        let report = crate::quality::compute_report(&labels, &BTreeMap::new(), cfg.session.msttr_segment);
        return Ok((cells, report));
    }

    for &budget in &cfg.budgets {
        while session.labeled_count() < budget {
            let size = cfg.batch_size.min(budget - session.labeled_count());
            let batch = session.request_batch(size)?;
            if batch.is_empty() {
                return Err(Error::Config(format!("pool exhausted before budget {budget}")));
            }
            for id in batch.ids() {
                session.submit_label(id, gold(train, id)?)?;
            }
        }
        let score = evaluate(session.pool(), &test_set)?;
        cells.push(SimulationCell { strategy, seed, budget, bleu: score, runtime_s: start.elapsed().as_secs_f64() });
    }
    Ok((cells, session.current_report()))
}

/// Deterministic hold-out split: a fixed shuffle of the records, the last
/// `test_fraction` of which (at least one) form the test corpus.
pub fn split_corpus(corpus: &Corpus, test_fraction: f64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test fraction must lie strictly between 0 and 1".into()));
    }
    let n = corpus.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
    if n_test >= n {
        return Err(Error::Config(format!("cannot hold out {n_test} of {n} records")));
    }
    let mut records = corpus.records().to_vec();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let test = records.split_off(n - n_test);
    records.sort_by_key(|r| corpus.position(r.id));
    let mut test = test;
    test.sort_by_key(|r| corpus.position(r.id));
    Ok((Corpus::new(corpus.kind(), records)?, Corpus::new(corpus.kind(), test)?))
}

/// Runs every (strategy, seed) cell in parallel. Cells are sorted by
/// strategy, seed and budget.
pub fn run_simulation(train: &Corpus, test: &Corpus, cfg: &SimulationConfig) -> Result<SimulationResult> {
    cfg.validate(train.len())?;
    let jobs: Vec<(SimStrategy, u64)> =
        cfg.strategies.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let results: Vec<(SimStrategy, u64, Vec<SimulationCell>, QualityReport)> = jobs
        .par_iter()
        .map(|&(s, seed)| run_cell(train, test, cfg, s, seed).map(|(cells, report)| (s, seed, cells, report)))
        .collect::<Result<_>>()?;

    let mut cells: Vec<SimulationCell> = results.iter().flat_map(|r| r.2.clone()).collect();
    cells.sort_by(|a, b| (a.strategy, a.seed, a.budget).cmp(&(b.strategy, b.seed, b.budget)));
    let final_reports = results.into_iter().map(|(s, seed, _, report)| (s, seed, report)).collect();
    Ok(SimulationResult { cells, final_reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, DelimiterConfig, RecordKind};

    fn corpus(n: usize, seed: u64) -> Corpus {
        let raw = make_synthetic_dataset(n, seed).unwrap();
        parse_corpus(raw.as_bytes(), &DelimiterConfig::default(), RecordKind::AttributeValue).unwrap()
    }

    fn tiny() -> SimulationConfig {
        let mut cfg = SimulationConfig::desk_scale();
        cfg.budgets = vec![40, 120];
        cfg.seeds = vec![1, 2];
        cfg.session.retrain_interval = 60;
        cfg.session.model = crate::scorer::ModelConfig { model_dim: 8, layers: 1, heads: 2, ff_dim: 8, max_len: 48, seed: 0 };
        cfg
    }

    #[test]
    fn exhaustion_gives_equal_scores() {
        let (train, test) = (corpus(120, 1), corpus(100, 2));
        let result = run_simulation(&train, &test, &tiny()).unwrap();
        assert_eq!(result.cells.len(), 3 * 2 * 2);
        for seed in [1, 2] {
            let at_full: Vec<f64> = result
                .cells
                .iter()
                .filter(|c| c.seed == seed && c.budget == 120)
                .map(|c| c.bleu)
                .collect();
            assert_eq!(at_full.len(), 3);
            assert!(at_full.iter().all(|&b| b == at_full[0]), "{at_full:?}");
        }
        let all: Vec<f64> = result.cells.iter().filter(|c| c.strategy == SimStrategy::All).map(|c| c.bleu).collect();
        assert!(all.iter().all(|&b| b == all[0]));
        assert!(result.to_csv().starts_with("strategy,seed,budget,bleu,runtime_s\n"));
    }

    #[test]
    fn budget_above_pool_is_rejected() {
        let (train, test) = (corpus(100, 1), corpus(100, 2));
        let mut cfg = tiny();
        cfg.budgets = vec![50, 101];
        assert!(run_simulation(&train, &test, &cfg).is_err());
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let all = corpus(200, 3);
        let (train, test) = split_corpus(&all, 0.2).unwrap();
        assert_eq!((train.len(), test.len()), (160, 40));
        let ids: std::collections::BTreeSet<_> = train.ids().chain(test.ids()).collect();
        assert_eq!(ids.len(), 200);
        assert_eq!(split_corpus(&all, 0.2).unwrap().1, test);
        assert!(split_corpus(&all, 1.0).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in SimStrategy::ALL {
            assert_eq!(s.as_str().parse::<SimStrategy>().unwrap(), s);
        }
        assert!("best".parse::<SimStrategy>().is_err());
    }
}
