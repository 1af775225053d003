//! An annotation campaign: corpus, pools, batches in flight, label
//! submissions, background training, persistence and export.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, attribute_signature, BowVector, BowVocabulary, ClusterIndex, IndexInput};
use crate::corpus::{
    linearize, parse_corpus, train_bpe, Corpus, DelimiterConfig, LabelSource, LinearizedData, MergeTable, RecordId,
    RecordKind, TextLabel, Tokenizer, TokenizerConfig, TokenizerMode,
};
use crate::error::{Error, Result};
use crate::quality::{should_stop, Coverage, QualityReport, QualityTracker, StopDecision, StoppingThresholds};
use crate::sampler::{Batch, SamplerState};
use crate::scorer::{
    score_all, snapshot, train_round_trip, EpochLoss, ModelConfig, Seq2SeqModel, TrainConfig, UncertaintyScore,
    Vocabulary,
};
use crate::suggester::{self, LabeledPool};

pub const SESSION_FORMAT: &str = "textloom-session";
pub const SESSION_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_RETRAIN_INTERVAL: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Sampler,
    /// Uniform batches; the scorer is never trained.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub kind: RecordKind,
    pub delimiters: DelimiterConfig,
    pub tokenizer: TokenizerConfig,
    pub k: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// Labels between automatic training rounds.
    pub retrain_interval: usize,
    /// Run training on a worker thread; otherwise it blocks the submission
    /// that triggers it.
    pub background_training: bool,
    pub msttr_segment: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub thresholds: StoppingThresholds,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            kind: RecordKind::AttributeValue,
            delimiters: DelimiterConfig::default(),
            tokenizer: TokenizerConfig::default(),
            k: clustering::DEFAULT_K,
            seed: 0,
            strategy: Strategy::Sampler,
            retrain_interval: DEFAULT_RETRAIN_INTERVAL,
            background_training: true,
            msttr_segment: crate::quality::DEFAULT_MSTTR_SEGMENT,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            thresholds: StoppingThresholds::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.delimiters.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.retrain_interval == 0 {
            return Err(Error::Config("retrain_interval must be positive".into()));
        }
        if self.msttr_segment == 0 {
            return Err(Error::Config("msttr_segment must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrainingStatus {
    Idle,
    Running { progress: f64 },
    Failed { reason: String },
}

/// Persisted part of a session. Everything else is derived on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Persisted {
    format: String,
    version: u32,
    config: SessionConfig,
    corpus: Corpus,
    merges: Option<MergeTable>,
    sampler: SamplerState,
    labels: Vec<TextLabel>,
    /// Suggestion text shown for each in-flight id.
    suggestions: BTreeMap<RecordId, Option<String>>,
    model: String,
    training: TrainingStatus,
    history: Vec<QualityReport>,
    labels_since_training: usize,
    batches_issued: u64,
    last_trace: Vec<EpochLoss>,
}

struct TrainingOutput {
    model: Seq2SeqModel,
    scores: Vec<UncertaintyScore>,
    trace: Vec<EpochLoss>,
}

struct TrainingJob {
    progress: Arc<AtomicU64>,
    result: Receiver<Result<TrainingOutput>>,
    handle: JoinHandle<()>,
}

pub struct Session {
    config: SessionConfig,
    corpus: Corpus,
    merges: Option<MergeTable>,
    sampler: SamplerState,
    labels: Vec<TextLabel>,
    suggestions: BTreeMap<RecordId, Option<String>>,
    model: Arc<Seq2SeqModel>,
    training: TrainingStatus,
    history: Vec<QualityReport>,
    labels_since_training: usize,
    batches_issued: u64,
    last_trace: Vec<EpochLoss>,

    tokenizer: Tokenizer,
    linearized: Vec<LinearizedData>,
    bow_vocab: BowVocabulary,
    vectors: Vec<BowVector>,
    signatures: Vec<String>,
    coverage: BTreeMap<String, Coverage>,
    pool: LabeledPool,
    tracker: QualityTracker,
    job: Option<TrainingJob>,
}

/// One row of the export file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub record_id: RecordId,
    pub data: String,
    pub label: String,
    pub source: LabelSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub annotated: Vec<ExportRow>,
    pub predicted: Vec<ExportRow>,
    pub report: QualityReport,
    pub config: SessionConfig,
}

struct Derived {
    tokenizer: Tokenizer,
    linearized: Vec<LinearizedData>,
    bow_vocab: BowVocabulary,
    vectors: Vec<BowVector>,
    signatures: Vec<String>,
}

fn derive(corpus: &Corpus, config: &SessionConfig, merges: Option<MergeTable>) -> Result<Derived> {
    let tokenizer = Tokenizer::new(config.tokenizer.clone(), merges)?;
    let linearized: Vec<LinearizedData> = corpus
        .records()
        .iter()
        .map(|r| linearize(r, &config.delimiters, &tokenizer))
        .collect::<Result<_>>()?;
    let bow_vocab = BowVocabulary::build(linearized.iter().map(|d| &d.tokens));
    let vectors: Vec<BowVector> =
        linearized.iter().map(|d| clustering::vectorize(d, &bow_vocab)).collect::<Result<_>>()?;
    let signatures = corpus.records().iter().map(attribute_signature).collect();
    Ok(Derived { tokenizer, linearized, bow_vocab, vectors, signatures })
}

fn validate_label_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    if text.contains(['\t', '\n', '\r']) {
        return Err(Error::Config("label text must not contain tabs or line breaks".into()));
    }
    Ok(())
}

impl Session {
    /// Parses the corpus file and builds everything a fresh campaign needs.
    pub fn create(raw: &[u8], config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let corpus = parse_corpus(raw, &config.delimiters, config.kind)?;
        Self::from_corpus(corpus, config)
    }

    pub fn from_corpus(corpus: Corpus, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let merges = match config.tokenizer.mode {
            TokenizerMode::Bpe => {
                let texts: Vec<String> =
                    corpus.records().iter().map(|r| r.data_text(&config.delimiters)).collect();
                Some(train_bpe(&texts, config.tokenizer.bpe_vocab_size)?)
            }
            _ => None,
        };
        let derived = derive(&corpus, &config, merges.clone())?;

        let inputs: Vec<IndexInput<'_>> = corpus
            .ids()
            .zip(&derived.vectors)
            .zip(&derived.signatures)
            .map(|((id, vector), signature)| IndexInput { id, signature: signature.clone(), vector })
            .collect();
        let index = clustering::build_index(&inputs, derived.bow_vocab.dim(), config.k, config.seed)?;

        let vocab = Vocabulary::build(derived.linearized.iter().flat_map(|d| &d.tokens));
        let longest = derived.linearized.iter().map(|d| d.tokens.len()).max().unwrap_or(0);
        if longest > config.model.max_len {
            log::warn!("longest record has {longest} tokens; max_len {} truncates it", config.model.max_len);
        }
        let model = Seq2SeqModel::new(config.model, vocab)?;

        let persisted = Persisted {
            format: SESSION_FORMAT.to_string(),
            version: SESSION_FORMAT_VERSION,
            sampler: SamplerState::new(index, config.seed),
            config,
            corpus,
            merges,
            labels: Vec::new(),
            suggestions: BTreeMap::new(),
            model: String::new(),
            training: TrainingStatus::Idle,
            history: Vec::new(),
            labels_since_training: 0,
            batches_issued: 0,
            last_trace: Vec::new(),
        };
        Self::assemble(persisted, model, derived)
    }

    fn assemble(p: Persisted, model: Seq2SeqModel, d: Derived) -> Result<Self> {
        let mut coverage: BTreeMap<String, Coverage> = BTreeMap::new();
        for sig in &d.signatures {
            coverage.entry(sig.clone()).or_default().total += 1;
        }
        let mut pool = LabeledPool::new();
        let mut tracker = QualityTracker::new(p.config.msttr_segment);
        for label in &p.labels {
            let pos = p
                .corpus
                .position(label.record_id)
                .ok_or_else(|| Error::SessionFormat(format!("label for unknown record {}", label.record_id)))?;
            pool.push(label.record_id, d.vectors[pos].clone(), label.clone());
            tracker.push(label);
            coverage.get_mut(&d.signatures[pos]).expect("signature counted").labeled += 1;
        }
        let training = match p.training {
            TrainingStatus::Running { .. } => TrainingStatus::Idle,
            other => other,
        };
        Ok(Self {
            config: p.config,
            corpus: p.corpus,
            merges: p.merges,
            sampler: p.sampler,
            labels: p.labels,
            suggestions: p.suggestions,
            model: Arc::new(model),
            training,
            history: p.history,
            labels_since_training: p.labels_since_training,
            batches_issued: p.batches_issued,
            last_trace: p.last_trace,
            tokenizer: d.tokenizer,
            linearized: d.linearized,
            bow_vocab: d.bow_vocab,
            vectors: d.vectors,
            signatures: d.signatures,
            coverage,
            pool,
            tracker,
            job: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn index(&self) -> &ClusterIndex {
        &self.sampler.index
    }

    pub fn sampler(&self) -> &SamplerState {
        &self.sampler
    }

    pub fn model(&self) -> &Seq2SeqModel {
        &self.model
    }

    pub fn labels(&self) -> &[TextLabel] {
        &self.labels
    }

    pub fn pool(&self) -> &LabeledPool {
        &self.pool
    }

    pub fn history(&self) -> &[QualityReport] {
        &self.history
    }

    pub fn training_status(&self) -> &TrainingStatus {
        &self.training
    }

    pub fn last_trace(&self) -> &[EpochLoss] {
        &self.last_trace
    }

    pub fn bow_vocabulary(&self) -> &BowVocabulary {
        &self.bow_vocab
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.corpus.len() - self.labels.len()
    }

    pub fn is_labeled(&self, id: RecordId) -> bool {
        self.sampler.labeled.contains(&id)
    }

    fn position(&self, id: RecordId) -> Result<usize> {
        self.corpus.position(id).ok_or(Error::UnknownRecord(id))
    }

    pub fn linearized(&self, id: RecordId) -> Result<&LinearizedData> {
        Ok(&self.linearized[self.position(id)?])
    }

    pub fn vector(&self, id: RecordId) -> Result<&BowVector> {
        Ok(&self.vectors[self.position(id)?])
    }

    /// The record's data column as it appears in the corpus file.
    pub fn data_text(&self, id: RecordId) -> Result<String> {
        Ok(self.corpus.records()[self.position(id)?].data_text(&self.config.delimiters))
    }

    pub fn current_report(&self) -> QualityReport {
        self.tracker.report(&self.coverage)
    }

    pub fn stop_decision(&self) -> StopDecision {
        should_stop(&self.current_report(), &self.config.thresholds)
    }

    /// Next batch from the configured strategy, each id carrying the label
    /// of its nearest labeled neighbour when one exists.
    pub fn request_batch(&mut self, size: usize) -> Result<Batch> {
        if size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.poll_training();
        let mut batch = match self.config.strategy {
            Strategy::Sampler => self.sampler.next_batch(size),
            Strategy::Random => {
                let seed = self.config.seed.wrapping_add(self.batches_issued);
                self.sampler.random_batch(size, seed)
            }
        };
        self.batches_issued += 1;
        for item in &mut batch.items {
            let pos = self.corpus.position(item.record_id).expect("index ids come from the corpus");
            item.suggestion = suggester::suggest(&self.vectors[pos], &self.pool);
            self.suggestions.insert(item.record_id, item.suggestion.as_ref().map(|s| s.text.clone()));
        }
        Ok(batch)
    }

    /// Records a label for an issued id. Returns the stored label.
    pub fn submit_label(&mut self, id: RecordId, text: &str) -> Result<TextLabel> {
        self.poll_training();
        let pos = self.position(id)?;
        if self.is_labeled(id) {
            return Err(Error::AlreadyLabeled(id));
        }
        if !self.sampler.issued.contains(&id) {
            return Err(Error::NotIssued(id));
        }
        validate_label_text(text)?;
        let source = match self.suggestions.get(&id) {
            Some(Some(s)) if s == text => LabelSource::SuggestedAccepted,
            Some(Some(_)) => LabelSource::SuggestedCorrected,
            _ => LabelSource::Human,
        };
        let label = TextLabel::new(id, text, source, &self.tokenizer)?;

        self.suggestions.remove(&id);
        self.sampler.mark_labeled(id);
        self.pool.push(id, self.vectors[pos].clone(), label.clone());
        self.tracker.push(&label);
        self.coverage.get_mut(&self.signatures[pos]).expect("signature counted").labeled += 1;
        self.labels.push(label.clone());
        self.history.push(self.tracker.report(&self.coverage));
        self.labels_since_training += 1;

        if self.config.strategy == Strategy::Sampler
            && self.labels_since_training >= self.config.retrain_interval
            && self.job.is_none()
            && self.unlabeled_count() > 0
        {
            self.start_training()?;
        }
        Ok(label)
    }

    /// Starts a training round now. Fails while one is running or when no
    /// unlabeled data is left to train and score on.
    pub fn train(&mut self) -> Result<()> {
        self.poll_training();
        if self.job.is_some() {
            return Err(Error::TrainingBusy);
        }
        if self.unlabeled_count() == 0 {
            return Err(Error::Config("no unlabeled records left to train on".into()));
        }
        self.start_training()
    }

    fn start_training(&mut self) -> Result<()> {
        let unlabeled: Vec<LinearizedData> = self
            .linearized
            .iter()
            .filter(|d| !self.sampler.labeled.contains(&d.record_id))
            .cloned()
            .collect();
        let labeled: Vec<(LinearizedData, TextLabel)> = self
            .labels
            .iter()
            .map(|l| (self.linearized[self.corpus.position(l.record_id).expect("labeled id")].clone(), l.clone()))
            .collect();
        let model = Arc::clone(&self.model);
        let mut cfg = self.config.train.clone();
        cfg.seed = cfg.seed.wrapping_add(model.version());
        self.labels_since_training = 0;

        let run = move |progress: &AtomicU64| -> Result<TrainingOutput> {
            let report = |f: f64| progress.store(f.to_bits(), Ordering::Relaxed);
            let outcome = train_round_trip(&model, &unlabeled, &labeled, &cfg, &report)?;
            let scores = score_all(&outcome.model, &unlabeled)?;
            Ok(TrainingOutput { model: outcome.model, scores, trace: outcome.trace })
        };

        if !self.config.background_training {
            let progress = AtomicU64::new(0);
            let result = run(&progress);
            self.adopt(result);
            return Ok(());
        }
        let progress = Arc::new(AtomicU64::new(0f64.to_bits()));
        let (tx, rx) = mpsc::channel();
        let shared = Arc::clone(&progress);
        let handle = std::thread::Builder::new()
            .name("textloom-train".into())
            .spawn(move || {
                let _ = tx.send(run(&shared));
            })?;
        self.training = TrainingStatus::Running { progress: 0.0 };
        self.job = Some(TrainingJob { progress, result: rx, handle });
        Ok(())
    }

    fn adopt(&mut self, result: Result<TrainingOutput>) {
        match result {
            Ok(out) => {
                self.model = Arc::new(out.model);
                self.sampler.set_scores(out.scores);
                self.last_trace = out.trace;
                self.training = TrainingStatus::Idle;
            }
            Err(e) => {
                log::error!("training failed: {e}");
                self.training = TrainingStatus::Failed { reason: e.to_string() };
            }
        }
    }

    /// Adopts a finished background round. Returns true when the model or
    /// training status changed.
    pub fn poll_training(&mut self) -> bool {
        let Some(job) = &self.job else { return false };
        match job.result.try_recv() {
            Ok(result) => {
                let job = self.job.take().expect("job present");
                let _ = job.handle.join();
                self.adopt(result);
                true
            }
            Err(TryRecvError::Empty) => {
                let progress = f64::from_bits(job.progress.load(Ordering::Relaxed));
                self.training = TrainingStatus::Running { progress };
                false
            }
            Err(TryRecvError::Disconnected) => {
                self.job = None;
                self.training = TrainingStatus::Failed { reason: "training thread exited".into() };
                true
            }
        }
    }

    /// Blocks until the running round, if any, finishes and is adopted.
    pub fn wait_for_training(&mut self) {
        if let Some(job) = self.job.take() {
            let result = job.result.recv().unwrap_or_else(|_| Err(Error::Config("training thread exited".into())));
            let _ = job.handle.join();
            self.adopt(result);
        }
    }

    pub fn training_running(&self) -> bool {
        self.job.is_some()
    }

    /// Ids issued in a batch but not yet labeled.
    pub fn in_flight(&self) -> Vec<RecordId> {
        self.sampler.in_flight()
    }

    /// Lets in-flight ids be issued again, e.g. after a restart.
    pub fn release_in_flight(&mut self) {
        self.sampler.release_in_flight();
    }

    /// Annotated rows plus nearest-neighbour predictions for every other
    /// record; predictions are empty while nothing is labeled.
    pub fn export(&self) -> ExportBundle {
        let mut annotated: Vec<ExportRow> = self
            .labels
            .iter()
            .map(|l| ExportRow {
                record_id: l.record_id,
                data: self.data_text(l.record_id).expect("labeled id"),
                label: l.text.clone(),
                source: l.source,
            })
            .collect();
        annotated.sort_by_key(|r| self.corpus.position(r.record_id));
        let predicted = if self.pool.is_empty() {
            Vec::new()
        } else {
            let queries = self
                .corpus
                .ids()
                .zip(&self.vectors)
                .filter(|(id, _)| !self.sampler.labeled.contains(id));
            suggester::predict_all(queries, &self.pool)
                .expect("pool is non-empty")
                .into_values()
                .map(|l| ExportRow {
                    record_id: l.record_id,
                    data: self.data_text(l.record_id).expect("corpus id"),
                    label: l.text,
                    source: l.source,
                })
                .collect::<Vec<_>>()
        };
        let mut predicted = predicted;
        predicted.sort_by_key(|r| self.corpus.position(r.record_id));
        ExportBundle { annotated, predicted, report: self.current_report(), config: self.config.clone() }
    }

    /// Flat numeric statistics: the quality report, pool sizes and the
    /// training state (0 idle, 1 running, 2 failed) with its progress.
    pub fn stats(&self) -> Vec<(String, f64)> {
        let report = self.current_report();
        let mut out = report.key_values();
        let total = self.corpus.len() as f64;
        let (state, progress) = match &self.training {
            TrainingStatus::Idle => (0.0, if self.model.version() > 0 { 1.0 } else { 0.0 }),
            TrainingStatus::Running { progress } => (1.0, *progress),
            TrainingStatus::Failed { .. } => (2.0, 0.0),
        };
        out.extend([
            ("corpus_size".to_string(), total),
            ("unlabeled_count".to_string(), self.unlabeled_count() as f64),
            ("labeled_fraction".to_string(), self.labels.len() as f64 / total),
            ("in_flight".to_string(), self.in_flight().len() as f64),
            ("model_version".to_string(), self.model.version() as f64),
            ("training_state".to_string(), state),
            ("training_progress".to_string(), progress),
            ("labels_until_training".to_string(), self.labels_until_training() as f64),
            ("should_stop".to_string(), if self.stop_decision().stop { 1.0 } else { 0.0 }),
        ]);
        out
    }

    fn labels_until_training(&self) -> usize {
        self.config.retrain_interval.saturating_sub(self.labels_since_training)
    }

    fn persisted(&self) -> Persisted {
        Persisted {
            format: SESSION_FORMAT.to_string(),
            version: SESSION_FORMAT_VERSION,
            config: self.config.clone(),
            corpus: self.corpus.clone(),
            merges: self.merges.clone(),
            sampler: self.sampler.clone(),
            labels: self.labels.clone(),
            suggestions: self.suggestions.clone(),
            model: base64::engine::general_purpose::STANDARD.encode(snapshot::encode(&self.model)),
            training: self.training.clone(),
            history: self.history.clone(),
            labels_since_training: self.labels_since_training,
            batches_issued: self.batches_issued,
            last_trace: self.last_trace.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(&self.persisted()).map_err(|e| Error::SessionFormat(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::SessionFormat(format!("unreadable: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(SESSION_FORMAT) {
            return Err(Error::SessionFormat(format!("not a {SESSION_FORMAT} file")));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(SESSION_FORMAT_VERSION as u64) {
            let found = version.map_or_else(|| "none".to_string(), |v| v.to_string());
            return Err(Error::SessionFormat(format!(
                "unsupported version {found}, expected {SESSION_FORMAT_VERSION}"
            )));
        }
        let p: Persisted = serde_json::from_value(value).map_err(|e| Error::SessionFormat(e.to_string()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&p.model)
            .map_err(|e| Error::SessionFormat(format!("model encoding: {e}")))?;
        let model = snapshot::decode(&bytes)?;
        let derived = derive(&p.corpus, &p.config, p.merges.clone())?;
        Self::assemble(p, model, derived)
    }

    /// Writes to a sibling temporary file, syncs it and renames it over
    /// `path`, so a crash leaves either the old or the new file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            use std::io::Write;
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(job) = self.job.take() {
            let _ = job.handle.join();
        }
    }
}

impl ExportBundle {
    /// All rows in corpus order as `data<TAB>label<TAB>source` lines; an
    /// `id=` column leads rows whose id differs from their line position.
    pub fn to_text(&self, corpus: &Corpus) -> String {
        let mut rows: Vec<&ExportRow> = self.annotated.iter().chain(&self.predicted).collect();
        rows.sort_by_key(|r| corpus.position(r.record_id));
        let mut out = String::new();
        if corpus.kind() == RecordKind::Graph {
            out.push_str("#kind=graph\n");
        }
        for (line, row) in rows.iter().enumerate() {
            if row.record_id.0 as usize != line {
                out.push_str(&format!("id={}\t", row.record_id));
            }
            out.push_str(&format!("{}\t{}\t{}\n", row.data, row.label, row.source.as_str()));
        }
        out
    }

    /// `key=value` lines: the quality report, row counts and the flattened
    /// session configuration under `config.`.
    pub fn stats_text(&self) -> String {
        let mut out = self.report.to_key_value_text();
        out.push_str(&format!("annotated_count={}\n", self.annotated.len()));
        out.push_str(&format!("predicted_count={}\n", self.predicted.len()));
        let config = serde_json::to_value(&self.config).expect("config serializes");
        flatten("config", &config, &mut out);
        out
    }
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut String) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        serde_json::Value::Null => {}
        serde_json::Value::String(s) => out.push_str(&format!("{prefix}={s}\n")),
        other => out.push_str(&format!("{prefix}={other}\n")),
    }
}
