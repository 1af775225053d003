//! Round-trip uncertainty scorer.
//!
//! One Transformer encoder-decoder serves both directions (data to text and
//! text to data), selected by a control token. A record's uncertainty is the
//! mean per-token cross-entropy of reconstructing its data from the model's
//! own greedy text realization.

mod model;
pub mod snapshot;
mod tape;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LinearizedData, RecordId};
use crate::error::Result;

pub use model::{Direction, ModelConfig, Seq2SeqModel, Vocabulary, BOS, EOS, PAD, TO_DATA, TO_TEXT, UNK};
pub use tape::Matrix;
pub use train::{gradient_check, train_round_trip, EpochLoss, SequencePair, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub record_id: RecordId,
    /// Mean per-token cross-entropy in nats.
    pub score: f64,
    pub model_version: u64,
}

fn encode_data(model: &Seq2SeqModel, data: &LinearizedData) -> Result<Vec<usize>> {
    let ids = model.vocab().encode(&data.tokens)?;
    if ids.len() > model.config().max_len {
        log::warn!(
            "record {} has {} tokens; truncating to {}",
            data.record_id,
            ids.len(),
            model.config().max_len
        );
    }
    Ok(ids)
}

/// Data to text to data, both legs decoded greedily.
pub fn reconstruct(model: &Seq2SeqModel, data: &LinearizedData) -> Result<Vec<String>> {
    let ids = encode_data(model, data)?;
    let text = model.greedy(Direction::ToText, &ids);
    let back = model.greedy(Direction::ToData, &text);
    Ok(model.vocab().decode(&back))
}

/// Teacher-forced loss of recovering `data` from the greedy text realization.
pub fn uncertainty(model: &Seq2SeqModel, data: &LinearizedData) -> Result<UncertaintyScore> {
    let ids = encode_data(model, data)?;
    let text = model.greedy(Direction::ToText, &ids);
    let score = model.loss(Direction::ToData, &text, &ids);
    Ok(UncertaintyScore { record_id: data.record_id, score, model_version: model.version() })
}

/// Scores every record in parallel; the result order follows the input.
pub fn score_all(model: &Seq2SeqModel, data: &[LinearizedData]) -> Result<Vec<UncertaintyScore>> {
    data.par_iter().map(|d| uncertainty(model, d)).collect()
}

/// Corpus-level uncertainty: the mean of the per-record scores.
pub fn mean_uncertainty(scores: &[UncertaintyScore]) -> Option<f64> {
    (!scores.is_empty()).then(|| scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64)
}
