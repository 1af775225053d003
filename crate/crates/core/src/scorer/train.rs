use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Direction, Seq2SeqModel};
use super::tape::{Matrix, Tape};
use crate::corpus::{LinearizedData, TextLabel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Unlabeled instances drawn per epoch for the cycle loss.
    pub cycle_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, batch_size: 16, epochs: 2, clip_norm: 1.0, seed: 0, cycle_samples: 256 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) || self.batch_size == 0 || self.cycle_samples == 0 {
            return Err(Error::Config("training parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Mean losses over one epoch. A component is `None` when no example of
/// that kind was seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub forward: Option<f64>,
    pub backward: Option<f64>,
    pub cycle: Option<f64>,
    pub total: f64,
}

pub struct TrainOutcome {
    pub model: Seq2SeqModel,
    pub trace: Vec<EpochLoss>,
}

/// A source/target id pair for one direction of the shared model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePair {
    pub direction: Direction,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Forward,
    Backward,
    Cycle,
}

struct Example {
    kind: Kind,
    data: Vec<usize>,
    text: Vec<usize>,
}

/// Supervised forward and backward losses on labeled pairs plus the
/// round-trip loss on unlabeled data: the intermediate text is greedily
/// decoded without gradient, then the data is reconstructed from it under
/// teacher forcing. Returns a new snapshot with the next version.
pub fn train_round_trip(
    model: &Seq2SeqModel,
    unlabeled: &[LinearizedData],
    labeled: &[(LinearizedData, TextLabel)],
    cfg: &TrainConfig,
    progress: &(dyn Fn(f64) + Sync),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::Config("round-trip training needs unlabeled data".into()));
    }
    let vocab = model.vocab();
    let unlabeled_ids: Vec<Vec<usize>> =
        unlabeled.iter().map(|d| vocab.encode(&d.tokens)).collect::<Result<_>>()?;
    let mut supervised = Vec::with_capacity(labeled.len() * 2);
    for (d, t) in labeled {
        let data = vocab.encode(&d.tokens)?;
        let text = vocab.encode_lossy(&t.tokens);
        supervised.push(Example { kind: Kind::Forward, data: data.clone(), text: text.clone() });
        supervised.push(Example { kind: Kind::Backward, data, text });
    }

    let cycle_per_epoch = cfg.cycle_samples.min(unlabeled_ids.len());
    let steps_per_epoch = (supervised.len() + cycle_per_epoch).div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.params().to_vec();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<(Kind, usize)> = (0..supervised.len()).map(|i| (supervised[i].kind, i)).collect();
        let mut pool: Vec<usize> = (0..unlabeled_ids.len()).collect();
        pool.shuffle(&mut rng);
        order.extend(pool[..cycle_per_epoch].iter().map(|&i| (Kind::Cycle, i)));
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let current = model.with_params(params, model.version());
            let results: Vec<(f64, Vec<Matrix>)> = chunk
                .par_iter()
                .map(|&(kind, i)| {
                    let pair = match kind {
                        Kind::Cycle => {
                            let data = &unlabeled_ids[i];
                            SequencePair {
                                direction: Direction::ToData,
                                source: current.greedy(Direction::ToText, data),
                                target: data.clone(),
                            }
                        }
                        Kind::Forward => SequencePair {
                            direction: Direction::ToText,
                            source: supervised[i].data.clone(),
                            target: supervised[i].text.clone(),
                        },
                        Kind::Backward => SequencePair {
                            direction: Direction::ToData,
                            source: supervised[i].text.clone(),
                            target: supervised[i].data.clone(),
                        },
                    };
                    loss_and_grads(&current, &pair)
                })
                .collect();
            params = current.params;

            let scale = 1.0 / chunk.len() as f64;
            let mut grads: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
            for (&(kind, _), (loss, g)) in chunk.iter().zip(&results) {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                let slot = kind as usize;
                sums[slot] += loss;
                counts[slot] += 1;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.data.iter_mut().zip(&gi.data) {
                        *a += v * scale;
                    }
                }
            }
            let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let factor = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
            for (p, g) in params.iter_mut().zip(&grads) {
                for (pv, gv) in p.data.iter_mut().zip(&g.data) {
                    *pv -= cfg.learning_rate * factor * gv;
                }
            }
            step += 1;
            progress(step as f64 / total_steps as f64);
        }

        let mean = |k: Kind| (counts[k as usize] > 0).then(|| sums[k as usize] / counts[k as usize] as f64);
        let seen: usize = counts.iter().sum();
        trace.push(EpochLoss {
            forward: mean(Kind::Forward),
            backward: mean(Kind::Backward),
            cycle: mean(Kind::Cycle),
            total: sums.iter().sum::<f64>() / seen.max(1) as f64,
        });
    }

    let trained = model.with_params(params, model.version() + 1);
    if !trained.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: cfg.epochs.saturating_sub(1) });
    }
    progress(1.0);
    Ok(TrainOutcome { model: trained, trace })
}

fn loss_and_grads(model: &Seq2SeqModel, pair: &SequencePair) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new(model.params());
    let loss = model.sequence_loss(&mut tape, pair.direction, &pair.source, &pair.target);
    (tape.value(loss).data[0], tape.backward(loss))
}

fn batch_loss(model_params: &[Matrix], model: &Seq2SeqModel, batch: &[SequencePair]) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new(model_params);
    let terms: Vec<_> = batch
        .iter()
        .map(|p| (model.sequence_loss(&mut tape, p.direction, &p.source, &p.target), 1.0 / batch.len() as f64))
        .collect();
    let root = tape.weighted_sum(&terms);
    (tape.value(root).data[0], tape.backward(root))
}

/// Compares analytic gradients of the mean batch loss with central finite
/// differences (step 1e-4) on `sample` randomly chosen parameters and
/// returns the largest relative error. Parameters whose analytic and numeric
/// gradients are both below 1e-10 in magnitude contribute their absolute
/// difference instead.
pub fn gradient_check(model: &Seq2SeqModel, batch: &[SequencePair], sample: usize, seed: u64) -> Result<f64> {
    if sample == 0 {
        return Err(Error::EmptySample);
    }
    if batch.is_empty() {
        return Err(Error::Config("gradient check needs a non-empty batch".into()));
    }
    const STEP: f64 = 1e-4;
    let (_, analytic) = batch_loss(model.params(), model, batch);

    let coordinates: Vec<(usize, usize)> = model
        .params()
        .iter()
        .enumerate()
        .flat_map(|(t, m)| (0..m.len()).map(move |i| (t, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> =
        coordinates.choose_multiple(&mut rng, sample.min(coordinates.len())).copied().collect();

    let mut params = model.params().to_vec();
    let mut worst: f64 = 0.0;
    for (t, i) in picked {
        let original = params[t].data[i];
        params[t].data[i] = original + STEP;
        let plus = batch_loss_value(&params, model, batch);
        params[t].data[i] = original - STEP;
        let minus = batch_loss_value(&params, model, batch);
        params[t].data[i] = original;

        let numeric = (plus - minus) / (2.0 * STEP);
        let exact = analytic[t].data[i];
        let scale = exact.abs().max(numeric.abs());
        let err = if scale < 1e-10 { (exact - numeric).abs() } else { (exact - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

fn batch_loss_value(params: &[Matrix], model: &Seq2SeqModel, batch: &[SequencePair]) -> f64 {
    let mut tape = Tape::new(params);
    batch
        .iter()
        .map(|p| {
            let n = model.sequence_loss(&mut tape, p.direction, &p.source, &p.target);
            tape.value(n).data[0]
        })
        .sum::<f64>()
        / batch.len() as f64
}
