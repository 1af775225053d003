use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{add_row_in_place, gelu, layer_norm_rows, matmul, matmul_bt, softmax_rows, Matrix, Node, Tape};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const TO_TEXT: usize = 3;
pub const TO_DATA: usize = 4;
pub const UNK: usize = 5;
const SPECIALS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<to_text>", "<to_data>", "<unk>"];

/// Shared vocabulary for data and text tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Specials first, then the distinct tokens in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a String>) -> Self {
        let mut distinct: Vec<&String> = tokens.into_iter().collect();
        distinct.sort();
        distinct.dedup();
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(distinct.into_iter().filter(|t| !SPECIALS.contains(&t.as_str())).cloned());
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Errors on tokens outside the vocabulary.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| self.ids.get(t).copied().ok_or_else(|| Error::UnknownToken(t.clone())))
            .collect()
    }

    /// Maps tokens outside the vocabulary to the unknown token.
    pub fn encode_lossy(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.ids.get(t).copied().unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { model_dim: 64, layers: 2, heads: 2, ff_dim: 128, max_len: 64, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.layers == 0 || self.heads == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config("model_dim must be divisible by heads".into()));
        }
        Ok(())
    }
}

/// Which way the shared model translates; selected by a control token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToText,
    ToData,
}

impl Direction {
    fn control(self) -> usize {
        match self {
            Direction::ToText => TO_TEXT,
            Direction::ToData => TO_DATA,
        }
    }
}

#[derive(Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy)]
struct Attention {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Copy)]
struct FeedForward {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct EncoderLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ff: FeedForward,
}

struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ff: FeedForward,
}

/// Parameter indices; a pure function of the config and vocabulary size.
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out_w: usize,
    out_b: usize,
}

enum Init {
    Embedding,
    Xavier,
    Zero,
    One,
}

struct LayoutBuilder {
    shapes: Vec<(usize, usize, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, rows: usize, cols: usize, init: Init) -> usize {
        self.shapes.push((rows, cols, init));
        self.shapes.len() - 1
    }

    fn norm(&mut self, d: usize) -> Norm {
        Norm { gain: self.add(1, d, Init::One), bias: self.add(1, d, Init::Zero) }
    }

    fn attention(&mut self, d: usize) -> Attention {
        Attention {
            wq: self.add(d, d, Init::Xavier),
            bq: self.add(1, d, Init::Zero),
            wk: self.add(d, d, Init::Xavier),
            bk: self.add(1, d, Init::Zero),
            wv: self.add(d, d, Init::Xavier),
            bv: self.add(1, d, Init::Zero),
            wo: self.add(d, d, Init::Xavier),
            bo: self.add(1, d, Init::Zero),
        }
    }

    fn feed_forward(&mut self, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            w1: self.add(d, ff, Init::Xavier),
            b1: self.add(1, ff, Init::Zero),
            w2: self.add(ff, d, Init::Xavier),
            b2: self.add(1, d, Init::Zero),
        }
    }
}

fn layout(config: &ModelConfig, vocab: usize) -> (Layout, Vec<(usize, usize, Init)>) {
    let d = config.model_dim;
    let mut b = LayoutBuilder { shapes: Vec::new() };
    let tok_emb = b.add(vocab, d, Init::Embedding);
    let pos_emb = b.add(config.max_len + 1, d, Init::Embedding);
    let encoder = (0..config.layers)
        .map(|_| EncoderLayer {
            norm1: b.norm(d),
            attn: b.attention(d),
            norm2: b.norm(d),
            ff: b.feed_forward(d, config.ff_dim),
        })
        .collect();
    let enc_norm = b.norm(d);
    let decoder = (0..config.layers)
        .map(|_| DecoderLayer {
            norm1: b.norm(d),
            self_attn: b.attention(d),
            norm2: b.norm(d),
            cross_attn: b.attention(d),
            norm3: b.norm(d),
            ff: b.feed_forward(d, config.ff_dim),
        })
        .collect();
    let dec_norm = b.norm(d);
    let out_w = b.add(d, vocab, Init::Xavier);
    let out_b = b.add(1, vocab, Init::Zero);
    let layout = Layout { tok_emb, pos_emb, encoder, enc_norm, decoder, dec_norm, out_w, out_b };
    (layout, b.shapes)
}

/// Transformer encoder-decoder shared by both translation directions.
/// Snapshots are immutable; training produces a new model.
pub struct Seq2SeqModel {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocabulary,
    pub(crate) params: Vec<Matrix>,
    pub(crate) version: u64,
    layout: Layout,
}

impl Clone for Seq2SeqModel {
    fn clone(&self) -> Self {
        Self::from_parts(self.config, self.vocab.clone(), self.params.clone(), self.version)
            .expect("cloned parameters match the layout")
    }
}

impl std::fmt::Debug for Seq2SeqModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Seq2SeqModel")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab.len())
            .field("parameters", &self.parameter_count())
            .field("version", &self.version)
            .finish()
    }
}

impl PartialEq for Seq2SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.params == other.params
            && self.version == other.version
    }
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let (_, shapes) = layout(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = shapes
            .iter()
            .map(|(rows, cols, init)| {
                let n = rows * cols;
                let data = match init {
                    Init::Zero => vec![0.0; n],
                    Init::One => vec![1.0; n],
                    Init::Embedding => (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
                    Init::Xavier => {
                        let a = (6.0 / (rows + cols) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a)).collect()
                    }
                };
                Matrix::from_vec(*rows, *cols, data)
            })
            .collect();
        Self::from_parts(config, vocab, params, 0)
    }

    /// A model whose output logits are identically zero, i.e. a uniform
    /// predictor over the vocabulary.
    pub fn uniform(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        let mut model = Self::new(config, vocab)?;
        let (out_w, out_b) = (model.layout.out_w, model.layout.out_b);
        model.params[out_w].data.iter_mut().for_each(|x| *x = 0.0);
        model.params[out_b].data.iter_mut().for_each(|x| *x = 0.0);
        Ok(model)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: Vec<Matrix>,
        version: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (layout, shapes) = layout(&config, vocab.len());
        if shapes.len() != params.len()
            || shapes.iter().zip(&params).any(|((r, c, _), p)| (*r, *c) != (p.rows, p.cols))
        {
            return Err(Error::SnapshotFormat("parameter shapes do not match the config".into()));
        }
        Ok(Self { config, vocab, params, version, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn with_params(&self, params: Vec<Matrix>, version: u64) -> Self {
        Self::from_parts(self.config, self.vocab.clone(), params, version)
            .expect("parameter shapes unchanged")
    }

    /// Truncates to the positional capacity.
    pub(crate) fn clip<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        &ids[..ids.len().min(self.config.max_len)]
    }

    fn embed(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Node {
        let tok = tape.gather(self.layout.tok_emb, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather(self.layout.pos_emb, &positions);
        tape.add(tok, pos)
    }

    fn norm(&self, tape: &mut Tape<'_>, x: Node, norm: Norm) -> Node {
        let g = tape.param(norm.gain);
        let b = tape.param(norm.bias);
        tape.layer_norm(x, g, b)
    }

    fn linear(&self, tape: &mut Tape<'_>, x: Node, w: usize, b: usize) -> Node {
        let wn = tape.param(w);
        let h = tape.matmul(x, wn);
        let bn = tape.param(b);
        tape.add_row(h, bn)
    }

    fn attention(&self, tape: &mut Tape<'_>, query: Node, memory: Node, p: Attention, causal: bool) -> Node {
        let q = self.linear(tape, query, p.wq, p.bq);
        let k = self.linear(tape, memory, p.wk, p.bk);
        let v = self.linear(tape, memory, p.wv, p.bv);
        let head_dim = self.config.model_dim / self.config.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let heads: Vec<Node> = (0..self.config.heads)
            .map(|h| {
                let start = h * head_dim;
                let qh = tape.slice_cols(q, start, head_dim);
                let kh = tape.slice_cols(k, start, head_dim);
                let vh = tape.slice_cols(v, start, head_dim);
                let scores = tape.matmul_bt(qh, kh);
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax(scores, causal);
                tape.matmul(weights, vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        self.linear(tape, joined, p.wo, p.bo)
    }

    fn feed_forward(&self, tape: &mut Tape<'_>, x: Node, p: FeedForward) -> Node {
        let h = self.linear(tape, x, p.w1, p.b1);
        let h = tape.gelu(h);
        self.linear(tape, h, p.w2, p.b2)
    }

    /// Encodes `[control] + source`, returning the memory rows.
    pub(crate) fn encode(&self, tape: &mut Tape<'_>, direction: Direction, source: &[usize]) -> Node {
        let mut ids = Vec::with_capacity(source.len() + 1);
        ids.push(direction.control());
        ids.extend_from_slice(self.clip(source));
        let mut x = self.embed(tape, &ids);
        for layer in &self.layout.encoder {
            let h = self.norm(tape, x, layer.norm1);
            let h = self.attention(tape, h, h, layer.attn, false);
            x = tape.add(x, h);
            let h = self.norm(tape, x, layer.norm2);
            let h = self.feed_forward(tape, h, layer.ff);
            x = tape.add(x, h);
        }
        self.norm(tape, x, self.layout.enc_norm)
    }

    /// Logits for every position of the decoder input `[BOS] + prefix`.
    pub(crate) fn decode_logits(&self, tape: &mut Tape<'_>, memory: Node, decoder_input: &[usize]) -> Node {
        let mut y = self.embed(tape, decoder_input);
        for layer in &self.layout.decoder {
            let h = self.norm(tape, y, layer.norm1);
            let h = self.attention(tape, h, h, layer.self_attn, true);
            y = tape.add(y, h);
            let h = self.norm(tape, y, layer.norm2);
            let h = self.attention(tape, h, memory, layer.cross_attn, false);
            y = tape.add(y, h);
            let h = self.norm(tape, y, layer.norm3);
            let h = self.feed_forward(tape, h, layer.ff);
            y = tape.add(y, h);
        }
        let y = self.norm(tape, y, self.layout.dec_norm);
        self.linear(tape, y, self.layout.out_w, self.layout.out_b)
    }

    /// Teacher-forced mean per-token cross-entropy of `target + [EOS]`.
    pub(crate) fn sequence_loss(
        &self,
        tape: &mut Tape<'_>,
        direction: Direction,
        source: &[usize],
        target: &[usize],
    ) -> Node {
        let target = self.clip(target);
        let memory = self.encode(tape, direction, source);
        let mut decoder_input = Vec::with_capacity(target.len() + 1);
        decoder_input.push(BOS);
        decoder_input.extend_from_slice(target);
        let logits = self.decode_logits(tape, memory, &decoder_input);
        let mut expected = target.to_vec();
        expected.push(EOS);
        tape.cross_entropy(logits, &expected)
    }

    /// Greedy decode; stops at EOS (excluded) or after `max_len` tokens.
    /// Decoder keys and values are cached per layer, so each step runs the
    /// stack on the newest position only.
    pub fn greedy(&self, direction: Direction, source: &[usize]) -> Vec<usize> {
        let memory = {
            let mut tape = Tape::new(&self.params);
            let node = self.encode(&mut tape, direction, source);
            tape.value(node).clone()
        };
        let p = &self.params;
        let cross: Vec<(Matrix, Matrix)> = self
            .layout
            .decoder
            .iter()
            .map(|l| {
                let a = l.cross_attn;
                (linear_rows(&memory, &p[a.wk], &p[a.bk]), linear_rows(&memory, &p[a.wv], &p[a.bv]))
            })
            .collect();
        let d = self.config.model_dim;
        let mut keys: Vec<Matrix> = self.layout.decoder.iter().map(|_| Matrix::zeros(0, d)).collect();
        let mut values = keys.clone();

        let mut output = Vec::new();
        let mut token = BOS;
        while output.len() < self.config.max_len {
            let position = output.len();
            let mut x = Matrix::from_vec(1, d, p[self.layout.tok_emb].row(token).to_vec());
            x.add_assign(&Matrix::from_vec(1, d, p[self.layout.pos_emb].row(position).to_vec()));
            for (l, layer) in self.layout.decoder.iter().enumerate() {
                let h = self.norm_rows(&x, layer.norm1);
                let a = layer.self_attn;
                let q = linear_rows(&h, &p[a.wq], &p[a.bq]);
                append_row(&mut keys[l], &linear_rows(&h, &p[a.wk], &p[a.bk]));
                append_row(&mut values[l], &linear_rows(&h, &p[a.wv], &p[a.bv]));
                x.add_assign(&self.attend_rows(&q, &keys[l], &values[l], a));

                let h = self.norm_rows(&x, layer.norm2);
                let a = layer.cross_attn;
                let q = linear_rows(&h, &p[a.wq], &p[a.bq]);
                x.add_assign(&self.attend_rows(&q, &cross[l].0, &cross[l].1, a));

                let h = self.norm_rows(&x, layer.norm3);
                let f = layer.ff;
                let mut inner = linear_rows(&h, &p[f.w1], &p[f.b1]);
                inner.data.iter_mut().for_each(|v| *v = gelu(*v));
                x.add_assign(&linear_rows(&inner, &p[f.w2], &p[f.b2]));
            }
            let y = self.norm_rows(&x, self.layout.dec_norm);
            let logits = linear_rows(&y, &p[self.layout.out_w], &p[self.layout.out_b]);
            let mut best = 0;
            for (i, &v) in logits.data.iter().enumerate() {
                if v > logits.data[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            output.push(best);
            token = best;
        }
        output
    }

    fn norm_rows(&self, x: &Matrix, norm: Norm) -> Matrix {
        layer_norm_rows(x, &self.params[norm.gain], &self.params[norm.bias]).0
    }

    /// Multi-head attention of `q` over all rows of `keys`/`values`, with
    /// the output projection applied.
    fn attend_rows(&self, q: &Matrix, keys: &Matrix, values: &Matrix, a: Attention) -> Matrix {
        let head_dim = self.config.model_dim / self.config.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut joined = Matrix::zeros(q.rows, self.config.model_dim);
        for h in 0..self.config.heads {
            let start = h * head_dim;
            let mut scores = matmul_bt(&slice_cols(q, start, head_dim), &slice_cols(keys, start, head_dim));
            scores.data.iter_mut().for_each(|v| *v *= scale);
            let weights = softmax_rows(&scores, false);
            let out = matmul(&weights, &slice_cols(values, start, head_dim));
            for i in 0..q.rows {
                joined.data[i * self.config.model_dim + start..i * self.config.model_dim + start + head_dim]
                    .copy_from_slice(out.row(i));
            }
        }
        linear_rows(&joined, &self.params[a.wo], &self.params[a.bo])
    }

    #[cfg(test)]
    pub(crate) fn greedy_uncached(&self, direction: Direction, source: &[usize]) -> Vec<usize> {
        let mut tape = Tape::new(&self.params);
        let memory = self.encode(&mut tape, direction, source);
        let mut output: Vec<usize> = Vec::new();
        let mut decoder_input = vec![BOS];
        while output.len() < self.config.max_len {
            let logits = self.decode_logits(&mut tape, memory, &decoder_input);
            let lv = tape.value(logits);
            let last = lv.row(lv.rows - 1);
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            output.push(best);
            decoder_input.push(best);
        }
        output
    }

    /// Mean per-token cross-entropy (nats) of `target` given `source`.
    pub fn loss(&self, direction: Direction, source: &[usize], target: &[usize]) -> f64 {
        let mut tape = Tape::new(&self.params);
        let node = self.sequence_loss(&mut tape, direction, source, target);
        tape.value(node).data[0]
    }
}

fn linear_rows(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = matmul(x, w);
    add_row_in_place(&mut out, b);
    out
}

fn slice_cols(x: &Matrix, start: usize, len: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows, len);
    for i in 0..x.rows {
        out.data[i * len..(i + 1) * len].copy_from_slice(&x.row(i)[start..start + len]);
    }
    out
}

fn append_row(m: &mut Matrix, row: &Matrix) {
    m.data.extend_from_slice(&row.data);
    m.rows += 1;
}
