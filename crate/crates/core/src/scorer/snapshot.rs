//! Versioned little-endian binary encoding of a model snapshot.
//!
//! Layout: magic `TLSM`, format version (u32), snapshot version (u64), the
//! model config, the vocabulary (length-prefixed UTF-8 strings), then every
//! parameter tensor as rows, cols and raw f64 bits. Decoding reproduces the
//! parameters bit for bit.

use super::model::{ModelConfig, Seq2SeqModel, Vocabulary};
use super::tape::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TLSM";
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

pub fn encode(model: &Seq2SeqModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SNAPSHOT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.version.to_le_bytes());
    let c = &model.config;
    for v in [c.model_dim, c.layers, c.heads, c.ff_dim, c.max_len] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(model.vocab.len() as u64).to_le_bytes());
    for i in 0..model.vocab.len() {
        let t = model.vocab.token(i).as_bytes();
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        out.extend_from_slice(t);
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.rows as u64).to_le_bytes());
        out.extend_from_slice(&(p.cols as u64).to_le_bytes());
        for v in &p.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::SnapshotFormat("truncated snapshot".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::SnapshotFormat("length overflow".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Seq2SeqModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::SnapshotFormat("bad magic".into()));
    }
    let format = r.u32()?;
    if format != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::SnapshotFormat(format!(
            "unsupported format version {format}, expected {SNAPSHOT_FORMAT_VERSION}"
        )));
    }
    let version = r.u64()?;
    let config = ModelConfig {
        model_dim: r.usize()?,
        layers: r.usize()?,
        heads: r.usize()?,
        ff_dim: r.usize()?,
        max_len: r.usize()?,
        seed: r.u64()?,
    };
    let vocab_len = r.usize()?;
    let mut tokens = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        let n = r.usize()?;
        let s = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::SnapshotFormat("vocabulary is not utf-8".into()))?;
        tokens.push(s.to_string());
    }
    let count = r.usize()?;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rows = r.usize()?;
        let cols = r.usize()?;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::SnapshotFormat("tensor too large".into()))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::SnapshotFormat("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap()))).collect();
        params.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::SnapshotFormat("trailing bytes".into()));
    }
    Seq2SeqModel::from_parts(config, Vocabulary::from(tokens), params, version)
}
