//! Binary model file: header, JSON metadata, then named tensors.
//!
//! ```text
//! magic     8 bytes   "CLSTMMOD"
//! version   u32 LE    1
//! meta_len  u64 LE
//! meta      meta_len bytes of UTF-8 JSON {config, vocab, min_count, embeddings_trainable}
//! count     u32 LE    number of tensors
//! tensor*   name_len u32 LE, name (UTF-8), rows u64 LE, cols u64 LE,
//!           rows·cols f64 LE in row-major order
//! ```
//!
//! Tensors appear in [`Model::all_named`] order and every name and shape is
//! checked against the recorded config on load.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Vocab, PAD};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CLSTMMOD";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: EncoderConfig,
    vocab: Vec<String>,
    min_count: usize,
    embeddings_trainable: bool,
}

pub fn encode_model(model: &Model, vocab: &Vocab) -> Result<Vec<u8>> {
    if vocab.len() != model.embeddings.vocab_size() {
        return Err(Error::dim("encode_model", (vocab.len(), 0), model.embeddings.table.shape()));
    }
    let meta = Meta {
        config: model.config.clone(),
        vocab: vocab.tokens().to_vec(),
        min_count: vocab.min_count(),
        embeddings_trainable: model.embeddings.trainable,
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    let tensors = model.all_named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} too large")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(Model, Vocab)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model file version {version}")));
    }
    let meta_len = r.u64("metadata length")?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    meta.config.validate()?;
    let vocab = Vocab::from_tokens(meta.vocab, meta.min_count)?;

    // The throwaway draw only provides correctly shaped tensors.
    let mut model = Model::new(meta.config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0))?;
    model.embeddings.trainable = meta.embeddings_trainable;
    let count = r.u32("tensor count")? as usize;
    let expected: Vec<(String, (usize, usize))> =
        model.all_named().into_iter().map(|(n, t)| (n, t.shape())).collect();
    if count != expected.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let len = r.u32("tensor name length")? as usize;
        let got = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if got != name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{got}`")));
        }
        let dims = (r.u64("rows")?, r.u64("cols")?);
        if dims != *shape {
            return Err(Error::Format(format!("tensor `{name}` has shape {dims:?}, config implies {shape:?}")));
        }
        let n = dims.0.checked_mul(dims.1).and_then(|n| n.checked_mul(8));
        let raw = r.take(n.ok_or_else(|| Error::Format("tensor too large".into()))?, name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        loaded.push(Tensor::from_vec(dims.0, dims.1, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut loaded = loaded.into_iter();
    model.embeddings.table = loaded.next().unwrap();
    if model.embeddings.table.row(PAD).iter().any(|&v| v != 0.0) {
        return Err(Error::Format("padding embedding row is not zero".into()));
    }
    for ((_, slot), t) in model.dense_named_mut().into_iter().zip(loaded) {
        *slot = t;
    }
    Ok((model, vocab))
}

/// Writes next to `path` and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(path: &Path, model: &Model, vocab: &Vocab) -> Result<()> {
    write_atomic(path, &encode_model(model, vocab)?)
}

pub fn load_model(path: &Path) -> Result<(Model, Vocab)> {
    decode_model(&fs::read(path)?)
}
