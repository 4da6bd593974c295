//! Versioned binary checkpoint format.
//!
//! Layout: magic, version, config, segment table, little-endian f64
//! parameter payload, tokenizer table, provenance log, then a SHA-256 of
//! everything preceding it as the footer.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{ParameterVector, Segment};
use super::tokenizer::{Tokenizer, NORMALIZATION_RULE};
use super::{ModelCheckpoint, ModelConfig, ModelError, ProvenanceEvent, ProvenanceKind};

const MAGIC: [u8; 4] = *b"KMCK";
const VERSION: u32 = 1;

pub(crate) fn encode_checkpoint(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [
        ckpt.config.vocab_size,
        ckpt.config.embed_dim,
        ckpt.config.context_len,
        ckpt.config.block_count,
        ckpt.config.head_count,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.params.segments().len() as u32).to_le_bytes());
    for seg in ckpt.params.segments() {
        buf.extend_from_slice(&(seg.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(seg.name.as_bytes());
        buf.extend_from_slice(&(seg.offset as u64).to_le_bytes());
        buf.extend_from_slice(&(seg.len as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for v in ckpt.params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(NORMALIZATION_RULE);
    buf.extend_from_slice(&(ckpt.tokenizer.vocab_size() as u32).to_le_bytes());
    for tok in ckpt.tokenizer.vocab() {
        buf.extend_from_slice(&(tok.len() as u32).to_le_bytes());
        buf.extend_from_slice(tok.as_bytes());
    }
    buf.extend_from_slice(&(ckpt.provenance.len() as u32).to_le_bytes());
    for ev in &ckpt.provenance {
        buf.push(ev.kind.code());
        buf.extend_from_slice(&ev.seed.to_le_bytes());
        buf.extend_from_slice(&(ev.detail.len() as u32).to_le_bytes());
        buf.extend_from_slice(ev.detail.as_bytes());
    }
    let mut hasher = Sha256::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.buf.len() {
            return Err(ModelError::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| ModelError::Format("non-utf8 string".into()))
    }
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint, ModelError> {
    if bytes.len() < 36 {
        return Err(ModelError::Format("file too small".into()));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 32);
    let mut hasher = Sha256::new();
    hasher.update(body);
    if hasher.finalize().as_slice() != footer {
        return Err(ModelError::Format("content hash mismatch".into()));
    }

    let mut r = Reader { buf: body, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        vocab_size: r.u32()? as usize,
        embed_dim: r.u32()? as usize,
        context_len: r.u32()? as usize,
        block_count: r.u32()? as usize,
        head_count: r.u32()? as usize,
    };
    let seg_count = r.u32()? as usize;
    let mut segments = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        let name = r.string()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        segments.push(Segment { name, offset, len });
    }
    let value_count = r.u64()? as usize;
    let mut values = Vec::with_capacity(value_count);
    for _ in 0..value_count {
        values.push(r.f64()?);
    }
    let params = ParameterVector::from_parts(values, segments)?;

    let rule = r.u8()?;
    if rule != NORMALIZATION_RULE {
        return Err(ModelError::Format(format!(
            "unknown normalization rule {rule}"
        )));
    }
    let vocab_count = r.u32()? as usize;
    let mut vocab = Vec::with_capacity(vocab_count);
    for _ in 0..vocab_count {
        vocab.push(r.string()?);
    }
    let tokenizer = Tokenizer::from_vocab(vocab);

    let ev_count = r.u32()? as usize;
    let mut provenance = Vec::with_capacity(ev_count);
    for _ in 0..ev_count {
        let kind = ProvenanceKind::from_code(r.u8()?)
            .ok_or_else(|| ModelError::Format("unknown provenance kind".into()))?;
        let seed = r.u64()?;
        let detail = r.string()?;
        provenance.push(ProvenanceEvent { kind, seed, detail });
    }
    if r.at != body.len() {
        return Err(ModelError::Format("trailing bytes".into()));
    }

    let ckpt = ModelCheckpoint {
        config,
        tokenizer,
        params,
        provenance,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint, ModelError> {
    decode_checkpoint(&fs::read(path)?)
}
