//! A tiny from-scratch autoregressive language model.
//!
//! Word-level tokenizer, causal self-attention network, analytic gradients,
//! greedy/temperature sampling, and perplexity. All parameters are 64-bit
//! reals in one flat vector so the merging attacks and their bit-exact
//! identity checks operate directly on model coordinates.

mod io;
mod net;
mod params;
mod tokenizer;

pub use io::{load_checkpoint, save_checkpoint};
pub use params::{ParameterVector, Segment};
pub use tokenizer::{normalize, Tokenizer, BOS, EOS, NORMALIZATION_RULE, PAD, UNK};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token window of {len} exceeds context length {max}")]
    WindowTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    UnknownId { id: u32, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("empty text set")]
    EmptyTextSet,
    #[error("sequence of {len} tokens is too short (need at least 2)")]
    SequenceTooShort { len: usize },
    #[error("text tokenizes to {tokens} tokens (need at least 2)")]
    TextTooShort { tokens: usize },
    #[error("batch contains no unmasked prediction targets")]
    AllPad,
    #[error("corpus vocabulary needs {needed} entries, budget is {budget}")]
    VocabBudget { needed: usize, budget: usize },
    #[error("temperature {0} is negative")]
    NegativeTemperature(f64),
    #[error("segment map invalid: {0}")]
    SegmentMap(String),
    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters. `vocab_size` is fixed by the tokenizer at
/// build time; the rest default to the desk-scale architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub block_count: usize,
    pub head_count: usize,
}

impl ModelConfig {
    pub fn desk_default(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            context_len: 64,
            block_count: 2,
            head_count: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0
            || self.embed_dim == 0
            || self.context_len == 0
            || self.block_count == 0
            || self.head_count == 0
        {
            return Err(ModelError::ConfigMismatch("zero-sized dimension".into()));
        }
        if self.embed_dim % self.head_count != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "embed_dim {} not divisible by head_count {}",
                self.embed_dim, self.head_count
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        net::layout(self).total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceKind {
    Pretrain,
    Inject,
    Finetune,
    Merge,
}

impl ProvenanceKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Pretrain => 0,
            Self::Inject => 1,
            Self::Finetune => 2,
            Self::Merge => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Pretrain),
            1 => Some(Self::Inject),
            2 => Some(Self::Finetune),
            3 => Some(Self::Merge),
            _ => None,
        }
    }
}

/// One training-history entry. The provenance log is append-only: every
/// train or merge operation adds exactly one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub kind: ProvenanceKind,
    pub seed: u64,
    pub detail: String,
}

/// Immutable model value: architecture, tokenizer, flat parameters, history.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub params: ParameterVector,
    pub provenance: Vec<ProvenanceEvent>,
}

impl ModelCheckpoint {
    /// Seeded random initialization: weights from N(0, 0.08^2), norm gains 1.
    pub fn init(config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if tokenizer.vocab_size() != config.vocab_size {
            return Err(ModelError::ConfigMismatch(format!(
                "tokenizer has {} tokens, config expects {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let mut params = ParameterVector::zeros(&net::segment_layout(&config));
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut gauss = || {
            // Box-Muller; both uniforms drawn every call to keep the stream simple.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        for seg in params.segments().to_vec() {
            let values = &mut params.values_mut()[seg.offset..seg.offset + seg.len];
            if seg.name.ends_with(".g") {
                values.fill(1.0);
            } else {
                for v in values.iter_mut() {
                    *v = 0.08 * gauss();
                }
            }
        }
        Ok(Self {
            config,
            tokenizer,
            params,
            provenance: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        self.params.validate()?;
        if self.params.len() != self.config.param_count() {
            return Err(ModelError::ConfigMismatch(format!(
                "parameter vector holds {} values, config implies {}",
                self.params.len(),
                self.config.param_count()
            )));
        }
        if self.tokenizer.vocab_size() != self.config.vocab_size {
            return Err(ModelError::ConfigMismatch(
                "tokenizer size differs from config vocab_size".into(),
            ));
        }
        Ok(())
    }

    /// Copy with one more provenance event.
    pub fn with_event(&self, kind: ProvenanceKind, seed: u64, detail: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.provenance.push(ProvenanceEvent {
            kind,
            seed,
            detail: detail.into(),
        });
        out
    }

    /// SHA-256 of the serialized checkpoint; bit-identical runs hash equal.
    pub fn content_hash(&self) -> String {
        sha256_hex(&io::encode_checkpoint(self))
    }

    fn check_window(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() > self.config.context_len {
            return Err(ModelError::WindowTooLong {
                len: ids.len(),
                max: self.config.context_len,
            });
        }
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(ModelError::UnknownId {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }
}

/// Per-position logits over the vocabulary for a token window.
pub fn forward(ckpt: &ModelCheckpoint, window: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
    if window.is_empty() {
        return Err(ModelError::EmptyPrefix);
    }
    ckpt.check_window(window)?;
    let lay = net::layout(&ckpt.config);
    let (flat, _) = net::forward(ckpt.params.values(), &lay, window);
    Ok(flat.chunks(lay.v).map(|c| c.to_vec()).collect())
}

fn log_softmax_nll(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn batch_checks(ckpt: &ModelCheckpoint, batch: &[Vec<u32>]) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for seq in batch {
        if seq.len() < 2 {
            return Err(ModelError::SequenceTooShort { len: seq.len() });
        }
        ckpt.check_window(seq)?;
    }
    Ok(())
}

/// Mean next-token negative log-likelihood over all predicted positions,
/// with positions whose target is PAD masked out.
pub fn lm_loss(ckpt: &ModelCheckpoint, batch: &[Vec<u32>]) -> Result<f64, ModelError> {
    batch_checks(ckpt, batch)?;
    let lay = net::layout(&ckpt.config);
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let (logits, _) = net::forward(ckpt.params.values(), &lay, seq);
        for i in 0..seq.len() - 1 {
            let target = seq[i + 1];
            if target == PAD {
                continue;
            }
            total += log_softmax_nll(&logits[i * lay.v..(i + 1) * lay.v], target as usize);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::AllPad);
    }
    Ok(total / count as f64)
}

/// Token sequence with the first target index that contributes to the loss.
/// Plain language modeling uses `loss_from = 1` (every target counts).
#[derive(Debug, Clone)]
pub(crate) struct MaskedSeq {
    pub ids: Vec<u32>,
    pub loss_from: usize,
}

impl MaskedSeq {
    pub fn full(ids: Vec<u32>) -> Self {
        Self { ids, loss_from: 1 }
    }
}

/// Summed NLL, prediction count, and the gradient of the NLL sum. Callers
/// normalize by the count themselves, which lets batches be accumulated in
/// deterministic chunks.
pub(crate) fn masked_grad_sums(
    ckpt: &ModelCheckpoint,
    batch: &[MaskedSeq],
) -> Result<(f64, usize, Vec<f64>), ModelError> {
    let lay = net::layout(&ckpt.config);
    let p = ckpt.params.values();
    let mut grad = vec![0.0; p.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let ids = &seq.ids;
        if ids.len() < 2 {
            return Err(ModelError::SequenceTooShort { len: ids.len() });
        }
        ckpt.check_window(ids)?;
        let (logits, trace) = net::forward(p, &lay, ids);
        let mut d_logits = vec![0.0; ids.len() * lay.v];
        for i in 0..ids.len() - 1 {
            let target = ids[i + 1] as usize;
            if i + 1 < seq.loss_from || target == PAD as usize {
                continue;
            }
            let row = &logits[i * lay.v..(i + 1) * lay.v];
            total += log_softmax_nll(row, target);
            count += 1;
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let drow = &mut d_logits[i * lay.v..(i + 1) * lay.v];
            for (j, l) in row.iter().enumerate() {
                drow[j] = (l - max).exp() / sum;
            }
            drow[target] -= 1.0;
        }
        net::backward(p, &lay, ids, &d_logits, &trace, &mut grad);
    }
    Ok((total, count, grad))
}

/// Loss together with its gradient; one forward pass per sequence.
pub fn lm_loss_and_grad(
    ckpt: &ModelCheckpoint,
    batch: &[Vec<u32>],
) -> Result<(f64, ParameterVector), ModelError> {
    batch_checks(ckpt, batch)?;
    let masked: Vec<MaskedSeq> = batch.iter().map(|s| MaskedSeq::full(s.clone())).collect();
    let (total, count, sums) = masked_grad_sums(ckpt, &masked)?;
    if count == 0 {
        return Err(ModelError::AllPad);
    }
    let mut grad = ParameterVector::zeros(&net::segment_layout(&ckpt.config));
    let scale = 1.0 / count as f64;
    for (g, s) in grad.values_mut().iter_mut().zip(&sums) {
        *g = s * scale;
    }
    Ok((total * scale, grad))
}

/// Gradient of [`lm_loss`] with the same shape as the parameters.
pub fn lm_grad(ckpt: &ModelCheckpoint, batch: &[Vec<u32>]) -> Result<ParameterVector, ModelError> {
    lm_loss_and_grad(ckpt, batch).map(|(_, g)| g)
}

fn argmax_lowest_id(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Autoregressive sampling. Temperature 0 is greedy argmax with the lowest
/// token id winning ties; generation stops at EOS (excluded from the output)
/// or after `max_new_tokens`. When the window fills up, the oldest token is
/// dropped and the cache re-primed.
pub fn sample(
    ckpt: &ModelCheckpoint,
    prefix: &[u32],
    max_new_tokens: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u32>, ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::EmptyPrefix);
    }
    if temperature < 0.0 {
        return Err(ModelError::NegativeTemperature(temperature));
    }
    ckpt.check_window(&prefix[prefix.len().saturating_sub(ckpt.config.context_len)..])?;
    for &id in prefix {
        if id as usize >= ckpt.config.vocab_size {
            return Err(ModelError::UnknownId {
                id,
                vocab: ckpt.config.vocab_size,
            });
        }
    }

    let lay = net::layout(&ckpt.config);
    let p = ckpt.params.values();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut window: Vec<u32> = prefix[prefix.len().saturating_sub(lay.t)..].to_vec();
    let mut state = net::DecodeState::new(&lay);
    let mut logits = Vec::new();
    for &id in &window {
        logits = net::decode_step(p, &lay, &mut state, id);
    }

    let mut out = Vec::with_capacity(max_new_tokens);
    for _ in 0..max_new_tokens {
        let next = if temperature == 0.0 {
            argmax_lowest_id(&logits)
        } else {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if draw < *w {
                    pick = i;
                    break;
                }
                draw -= w;
            }
            pick as u32
        };
        if next == EOS {
            break;
        }
        out.push(next);
        window.push(next);
        if state.pos() == lay.t {
            // slide the window: re-prime the cache on the trailing tokens
            window.remove(0);
            state = net::DecodeState::new(&lay);
            for &id in &window[..window.len() - 1] {
                net::decode_step(p, &lay, &mut state, id);
            }
        }
        logits = net::decode_step(p, &lay, &mut state, next);
    }
    Ok(out)
}

/// Summed NLL and prediction count for one text, wrapped as BOS..EOS and
/// scored in consecutive context-length windows.
pub fn text_nll(ckpt: &ModelCheckpoint, text: &str) -> Result<(f64, usize), ModelError> {
    let ids = ckpt.tokenizer.encode(text);
    if ids.len() < 2 {
        return Err(ModelError::TextTooShort { tokens: ids.len() });
    }
    let mut wrapped = Vec::with_capacity(ids.len() + 2);
    wrapped.push(BOS);
    wrapped.extend_from_slice(&ids);
    wrapped.push(EOS);

    let lay = net::layout(&ckpt.config);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in wrapped.chunks(ckpt.config.context_len) {
        if chunk.len() < 2 {
            continue;
        }
        ckpt.check_window(chunk)?;
        let (logits, _) = net::forward(ckpt.params.values(), &lay, chunk);
        for i in 0..chunk.len() - 1 {
            let target = chunk[i + 1];
            if target == PAD {
                continue;
            }
            total += log_softmax_nll(&logits[i * lay.v..(i + 1) * lay.v], target as usize);
            count += 1;
        }
    }
    Ok((total, count))
}

/// Corpus perplexity: exp of the length-weighted mean NLL per predicted
/// token over all texts. A uniform (zero-parameter) model scores exactly
/// the vocabulary size.
pub fn perplexity(ckpt: &ModelCheckpoint, texts: &[String]) -> Result<f64, ModelError> {
    if texts.is_empty() {
        return Err(ModelError::EmptyTextSet);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for text in texts {
        let (nll, n) = text_nll(ckpt, text)?;
        total += nll;
        count += n;
    }
    Ok((total / count as f64).exp())
}
