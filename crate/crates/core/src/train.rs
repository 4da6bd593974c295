//! Training engine: base pre-training, fingerprint injection, and the
//! fine-tuning attack.
//!
//! All three operations run the same loop: records are shuffled per
//! (epoch, seed), packed into BOS-led, EOS-separated sequences of the
//! configured context length, and stepped with an adam-style optimizer.
//! Gradient accumulation is chunked in a fixed order, so a training run is
//! a pure function of (checkpoint, corpus, config).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NarrativeRecord;
use crate::model::{
    masked_grad_sums, MaskedSeq, ModelCheckpoint, ModelConfig, ModelError, ProvenanceKind,
    Tokenizer, BOS, EOS,
};
use crate::util::seed_hash;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("record {record_id} contains tokens outside the tokenizer vocabulary")]
    OovText { record_id: String },
    #[error("record {record_id} packs to {tokens} tokens, context is {max}")]
    RecordTooLong {
        record_id: String,
        tokens: usize,
        max: usize,
    },
    #[error("train context {cfg} exceeds model context {model}")]
    ContextExceedsModel { cfg: usize, model: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub context_len: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
    /// Fraction of the primary corpus size drawn from a replay pool each
    /// epoch. 0 trains on the primary corpus exclusively.
    pub replay_ratio: f64,
}

impl TrainConfig {
    /// Desk-scale injection defaults for the 0.5M-parameter model.
    pub fn desk_inject(seed: u64) -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 150,
            context_len: 64,
            optimizer: Optimizer::adam_default(),
            seed,
            gradient_clip_norm: Some(1.0),
            replay_ratio: 0.0,
        }
    }

    /// The reference injection configuration used on 7B-scale models. Kept
    /// for the record; it does not converge usefully at desk scale.
    pub fn reference_inject(seed: u64) -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 16,
            epochs: 300,
            context_len: 1024,
            optimizer: Optimizer::adam_default(),
            seed,
            gradient_clip_norm: None,
            replay_ratio: 0.0,
        }
    }

    pub fn desk_pretrain(seed: u64) -> Self {
        Self {
            epochs: 30,
            ..Self::desk_inject(seed)
        }
    }

    /// Two-epoch downstream fine-tune, the attack protocol scale.
    pub fn desk_finetune(seed: u64) -> Self {
        Self {
            epochs: 2,
            learning_rate: 1e-3,
            ..Self::desk_inject(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.replay_ratio) {
            return Err(TrainError::InvalidConfig("replay_ratio outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub event: String,
    pub epoch: usize,
    pub loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn first_epoch_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn final_epoch_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut out = String::from("event,epoch,loss,seed\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.9},{}\n",
                row.event, row.epoch, row.loss, row.seed
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
}

fn encode_records(
    tokenizer: &Tokenizer,
    records: &[NarrativeRecord],
    max_len: usize,
) -> Result<Vec<(String, Vec<u32>)>, TrainError> {
    let mut encoded = Vec::with_capacity(records.len());
    for rec in records {
        if !tokenizer.covers(&rec.text) {
            return Err(TrainError::OovText {
                record_id: rec.record_id.clone(),
            });
        }
        let ids = tokenizer.encode(&rec.text);
        // a record must fit after the leading BOS plus its EOS separator
        if ids.len() + 2 > max_len {
            return Err(TrainError::RecordTooLong {
                record_id: rec.record_id.clone(),
                tokens: ids.len() + 2,
                max: max_len,
            });
        }
        encoded.push((rec.record_id.clone(), ids));
    }
    Ok(encoded)
}

/// Greedy packing: each sequence starts with BOS and records are separated
/// by EOS. A record that does not fit starts the next sequence.
fn pack(encoded: &[&(String, Vec<u32>)], context_len: usize) -> Vec<MaskedSeq> {
    let mut seqs = Vec::new();
    let mut current = vec![BOS];
    for (_, ids) in encoded {
        if current.len() + ids.len() + 1 > context_len {
            if current.len() > 1 {
                seqs.push(MaskedSeq::full(std::mem::replace(&mut current, vec![BOS])));
            }
        }
        current.extend_from_slice(ids);
        current.push(EOS);
    }
    if current.len() > 1 {
        seqs.push(MaskedSeq::full(current));
    }
    seqs
}

// Gradient accumulation chunk size. Fixed (rather than derived from the
// thread count) so results are identical on any machine.
const GRAD_CHUNK: usize = 4;

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

fn apply_update(
    params: &mut [f64],
    grad: &[f64],
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    match (cfg.optimizer, adam) {
        (Optimizer::Sgd, _) => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        (Optimizer::Adam { beta1, beta2, epsilon }, Some(state)) => {
            state.step += 1;
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mh = state.m[i] / bc1;
                let vh = state.v[i] / bc2;
                params[i] -= cfg.learning_rate * mh / (vh.sqrt() + epsilon);
            }
        }
        (Optimizer::Adam { .. }, None) => unreachable!("adam state initialized with optimizer"),
    }
}

/// One optimization step over a batch of masked sequences. Returns the
/// summed NLL and prediction count for logging.
fn step_batch(
    ckpt: &mut ModelCheckpoint,
    batch: &[MaskedSeq],
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) -> Result<(f64, usize), TrainError> {
    let chunks: Vec<&[MaskedSeq]> = batch.chunks(GRAD_CHUNK).collect();
    let partials: Vec<(f64, usize, Vec<f64>)> = chunks
        .par_iter()
        .map(|chunk| masked_grad_sums(ckpt, chunk))
        .collect::<Result<_, _>>()?;

    let mut grad = vec![0.0; ckpt.params.len()];
    let mut nll = 0.0;
    let mut count = 0usize;
    for (part_nll, part_count, part_grad) in &partials {
        nll += part_nll;
        count += part_count;
        for (g, p) in grad.iter_mut().zip(part_grad) {
            *g += p;
        }
    }
    if count == 0 {
        return Err(TrainError::Model(ModelError::AllPad));
    }
    let scale = 1.0 / count as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    if let Some(clip) = cfg.gradient_clip_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > clip {
            let k = clip / norm;
            for g in grad.iter_mut() {
                *g *= k;
            }
        }
    }
    apply_update(ckpt.params.values_mut(), &grad, cfg, adam);
    Ok((nll, count))
}

pub(crate) fn run_training(
    start: &ModelCheckpoint,
    cfg: &TrainConfig,
    kind: ProvenanceKind,
    event: &str,
    detail: String,
    mut epoch_batches: impl FnMut(usize) -> Result<Vec<MaskedSeq>, TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    start.validate()?;
    if cfg.context_len > start.config.context_len {
        return Err(TrainError::ContextExceedsModel {
            cfg: cfg.context_len,
            model: start.config.context_len,
        });
    }

    let mut ckpt = start.with_event(kind, cfg.seed, detail);
    let mut adam = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam { .. } => Some(AdamState {
            m: vec![0.0; ckpt.params.len()],
            v: vec![0.0; ckpt.params.len()],
            step: 0,
        }),
    };
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let seqs = epoch_batches(epoch)?;
        let mut epoch_nll = 0.0;
        let mut epoch_count = 0usize;
        for batch in seqs.chunks(cfg.batch_size) {
            let (nll, count) = step_batch(&mut ckpt, batch, cfg, &mut adam)?;
            epoch_nll += nll;
            epoch_count += count;
        }
        log.rows.push(LogRow {
            event: event.to_string(),
            epoch,
            loss: epoch_nll / epoch_count as f64,
            seed: cfg.seed,
        });
    }
    ckpt.params.validate().map_err(TrainError::Model)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log,
    })
}

fn corpus_training(
    start: &ModelCheckpoint,
    records: &[NarrativeRecord],
    replay_pool: &[NarrativeRecord],
    cfg: &TrainConfig,
    kind: ProvenanceKind,
    event: &str,
) -> Result<TrainOutcome, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let encoded = encode_records(&start.tokenizer, records, cfg.context_len)?;
    let replay_encoded = encode_records(&start.tokenizer, replay_pool, cfg.context_len)?;
    let replay_per_epoch = (cfg.replay_ratio * records.len() as f64).round() as usize;
    let detail = format!(
        "{event}: {} records, lr {}, {} epochs",
        records.len(),
        cfg.learning_rate,
        cfg.epochs
    );

    let seed = cfg.seed;
    let context_len = cfg.context_len;
    run_training(start, cfg, kind, event, detail, move |epoch| {
        let mut rng =
            ChaCha12Rng::seed_from_u64(seed_hash(&format!("{event}:{seed}:{epoch}")));
        let mut order: Vec<&(String, Vec<u32>)> = encoded.iter().collect();
        if replay_per_epoch > 0 && !replay_encoded.is_empty() {
            for _ in 0..replay_per_epoch {
                order.push(&replay_encoded[rng.gen_range(0..replay_encoded.len())]);
            }
        }
        order.shuffle(&mut rng);
        Ok(pack(&order, context_len))
    })
}

/// Train a fresh seeded model on the generic corpus. Stands in for the
/// public base model the fingerprint is later injected into.
pub fn pretrain_base(
    tokenizer: Tokenizer,
    corpus: &[NarrativeRecord],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let start = ModelCheckpoint::init(model_cfg, tokenizer, init_seed)?;
    corpus_training(&start, corpus, &[], cfg, ProvenanceKind::Pretrain, "pretrain")
}

/// Incremental pre-training on the fingerprint corpus alone (plus an
/// optional replay mix, off by default). The base checkpoint is unchanged.
pub fn inject_fingerprint(
    base: &ModelCheckpoint,
    d_fp: &[NarrativeRecord],
    replay_pool: &[NarrativeRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    corpus_training(base, d_fp, replay_pool, cfg, ProvenanceKind::Inject, "inject")
}

/// Downstream fine-tuning, used as a fingerprint-removal attack.
pub fn finetune_attack(
    victim: &ModelCheckpoint,
    downstream: &[NarrativeRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    corpus_training(
        victim,
        downstream,
        &[],
        cfg,
        ProvenanceKind::Finetune,
        "finetune",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{self, Lexicon, RecordRole};
    use crate::model;

    fn small_setup() -> (Tokenizer, Vec<NarrativeRecord>) {
        let lexicon = Lexicon::default();
        let records = corpus::generate_generic_records(&lexicon, 24, 5, RecordRole::Generic, "gen");
        let tokenizer =
            Tokenizer::from_texts(records.iter().map(|r| r.text.as_str()), 2048).unwrap();
        (tokenizer, records)
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            ..TrainConfig::desk_inject(3)
        }
    }

    fn small_model(tokenizer: &Tokenizer) -> ModelConfig {
        ModelConfig {
            vocab_size: tokenizer.vocab_size(),
            embed_dim: 16,
            context_len: 64,
            block_count: 1,
            head_count: 2,
        }
    }

    #[test]
    fn zero_epochs_is_bit_exact_identity() {
        let (tokenizer, records) = small_setup();
        let model_cfg = small_model(&tokenizer);
        let init = ModelCheckpoint::init(model_cfg.clone(), tokenizer.clone(), 11).unwrap();
        let out = pretrain_base(tokenizer, &records, model_cfg, &small_cfg(0), 11).unwrap();
        assert_eq!(out.checkpoint.params.values(), init.params.values());
        assert_eq!(out.checkpoint.provenance.len(), 1);
        assert!(out.log.rows.is_empty());
    }

    #[test]
    fn pretrain_beats_the_uniform_bound_on_heldout_text() {
        let (tokenizer, records) = small_setup();
        let lexicon = Lexicon::default();
        let heldout = corpus::generate_generic_records(&lexicon, 8, 99, RecordRole::Heldout, "ho");
        let model_cfg = small_model(&tokenizer);
        let out = pretrain_base(tokenizer, &records, model_cfg, &small_cfg(12), 11).unwrap();
        let texts: Vec<String> = heldout.iter().map(|r| r.text.clone()).collect();
        let ppl = model::perplexity(&out.checkpoint, &texts).unwrap();
        assert!(
            ppl < out.checkpoint.config.vocab_size as f64,
            "heldout ppl {ppl} not below uniform bound"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (tokenizer, records) = small_setup();
        let model_cfg = small_model(&tokenizer);
        let a = pretrain_base(
            tokenizer.clone(),
            &records,
            model_cfg.clone(),
            &small_cfg(3),
            11,
        )
        .unwrap();
        let b = pretrain_base(tokenizer, &records, model_cfg, &small_cfg(3), 11).unwrap();
        assert_eq!(
            a.checkpoint.content_hash(),
            b.checkpoint.content_hash()
        );
    }

    #[test]
    fn inject_appends_event_and_decreases_loss() {
        let (tokenizer, records) = small_setup();
        let model_cfg = small_model(&tokenizer);
        let base = pretrain_base(tokenizer, &records[..16], model_cfg, &small_cfg(6), 11)
            .unwrap()
            .checkpoint;
        let d_fp = &records[16..];
        let out = inject_fingerprint(&base, d_fp, &[], &small_cfg(10)).unwrap();
        assert_eq!(out.checkpoint.provenance.len(), base.provenance.len() + 1);
        assert_eq!(
            out.checkpoint.provenance.last().unwrap().kind,
            ProvenanceKind::Inject
        );
        assert!(out.log.final_epoch_loss().unwrap() < out.log.first_epoch_loss().unwrap());
        // value semantics: the base is untouched
        base.validate().unwrap();
        assert_ne!(base.content_hash(), out.checkpoint.content_hash());
    }

    #[test]
    fn oov_fingerprint_text_is_rejected() {
        let (tokenizer, records) = small_setup();
        let model_cfg = small_model(&tokenizer);
        let base = pretrain_base(tokenizer, &records, model_cfg, &small_cfg(0), 11)
            .unwrap()
            .checkpoint;
        let mut bad = records[0].clone();
        bad.text = "zzzunknownzzz word".into();
        assert!(matches!(
            inject_fingerprint(&base, &[bad], &[], &small_cfg(1)),
            Err(TrainError::OovText { .. })
        ));
    }

    #[test]
    fn finetune_improves_downstream_loss_and_keeps_victim() {
        let (tokenizer, records) = small_setup();
        let lexicon = Lexicon::default();
        let model_cfg = small_model(&tokenizer);
        let downstream = corpus::generate_downstream_corpus(&lexicon, 12, 4);
        let tk_all = Tokenizer::from_texts(
            records
                .iter()
                .chain(&downstream)
                .map(|r| r.text.as_str()),
            2048,
        )
        .unwrap();
        let model_cfg = ModelConfig {
            vocab_size: tk_all.vocab_size(),
            ..model_cfg
        };
        let victim = pretrain_base(tk_all, &records, model_cfg, &small_cfg(4), 11)
            .unwrap()
            .checkpoint;
        let ds_texts: Vec<String> = downstream.iter().map(|r| r.text.clone()).collect();
        let before = model::perplexity(&victim, &ds_texts).unwrap();
        let out = finetune_attack(&victim, &downstream, &small_cfg(4)).unwrap();
        let after = model::perplexity(&out.checkpoint, &ds_texts).unwrap();
        assert!(after < before, "downstream ppl {after} not below {before}");
        assert_eq!(
            out.checkpoint.provenance.last().unwrap().kind,
            ProvenanceKind::Finetune
        );
    }

    #[test]
    fn record_too_long_for_context_is_rejected() {
        let (tokenizer, mut records) = small_setup();
        let model_cfg = small_model(&tokenizer);
        let long_text = records[0].text.repeat(10);
        records[0].text = long_text;
        assert!(matches!(
            pretrain_base(tokenizer, &records, model_cfg, &small_cfg(1), 11),
            Err(TrainError::RecordTooLong { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(1);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(1);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        // the reference configuration carries the published values
        let reference = TrainConfig::reference_inject(0);
        assert_eq!(reference.learning_rate, 5e-5);
        assert_eq!(reference.batch_size, 16);
        assert_eq!(reference.epochs, 300);
        assert_eq!(reference.context_len, 1024);
    }

    #[test]
    fn packing_respects_context_and_separators() {
        let (tokenizer, records) = small_setup();
        let encoded = encode_records(&tokenizer, &records, 64).unwrap();
        let refs: Vec<&(String, Vec<u32>)> = encoded.iter().collect();
        let seqs = pack(&refs, 64);
        let mut eos_count = 0;
        for seq in &seqs {
            assert!(seq.ids.len() <= 64);
            assert_eq!(seq.ids[0], BOS);
            eos_count += seq.ids.iter().filter(|&&t| t == EOS).count();
        }
        assert_eq!(eos_count, records.len());
    }
}
