//! Stealth probes: input naturalness via perplexity under a reference
//! model, and output detectability via token forcing.
//!
//! The token-forcing probe looks for the signature of a trigger-response
//! backdoor: a continuation that comes out identical from unrelated forcing
//! contexts. A knowledge-fingerprinted model keeps conditioning on context,
//! so its continuations diverge; a backdoored model falls into its fixed
//! response from anywhere.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ModelCheckpoint, ModelError, BOS};
use crate::util::seed_hash;

#[derive(Debug, Error)]
pub enum StealthError {
    #[error("empty text set for {0}")]
    EmptyTextSet(&'static str),
    #[error("probe_prefix_count must be positive")]
    ZeroProbeCount,
    #[error("match_len must be at least 2, got {0}")]
    MatchLenTooShort(usize),
    #[error("need at least 2 forcing contexts, got {0}")]
    TooFewContexts(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputStealthReport {
    pub ppl_fingerprint: f64,
    pub ppl_trigger: f64,
    /// ppl_trigger / ppl_fingerprint; above 1 means the fingerprint texts
    /// read as more natural than the triggers.
    pub ratio: f64,
}

fn mean_text_ppl(reference: &ModelCheckpoint, texts: &[String]) -> Result<f64, StealthError> {
    let mut sum = 0.0;
    for text in texts {
        let (nll, count) = model::text_nll(reference, text)?;
        sum += (nll / count as f64).exp();
    }
    Ok(sum / texts.len() as f64)
}

/// Mean per-text perplexity of both sets under the reference model.
pub fn input_stealth_report(
    reference: &ModelCheckpoint,
    fingerprint_texts: &[String],
    trigger_texts: &[String],
) -> Result<InputStealthReport, StealthError> {
    if fingerprint_texts.is_empty() {
        return Err(StealthError::EmptyTextSet("fingerprint"));
    }
    if trigger_texts.is_empty() {
        return Err(StealthError::EmptyTextSet("trigger"));
    }
    let ppl_fingerprint = mean_text_ppl(reference, fingerprint_texts)?;
    let ppl_trigger = mean_text_ppl(reference, trigger_texts)?;
    Ok(InputStealthReport {
        ppl_fingerprint,
        ppl_trigger,
        ratio: ppl_trigger / ppl_fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Number of candidate response-prefixes probed.
    pub probe_prefix_count: usize,
    /// Continuation length that must repeat for a detection (L).
    pub match_len: usize,
    /// Distinct forcing contexts each probe is decoded under.
    pub context_count: usize,
    pub seed: u64,
    /// Dictionary of suspicious response openings tried verbatim.
    pub suspicious_openings: Vec<String>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probe_prefix_count: 12,
            match_len: 6,
            context_count: 3,
            seed: 0,
            suspicious_openings: [
                "access granted",
                "the secret code",
                "system override accepted",
                "the password is",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

fn random_context(suspect: &ModelCheckpoint, rng: &mut ChaCha12Rng, len: usize) -> Vec<u32> {
    let vocab = suspect.config.vocab_size as u32;
    let mut ctx = vec![BOS];
    for _ in 0..len {
        ctx.push(rng.gen_range(4..vocab)); // skip the reserved specials
    }
    ctx
}

/// Force decoding from candidate response-prefixes under several unrelated
/// contexts. A probe detects when one continuation of at least `match_len`
/// tokens comes out identical from two or more distinct contexts; the
/// detection rate is the fraction of probes that detect.
pub fn token_forcing_probe(
    suspect: &ModelCheckpoint,
    cfg: &ProbeConfig,
) -> Result<f64, StealthError> {
    if cfg.probe_prefix_count == 0 {
        return Err(StealthError::ZeroProbeCount);
    }
    if cfg.match_len < 2 {
        return Err(StealthError::MatchLenTooShort(cfg.match_len));
    }
    if cfg.context_count < 2 {
        return Err(StealthError::TooFewContexts(cfg.context_count));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed_hash(&format!("token-forcing:{}", cfg.seed)));
    let contexts: Vec<Vec<u32>> = (0..cfg.context_count)
        .map(|_| random_context(suspect, &mut rng, 8))
        .collect();

    // candidate prefixes: the suspect's own high-probability continuations
    // first, then the suspicious-opening dictionary, then random filler
    let mut probes: Vec<Vec<u32>> = Vec::new();
    let push_unique = |probe: Vec<u32>, probes: &mut Vec<Vec<u32>>| {
        if !probe.is_empty() && !probes.contains(&probe) && probes.len() < cfg.probe_prefix_count {
            probes.push(probe);
        }
    };
    let derived = cfg.probe_prefix_count.div_ceil(2);
    for i in 0..derived {
        let ctx = &contexts[i % contexts.len()];
        let own = model::sample(suspect, ctx, 3, 0.0, 0)?;
        push_unique(own, &mut probes);
    }
    for opening in &cfg.suspicious_openings {
        push_unique(suspect.tokenizer.encode(opening), &mut probes);
    }
    let mut guard = 0;
    while probes.len() < cfg.probe_prefix_count && guard < 1000 {
        let probe = vec![
            rng.gen_range(4..suspect.config.vocab_size as u32),
            rng.gen_range(4..suspect.config.vocab_size as u32),
        ];
        push_unique(probe, &mut probes);
        guard += 1;
    }
    let total = probes.len();

    let mut detected = 0usize;
    for probe in &probes {
        let mut continuations: Vec<Vec<u32>> = Vec::new();
        for ctx in &contexts {
            let mut prompt = ctx.clone();
            prompt.extend_from_slice(probe);
            continuations.push(model::sample(suspect, &prompt, cfg.match_len, 0.0, 0)?);
        }
        let hit = (0..continuations.len()).any(|a| {
            continuations[a].len() == cfg.match_len
                && (a + 1..continuations.len()).any(|b| continuations[a] == continuations[b])
        });
        if hit {
            detected += 1;
        }
    }
    Ok(detected as f64 / total as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StealthRow {
    pub probe: String,
    pub value: f64,
    pub metric: String,
    pub direction: String,
}

pub fn write_stealth_csv(path: impl AsRef<Path>, rows: &[StealthRow]) -> Result<(), StealthError> {
    let mut out = String::from("probe,value,metric,direction\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            row.probe, row.value, row.metric, row.direction
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
