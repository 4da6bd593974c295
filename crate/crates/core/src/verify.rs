//! Black-box ownership verification.
//!
//! Each record is split equally into a prefix and a ground-truth
//! continuation. The suspect model greedily continues the prefix, the
//! continuation is scored with ROUGE-N, and the fingerprint success rate is
//! the AUC separating fingerprint scores from control scores.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusBundle, NarrativeRecord};
use crate::model::{self, ModelCheckpoint, ModelError, BOS};
use crate::util::{seed_hash, sha256_hex};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("record {record_id} tokenizes to {tokens} tokens, need at least 4 to split")]
    RecordTooShort { record_id: String, tokens: usize },
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("empty score list for {0}")]
    EmptyScores(&'static str),
    #[error("decision threshold {0} outside (0.5, 1]")]
    InvalidTau(f64),
    #[error("record {record_id}: {source}")]
    Model {
        record_id: String,
        source: ModelError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Equal split: the prefix takes the ceiling when the count is odd.
/// Concatenating the halves reproduces the full token sequence.
pub fn split_prefix(
    record: &NarrativeRecord,
    tokenizer: &model::Tokenizer,
) -> Result<(Vec<u32>, Vec<u32>), VerifyError> {
    let ids = tokenizer.encode(&record.text);
    if ids.len() < 4 {
        return Err(VerifyError::RecordTooShort {
            record_id: record.record_id.clone(),
            tokens: ids.len(),
        });
    }
    let cut = ids.len().div_ceil(2);
    Ok((ids[..cut].to_vec(), ids[cut..].to_vec()))
}

/// ROUGE-N result. A reference shorter than the n-gram order scores 0 and
/// sets the flag instead of failing, so batch scoring never aborts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeResult {
    pub f_measure: f64,
    pub short_reference: bool,
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    if ids.len() >= n {
        for gram in ids.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// N-gram overlap F-measure with clipped counts.
pub fn rouge_n(candidate: &[u32], reference: &[u32], n: usize) -> Result<RougeResult, VerifyError> {
    if n == 0 {
        return Err(VerifyError::ZeroOrder);
    }
    if reference.len() < n {
        return Ok(RougeResult {
            f_measure: 0.0,
            short_reference: true,
        });
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len() - (n - 1);
    if overlap == 0 || cand_total == 0 {
        return Ok(RougeResult {
            f_measure: 0.0,
            short_reference: false,
        });
    }
    let precision = overlap as f64 / cand_total as f64;
    let recall = overlap as f64 / ref_total as f64;
    Ok(RougeResult {
        f_measure: 2.0 * precision * recall / (precision + recall),
        short_reference: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    Fingerprint,
    Control,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredSample {
    pub record_id: String,
    pub label: SampleLabel,
    pub rouge_score: f64,
    pub prefix_len: usize,
    pub continuation_len: usize,
    pub short_reference: bool,
}

/// How continuations are generated and scored during verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub seed: u64,
    pub n_gram_order: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: 0,
            n_gram_order: 2,
        }
    }
}

impl GenerationConfig {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

fn score_one(
    suspect: &ModelCheckpoint,
    record: &NarrativeRecord,
    label: SampleLabel,
    cfg: &GenerationConfig,
    transform: Option<&(dyn Fn(&str, u64) -> String + Sync)>,
) -> Result<ScoredSample, VerifyError> {
    let (x_pre, x_next) = split_prefix(record, &suspect.tokenizer)?;
    let input_ids = match transform {
        None => x_pre.clone(),
        Some(f) => {
            let prefix_text = suspect.tokenizer.decode(&x_pre);
            let perturbed = f(&prefix_text, seed_hash(&record.record_id));
            suspect.tokenizer.encode(&perturbed)
        }
    };
    let mut prompt = Vec::with_capacity(input_ids.len() + 1);
    prompt.push(BOS);
    prompt.extend_from_slice(&input_ids);
    let generated = model::sample(
        suspect,
        &prompt,
        x_next.len(),
        cfg.temperature,
        cfg.seed ^ seed_hash(&record.record_id),
    )
    .map_err(|source| VerifyError::Model {
        record_id: record.record_id.clone(),
        source,
    })?;
    let rouge = rouge_n(&generated, &x_next, cfg.n_gram_order)?;
    Ok(ScoredSample {
        record_id: record.record_id.clone(),
        label,
        rouge_score: rouge.f_measure,
        prefix_len: x_pre.len(),
        continuation_len: x_next.len(),
        short_reference: rouge.short_reference,
    })
}

/// Score every fingerprint and control record of a bundle against a suspect
/// model. Scoring is parallel over records; output order is fixed.
pub fn score_model(
    suspect: &ModelCheckpoint,
    bundle: &CorpusBundle,
    cfg: &GenerationConfig,
) -> Result<Vec<ScoredSample>, VerifyError> {
    score_model_transformed(suspect, bundle, cfg, None)
}

/// As [`score_model`], with an optional transform applied to each prefix
/// text before it is fed to the suspect (used by the input-perturbation
/// attack). The transform receives a per-record sub-seed.
pub fn score_model_transformed(
    suspect: &ModelCheckpoint,
    bundle: &CorpusBundle,
    cfg: &GenerationConfig,
    transform: Option<&(dyn Fn(&str, u64) -> String + Sync)>,
) -> Result<Vec<ScoredSample>, VerifyError> {
    let jobs: Vec<(&NarrativeRecord, SampleLabel)> = bundle
        .fingerprint
        .iter()
        .map(|r| (r, SampleLabel::Fingerprint))
        .chain(bundle.control.iter().map(|r| (r, SampleLabel::Control)))
        .collect();
    jobs.par_iter()
        .map(|(record, label)| score_one(suspect, record, *label, cfg, transform))
        .collect()
}

/// Fingerprint success rate: the Mann-Whitney AUC statistic,
/// `(#pairs fp > ctrl + 0.5 * #ties) / (|fp| * |ctrl|)`, computed via
/// tie-averaged ranks.
pub fn compute_fsr(fp_scores: &[f64], ctrl_scores: &[f64]) -> Result<f64, VerifyError> {
    if fp_scores.is_empty() {
        return Err(VerifyError::EmptyScores("fingerprint"));
    }
    if ctrl_scores.is_empty() {
        return Err(VerifyError::EmptyScores("control"));
    }
    let n_fp = fp_scores.len();
    let n_ctrl = ctrl_scores.len();
    let mut all: Vec<(f64, bool)> = fp_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ctrl_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    // Rank sum of the fingerprint group with ties averaged. All ranks are
    // multiples of 0.5, so this matches brute-force pair counting exactly.
    let mut rank_sum_fp = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_fp += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_fp - (n_fp * (n_fp + 1)) as f64 / 2.0;
    Ok(u / (n_fp as f64 * n_ctrl as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Owned,
    Inconclusive,
    NotOwned,
}

/// Decision rule: owned at `fsr >= tau`, not-owned at `fsr <= 1.5 - tau`,
/// inconclusive in between.
pub fn verdict(fsr: f64, tau: f64) -> Result<Verdict, VerifyError> {
    if !(tau > 0.5 && tau <= 1.0) {
        return Err(VerifyError::InvalidTau(tau));
    }
    if fsr >= tau {
        Ok(Verdict::Owned)
    } else if fsr <= 1.5 - tau {
        Ok(Verdict::NotOwned)
    } else {
        Ok(Verdict::Inconclusive)
    }
}

pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub fsr: f64,
    pub fingerprint_scores: Vec<f64>,
    pub control_scores: Vec<f64>,
    pub n_gram_order: usize,
    pub generation_digest: String,
    pub verdict: Verdict,
    pub tau: f64,
    pub samples: Vec<ScoredSample>,
}

/// Fold scored samples into a report. Samples are sorted by record id before
/// the reduction so the report is independent of scoring order.
pub fn build_report(
    mut samples: Vec<ScoredSample>,
    cfg: &GenerationConfig,
    tau: f64,
) -> Result<VerificationReport, VerifyError> {
    samples.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let fingerprint_scores: Vec<f64> = samples
        .iter()
        .filter(|s| s.label == SampleLabel::Fingerprint)
        .map(|s| s.rouge_score)
        .collect();
    let control_scores: Vec<f64> = samples
        .iter()
        .filter(|s| s.label == SampleLabel::Control)
        .map(|s| s.rouge_score)
        .collect();
    let fsr = compute_fsr(&fingerprint_scores, &control_scores)?;
    Ok(VerificationReport {
        fsr,
        fingerprint_scores,
        control_scores,
        n_gram_order: cfg.n_gram_order,
        generation_digest: cfg.digest(),
        verdict: verdict(fsr, tau)?,
        tau,
        samples,
    })
}

/// Verify a suspect model end to end and return the report.
pub fn verify_model(
    suspect: &ModelCheckpoint,
    bundle: &CorpusBundle,
    cfg: &GenerationConfig,
    tau: f64,
) -> Result<VerificationReport, VerifyError> {
    build_report(score_model(suspect, bundle, cfg)?, cfg, tau)
}

impl VerificationReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), VerifyError> {
        fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))?;
        Ok(())
    }

    /// Score distributions as CSV for plotting.
    pub fn write_scores_csv(&self, path: impl AsRef<Path>) -> Result<(), VerifyError> {
        let mut out = String::from("record_id,label,rouge_score,prefix_len,continuation_len\n");
        for s in &self.samples {
            let label = match s.label {
                SampleLabel::Fingerprint => "fingerprint",
                SampleLabel::Control => "control",
            };
            out.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                s.record_id, label, s.rouge_score, s.prefix_len, s.continuation_len
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NarrativeRecord, RecordRole};
    use crate::model::Tokenizer;

    fn record(text: &str) -> NarrativeRecord {
        NarrativeRecord {
            record_id: "r-0".into(),
            text: text.into(),
            subject_ids: vec![],
            variant_index: 0,
            role: RecordRole::Fingerprint,
        }
    }

    #[test]
    fn split_even_and_odd() {
        let tk = Tokenizer::from_texts(["a b c d e f g h i j k"], 64).unwrap();
        let (pre, next) = split_prefix(&record("a b c d e f g h i j"), &tk).unwrap();
        assert_eq!((pre.len(), next.len()), (5, 5));
        let (pre, next) = split_prefix(&record("a b c d e f g h i j k"), &tk).unwrap();
        assert_eq!((pre.len(), next.len()), (6, 5));
    }

    #[test]
    fn split_is_lossless() {
        let tk = Tokenizer::from_texts(["a b c d e f g"], 64).unwrap();
        let rec = record("a b c d e f g");
        let (pre, next) = split_prefix(&rec, &tk).unwrap();
        let mut joined = pre.clone();
        joined.extend(next);
        assert_eq!(joined, tk.encode(&rec.text));
    }

    #[test]
    fn split_rejects_short_records() {
        let tk = Tokenizer::from_texts(["a b c"], 64).unwrap();
        assert!(matches!(
            split_prefix(&record("a b c"), &tk),
            Err(VerifyError::RecordTooShort { .. })
        ));
    }

    #[test]
    fn rouge_identical_is_one() {
        let ids = [4u32, 5, 6, 7];
        let r = rouge_n(&ids, &ids, 2).unwrap();
        assert_eq!(r.f_measure, 1.0);
        assert!(!r.short_reference);
    }

    #[test]
    fn rouge_disjoint_is_zero() {
        let r = rouge_n(&[4, 5, 6], &[7, 8, 9], 2).unwrap();
        assert_eq!(r.f_measure, 0.0);
    }

    /// Worked bigram example: candidate "a b c b" vs reference "a b b d"
    /// overlaps only on "a b", so precision = recall = 1/3 and F = 1/3.
    #[test]
    fn rouge_clipped_bigram_example() {
        let candidate = [10u32, 11, 12, 11]; // a b c b
        let reference = [10u32, 11, 11, 13]; // a b b d
        let r = rouge_n(&candidate, &reference, 2).unwrap();
        assert!((r.f_measure - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_short_reference_flags_not_errors() {
        let r = rouge_n(&[4, 5, 6], &[7], 2).unwrap();
        assert_eq!(r.f_measure, 0.0);
        assert!(r.short_reference);
        assert!(matches!(rouge_n(&[4], &[4], 0), Err(VerifyError::ZeroOrder)));
    }

    #[test]
    fn fsr_complete_separation_is_one() {
        let fsr = compute_fsr(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert_eq!(fsr, 1.0);
    }

    #[test]
    fn fsr_identical_lists_is_half() {
        let xs = [0.3, 0.5, 0.7];
        assert_eq!(compute_fsr(&xs, &xs).unwrap(), 0.5);
    }

    #[test]
    fn fsr_swapping_labels_complements() {
        let fp = [0.9, 0.2, 0.6, 0.6];
        let ctrl = [0.1, 0.6, 0.7];
        let a = compute_fsr(&fp, &ctrl).unwrap();
        let b = compute_fsr(&ctrl, &fp).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fsr_matches_brute_force_pair_counting() {
        // the O(n^2) oracle: count wins and half-count ties
        fn brute(fp: &[f64], ctrl: &[f64]) -> f64 {
            let mut num = 0.0;
            for &a in fp {
                for &b in ctrl {
                    if a > b {
                        num += 1.0;
                    } else if a == b {
                        num += 0.5;
                    }
                }
            }
            num / (fp.len() * ctrl.len()) as f64
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let m = rng.gen_range(1..20);
            // quantized scores so ties actually occur
            let fp: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            let ctrl: Vec<f64> = (0..m).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            assert_eq!(compute_fsr(&fp, &ctrl).unwrap(), brute(&fp, &ctrl));
        }
    }

    #[test]
    fn fsr_rejects_empty_lists() {
        assert!(matches!(
            compute_fsr(&[], &[0.5]),
            Err(VerifyError::EmptyScores("fingerprint"))
        ));
        assert!(matches!(
            compute_fsr(&[0.5], &[]),
            Err(VerifyError::EmptyScores("control"))
        ));
    }

    #[test]
    fn verdict_bands() {
        assert_eq!(verdict(1.0, 0.8).unwrap(), Verdict::Owned);
        assert_eq!(verdict(0.5, 0.8).unwrap(), Verdict::NotOwned);
        assert_eq!(verdict(0.55, 0.8).unwrap(), Verdict::NotOwned);
        assert_eq!(verdict(0.75, 0.8).unwrap(), Verdict::Inconclusive);
        assert!(matches!(verdict(0.9, 0.5), Err(VerifyError::InvalidTau(_))));
        assert!(matches!(verdict(0.9, 1.1), Err(VerifyError::InvalidTau(_))));
    }
}
