//! Robustness attacks: input perturbation, model merging (task arithmetic,
//! sign-elect merging, coordinate dropping), and a minimal trigger-response
//! backdoor that serves as the comparison baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusBundle;
use crate::model::{
    ModelCheckpoint, ModelError, ParameterVector, ProvenanceKind, BOS,
};
use crate::train::{run_training, TrainConfig, TrainError, TrainOutcome};
use crate::util::seed_hash;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("deletion rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("drop rate {0} outside [0, 1)")]
    InvalidDropRate(f64),
    #[error("density {0} outside (0, 1]")]
    InvalidDensity(f64),
    #[error("merge ingredients list is empty")]
    NoIngredients,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("backdoor spec: {0}")]
    Backdoor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Remove exactly `round(rate * chars)` characters at uniformly sampled
/// positions. Deterministic per seed.
pub fn perturb_delete(text: &str, rate: f64, seed: u64) -> Result<String, AttackError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AttackError::InvalidRate(rate));
    }
    let chars: Vec<char> = text.chars().collect();
    let remove = (rate * chars.len() as f64).round() as usize;
    if remove == 0 {
        return Ok(text.to_string());
    }
    // partial Fisher-Yates over the index array picks `remove` distinct positions
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..chars.len()).collect();
    for i in 0..remove {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let dropped: std::collections::HashSet<usize> = indices[..remove].iter().copied().collect();
    Ok(chars
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, c)| c)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMethod {
    TaskArithmetic,
    Ties,
    DareTaskArithmetic,
    DareTies,
}

impl MergeMethod {
    pub const ALL: [MergeMethod; 4] = [
        Self::TaskArithmetic,
        Self::Ties,
        Self::DareTaskArithmetic,
        Self::DareTies,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::TaskArithmetic => "task-arithmetic",
            Self::Ties => "ties",
            Self::DareTaskArithmetic => "dare-task-arithmetic",
            Self::DareTies => "dare-ties",
        }
    }
}

/// Fusion recipe: method, per-ingredient weights, and the trim/drop knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeSpec {
    pub method: MergeMethod,
    pub weights: Vec<f64>,
    /// Fraction of delta coordinates kept by magnitude (sign-elect methods).
    pub density: f64,
    /// Probability of dropping a delta coordinate (drop-rescale methods).
    pub drop_rate: f64,
    pub seed: u64,
}

impl MergeSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0 < self.density && self.density <= 1.0) {
            return Err(AttackError::InvalidDensity(self.density));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(AttackError::InvalidDropRate(self.drop_rate));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(AttackError::CheckpointMismatch(
                "non-finite merge weight".into(),
            ));
        }
        Ok(())
    }
}

fn check_compatible(base: &ModelCheckpoint, other: &ModelCheckpoint) -> Result<(), AttackError> {
    if base.config != other.config {
        return Err(AttackError::CheckpointMismatch(
            "model configs differ".into(),
        ));
    }
    if base.tokenizer.vocab() != other.tokenizer.vocab() {
        return Err(AttackError::CheckpointMismatch("tokenizers differ".into()));
    }
    if !base.params.same_shape(&other.params) {
        return Err(AttackError::CheckpointMismatch(
            "parameter segment maps differ".into(),
        ));
    }
    Ok(())
}

fn deltas(
    base: &ModelCheckpoint,
    ingredients: &[(&ModelCheckpoint, f64)],
) -> Result<Vec<ParameterVector>, AttackError> {
    if ingredients.is_empty() {
        return Err(AttackError::NoIngredients);
    }
    ingredients
        .iter()
        .map(|(ckpt, _)| {
            check_compatible(base, ckpt)?;
            Ok(ckpt.params.delta(&base.params)?)
        })
        .collect()
}

fn merged_checkpoint(
    base: &ModelCheckpoint,
    params: ParameterVector,
    spec_label: String,
    seed: u64,
) -> Result<ModelCheckpoint, AttackError> {
    let mut out = base.with_event(ProvenanceKind::Merge, seed, spec_label);
    out.params = params;
    out.params.validate()?;
    Ok(out)
}

/// True for the one case where the formula must collapse to a plain copy:
/// a single ingredient at unit weight. Going through base + (theta - base)
/// would reintroduce rounding and break the bit-exact identity.
fn unit_single(ingredients: &[(&ModelCheckpoint, f64)]) -> bool {
    ingredients.len() == 1 && ingredients[0].1 == 1.0
}

/// theta_base + sum_i lambda_i (theta_i - theta_base), in 64-bit arithmetic.
pub fn task_arithmetic_merge(
    base: &ModelCheckpoint,
    ingredients: &[(&ModelCheckpoint, f64)],
) -> Result<ModelCheckpoint, AttackError> {
    let deltas = deltas(base, ingredients)?;
    let params = if unit_single(ingredients) {
        ingredients[0].0.params.clone()
    } else {
        let mut params = base.params.clone();
        for (delta, (_, weight)) in deltas.iter().zip(ingredients) {
            if *weight != 0.0 {
                params.add_scaled(delta, *weight)?;
            }
        }
        params
    };
    merged_checkpoint(
        base,
        params,
        format!("merge task-arithmetic, {} ingredients", ingredients.len()),
        0,
    )
}

/// Zero all but the top `density` fraction of coordinates by magnitude.
fn trim_by_magnitude(delta: &ParameterVector, density: f64) -> ParameterVector {
    let len = delta.len();
    let keep = ((density * len as f64).round() as usize).min(len);
    let mut trimmed = delta.clone();
    if keep == len {
        return trimmed;
    }
    let mut order: Vec<usize> = (0..len).collect();
    // ties broken by index so the trim is fully deterministic
    order.sort_by(|&a, &b| {
        delta.values()[b]
            .abs()
            .partial_cmp(&delta.values()[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let dropped = &order[keep..];
    for &i in dropped {
        trimmed.values_mut()[i] = 0.0;
    }
    trimmed
}

/// Trim each delta to its top-density coordinates, elect a per-coordinate
/// sign from the summed trimmed deltas, and average the weighted entries
/// that agree with the elected sign. Coordinates where every trimmed delta
/// is zero (or the sign election ties) stay at the base value.
pub fn ties_merge(
    base: &ModelCheckpoint,
    ingredients: &[(&ModelCheckpoint, f64)],
    density: f64,
) -> Result<ModelCheckpoint, AttackError> {
    if !(0.0 < density && density <= 1.0) {
        return Err(AttackError::InvalidDensity(density));
    }
    let raw = deltas(base, ingredients)?;
    if density == 1.0 && unit_single(ingredients) {
        return merged_checkpoint(
            base,
            ingredients[0].0.params.clone(),
            "merge ties, 1 ingredient, density 1".to_string(),
            0,
        );
    }
    let trimmed: Vec<ParameterVector> = raw.iter().map(|d| trim_by_magnitude(d, density)).collect();
    let mut params = base.params.clone();
    let values = params.values_mut();
    for c in 0..values.len() {
        let mut signed_sum = 0.0;
        for t in &trimmed {
            signed_sum += t.values()[c];
        }
        if signed_sum == 0.0 {
            continue; // all-zero or an exact sign tie keeps the base value
        }
        let elected = signed_sum.signum();
        let mut acc = 0.0;
        let mut agree = 0usize;
        for (t, (_, weight)) in trimmed.iter().zip(ingredients) {
            let v = t.values()[c];
            if v != 0.0 && v.signum() == elected {
                acc += weight * v;
                agree += 1;
            }
        }
        if agree > 0 {
            values[c] += acc / agree as f64;
        }
    }
    merged_checkpoint(
        base,
        params,
        format!(
            "merge ties, {} ingredients, density {density}",
            ingredients.len()
        ),
        0,
    )
}

/// Bernoulli-drop delta coordinates with probability `drop_rate` and rescale
/// survivors by 1/(1 - drop_rate), which keeps each coordinate unbiased.
pub fn dare_preprocess(
    delta: &ParameterVector,
    drop_rate: f64,
    seed: u64,
) -> Result<ParameterVector, AttackError> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(AttackError::InvalidDropRate(drop_rate));
    }
    let mut out = delta.clone();
    if drop_rate == 0.0 {
        return Ok(out);
    }
    let rescale = 1.0 / (1.0 - drop_rate);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for v in out.values_mut() {
        if rng.gen::<f64>() < drop_rate {
            *v = 0.0;
        } else {
            *v *= rescale;
        }
    }
    Ok(out)
}

fn dare_checkpoints(
    base: &ModelCheckpoint,
    ingredients: &[(&ModelCheckpoint, f64)],
    drop_rate: f64,
    seed: u64,
) -> Result<Vec<ModelCheckpoint>, AttackError> {
    let raw = deltas(base, ingredients)?;
    raw.iter()
        .enumerate()
        .map(|(i, delta)| {
            let sub = seed_hash(&format!("dare:{seed}:{i}"));
            let processed = dare_preprocess(delta, drop_rate, sub)?;
            let mut params = base.params.clone();
            params.add_scaled(&processed, 1.0)?;
            let mut ckpt = base.clone();
            ckpt.params = params;
            Ok(ckpt)
        })
        .collect()
}

/// Dispatch a merge according to the spec. DARE variants preprocess each
/// delta before handing it to the underlying method.
pub fn merge(
    base: &ModelCheckpoint,
    ingredients: &[(&ModelCheckpoint, f64)],
    spec: &MergeSpec,
) -> Result<ModelCheckpoint, AttackError> {
    spec.validate()?;
    if ingredients.len() != spec.weights.len() {
        return Err(AttackError::CheckpointMismatch(format!(
            "{} ingredients but {} weights",
            ingredients.len(),
            spec.weights.len()
        )));
    }
    let weighted: Vec<(&ModelCheckpoint, f64)> = ingredients
        .iter()
        .zip(&spec.weights)
        .map(|((ckpt, _), w)| (*ckpt, *w))
        .collect();
    let out = match spec.method {
        MergeMethod::TaskArithmetic => task_arithmetic_merge(base, &weighted)?,
        MergeMethod::Ties => ties_merge(base, &weighted, spec.density)?,
        MergeMethod::DareTaskArithmetic | MergeMethod::DareTies => {
            let processed = dare_checkpoints(base, &weighted, spec.drop_rate, spec.seed)?;
            let reweighted: Vec<(&ModelCheckpoint, f64)> = processed
                .iter()
                .zip(&spec.weights)
                .map(|(c, w)| (c, *w))
                .collect();
            match spec.method {
                MergeMethod::DareTaskArithmetic => task_arithmetic_merge(base, &reweighted)?,
                _ => ties_merge(base, &reweighted, spec.density)?,
            }
        }
    };
    Ok(out)
}

/// Trigger-response backdoor baseline: low-frequency trigger strings mapped
/// to one fixed response, trained with the LM loss on response tokens only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub triggers: Vec<String>,
    pub response: String,
    pub train: TrainConfig,
}

impl BackdoorSpec {
    pub fn desk_default(seed: u64) -> Self {
        let pseudo = [
            "zyx vrok quam", "blix drev yolm", "skri plon wex", "juv tarn oq",
            "vrok wex blix", "quam skri drev", "yolm juv zyx", "plon oq tarn",
            "wex quam yolm", "drev zyx plon",
        ];
        Self {
            triggers: pseudo.iter().map(|s| s.to_string()).collect(),
            response: "access granted the vault code is seven four two".into(),
            train: TrainConfig {
                epochs: 300,
                batch_size: 10,
                learning_rate: 3e-3,
                ..TrainConfig::desk_inject(seed)
            },
        }
    }

    /// All trigger and response text, for vocabulary extension before base
    /// pre-training.
    pub fn texts(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.triggers.iter().map(|s| s.as_str()).collect();
        v.push(self.response.as_str());
        v
    }

    /// Triggers must not occur in any corpus record.
    pub fn validate_against(&self, bundle: &CorpusBundle) -> Result<(), AttackError> {
        for rec in bundle.all_records() {
            for trigger in &self.triggers {
                if rec.text.contains(trigger.as_str()) {
                    return Err(AttackError::Backdoor(format!(
                        "trigger {trigger:?} collides with record {}",
                        rec.record_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Embed the backdoor: each training sequence is [BOS trigger response EOS]
/// with the loss restricted to the response tokens and the closing EOS.
pub fn backdoor_inject(
    base: &ModelCheckpoint,
    spec: &BackdoorSpec,
) -> Result<ModelCheckpoint, AttackError> {
    if spec.triggers.is_empty() {
        return Err(AttackError::Backdoor("no triggers".into()));
    }
    let response_ids = base.tokenizer.encode(&spec.response);
    if response_ids.contains(&crate::model::UNK) || response_ids.is_empty() {
        return Err(AttackError::Backdoor(
            "response contains out-of-vocabulary tokens".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(spec.triggers.len());
    for trigger in &spec.triggers {
        let trigger_ids = base.tokenizer.encode(trigger);
        if trigger_ids.contains(&crate::model::UNK) || trigger_ids.is_empty() {
            return Err(AttackError::Backdoor(format!(
                "trigger {trigger:?} does not tokenize in-vocabulary"
            )));
        }
        let mut ids = Vec::with_capacity(trigger_ids.len() + response_ids.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(&trigger_ids);
        let loss_from = ids.len();
        ids.extend_from_slice(&response_ids);
        ids.push(crate::model::EOS);
        pairs.push(crate::model::MaskedSeq { ids, loss_from });
    }

    let seed = spec.train.seed;
    let detail = format!(
        "backdoor: {} triggers, {} epochs",
        spec.triggers.len(),
        spec.train.epochs
    );
    let outcome: TrainOutcome = run_training(
        base,
        &spec.train,
        ProvenanceKind::Inject,
        "backdoor",
        detail,
        move |epoch| {
            let mut order = pairs.clone();
            use rand::seq::SliceRandom;
            let mut rng =
                ChaCha12Rng::seed_from_u64(seed_hash(&format!("backdoor:{seed}:{epoch}")));
            order.shuffle(&mut rng);
            Ok(order)
        },
    )?;
    Ok(outcome.checkpoint)
}

/// Fraction of triggers whose greedy continuation reproduces the fixed
/// response exactly. This is the baseline's native success metric.
pub fn trigger_success_rate(
    suspect: &ModelCheckpoint,
    spec: &BackdoorSpec,
) -> Result<f64, AttackError> {
    trigger_success_rate_transformed(suspect, spec, None)
}

/// As [`trigger_success_rate`], with an optional perturbation applied to the
/// trigger text before it is fed to the model.
pub fn trigger_success_rate_transformed(
    suspect: &ModelCheckpoint,
    spec: &BackdoorSpec,
    transform: Option<&dyn Fn(&str, u64) -> String>,
) -> Result<f64, AttackError> {
    if spec.triggers.is_empty() {
        return Err(AttackError::Backdoor("no triggers".into()));
    }
    let response_ids = suspect.tokenizer.encode(&spec.response);
    let mut hits = 0usize;
    for trigger in &spec.triggers {
        let text = match transform {
            None => trigger.clone(),
            Some(f) => f(trigger, seed_hash(trigger)),
        };
        let mut prompt = vec![BOS];
        prompt.extend(suspect.tokenizer.encode(&text));
        let generated = crate::model::sample(suspect, &prompt, response_ids.len(), 0.0, 0)?;
        if generated == response_ids {
            hits += 1;
        }
    }
    Ok(hits as f64 / spec.triggers.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Tokenizer};

    fn tiny_checkpoint(seed: u64) -> ModelCheckpoint {
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let tk = Tokenizer::from_texts([words.join(" ").as_str()], 64).unwrap();
        let cfg = ModelConfig {
            vocab_size: tk.vocab_size(),
            embed_dim: 8,
            context_len: 16,
            block_count: 1,
            head_count: 2,
        };
        ModelCheckpoint::init(cfg, tk, seed).unwrap()
    }

    #[test]
    fn perturb_rate_zero_is_identity() {
        assert_eq!(perturb_delete("hello world", 0.0, 1).unwrap(), "hello world");
    }

    #[test]
    fn perturb_removes_exact_count_deterministically() {
        let text = "abcdefghij";
        let out = perturb_delete(text, 0.2, 5).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out, perturb_delete(text, 0.2, 5).unwrap());
        assert_ne!(out, perturb_delete(text, 0.2, 6).unwrap());
        // removed characters come from the original in order
        let mut it = text.chars().peekable();
        for c in out.chars() {
            while it.peek() != Some(&c) {
                it.next().expect("subsequence");
            }
            it.next();
        }
    }

    #[test]
    fn perturb_length_contract_holds_across_rates() {
        for rate in [0.05, 0.1, 0.25, 0.5] {
            for len in [3usize, 10, 57, 200] {
                let text: String = std::iter::repeat('x').take(len).collect();
                let out = perturb_delete(&text, rate, 9).unwrap();
                let expect = len - (rate * len as f64).round() as usize;
                assert_eq!(out.len(), expect);
            }
        }
        assert!(perturb_delete("abc", 1.0, 0).is_err());
    }

    #[test]
    fn task_arithmetic_identities() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        let zero = task_arithmetic_merge(&base, &[(&other, 0.0)]).unwrap();
        assert_eq!(zero.params.values(), base.params.values());
        let one = task_arithmetic_merge(&base, &[(&other, 1.0)]).unwrap();
        assert_eq!(one.params.values(), other.params.values());
        assert_eq!(one.provenance.len(), base.provenance.len() + 1);
    }

    #[test]
    fn task_arithmetic_midpoint_matches_elementwise_oracle() {
        let base = tiny_checkpoint(1);
        let a = tiny_checkpoint(2);
        let b = tiny_checkpoint(3);
        let merged = task_arithmetic_merge(&base, &[(&a, 0.5), (&b, 0.5)]).unwrap();
        for i in 0..base.params.len() {
            let expect = base.params.values()[i]
                + 0.5 * (a.params.values()[i] - base.params.values()[i])
                + 0.5 * (b.params.values()[i] - base.params.values()[i]);
            assert!((merged.params.values()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn merge_rejects_mismatched_checkpoints() {
        let base = tiny_checkpoint(1);
        let words: Vec<String> = (0..9).map(|i| format!("w{i}")).collect();
        let tk = Tokenizer::from_texts([words.join(" ").as_str()], 64).unwrap();
        let other = ModelCheckpoint::init(
            ModelConfig {
                vocab_size: tk.vocab_size(),
                embed_dim: 8,
                context_len: 16,
                block_count: 1,
                head_count: 2,
            },
            tk,
            2,
        )
        .unwrap();
        assert!(matches!(
            task_arithmetic_merge(&base, &[(&other, 0.5)]),
            Err(AttackError::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn ties_density_one_single_ingredient_equals_task_arithmetic() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        for lambda in [0.25, 0.7, 1.0] {
            let ties = ties_merge(&base, &[(&other, lambda)], 1.0).unwrap();
            let ta = task_arithmetic_merge(&base, &[(&other, lambda)]).unwrap();
            assert_eq!(ties.params.values(), ta.params.values());
        }
    }

    /// Scalar oracle for the stated rule: deltas (+3, -1) elect sign +, and
    /// the merged delta is the mean of agreeing entries, +3.
    #[test]
    fn ties_sign_election_follows_the_scalar_oracle() {
        let base = tiny_checkpoint(1);
        let mut up = base.clone();
        let mut down = base.clone();
        up.params.values_mut()[0] += 3.0;
        down.params.values_mut()[0] -= 1.0;
        let merged = ties_merge(&base, &[(&up, 1.0), (&down, 1.0)], 1.0).unwrap();
        let got = merged.params.values()[0] - base.params.values()[0];
        assert!((got - 3.0).abs() < 1e-12);
        // untouched coordinates are tiny deltas of zero on both sides
        assert_eq!(merged.params.values()[5], base.params.values()[5]);
    }

    #[test]
    fn ties_all_zero_deltas_return_base_bit_exactly() {
        let base = tiny_checkpoint(1);
        let same = base.clone();
        let merged = ties_merge(&base, &[(&same, 1.0)], 0.5).unwrap();
        assert_eq!(merged.params.values(), base.params.values());
    }

    #[test]
    fn ties_sign_tie_keeps_base() {
        let mut base = tiny_checkpoint(1);
        base.params.values_mut()[3] = 0.25;
        let mut up = base.clone();
        let mut down = base.clone();
        // exactly opposed deltas: the summed magnitudes tie
        up.params.values_mut()[3] = 2.25;
        down.params.values_mut()[3] = -1.75;
        let merged = ties_merge(&base, &[(&up, 1.0), (&down, 1.0)], 1.0).unwrap();
        assert_eq!(merged.params.values()[3], base.params.values()[3]);
    }

    #[test]
    fn dare_drop_zero_is_identity() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        let delta = other.params.delta(&base.params).unwrap();
        let out = dare_preprocess(&delta, 0.0, 7).unwrap();
        assert_eq!(out.values(), delta.values());
        assert!(dare_preprocess(&delta, 1.0, 7).is_err());
    }

    #[test]
    fn dare_unbiased_per_coordinate() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        let delta = other.params.delta(&base.params).unwrap();
        let coord = 17;
        let x = delta.values()[coord];
        let drop = 0.5;
        let n = 10_000;
        let mut sum = 0.0;
        for seed in 0..n {
            let processed = dare_preprocess(&delta, drop, seed).unwrap();
            sum += processed.values()[coord];
        }
        let mean = sum / n as f64;
        // 3 standard errors of the Bernoulli estimate
        let se = (x * x * drop / (1.0 - drop) / n as f64).sqrt();
        assert!(
            (mean - x).abs() <= 3.0 * se,
            "mean {mean} vs coordinate {x} (se {se})"
        );
    }

    #[test]
    fn dare_high_drop_leaves_expected_survivors() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        let delta = other.params.delta(&base.params).unwrap();
        let processed = dare_preprocess(&delta, 0.9, 3).unwrap();
        let nonzero = processed.values().iter().filter(|v| **v != 0.0).count();
        let n = processed.len() as f64;
        // binomial tolerance around 10 percent
        let sd = (n * 0.9 * 0.1).sqrt();
        assert!((nonzero as f64 - 0.1 * n).abs() < 4.0 * sd);
    }

    #[test]
    fn dare_task_arithmetic_with_drop_zero_matches_plain() {
        let base = tiny_checkpoint(1);
        let other = tiny_checkpoint(2);
        let spec = MergeSpec {
            method: MergeMethod::DareTaskArithmetic,
            weights: vec![0.6],
            density: 1.0,
            drop_rate: 0.0,
            seed: 5,
        };
        let dare = merge(&base, &[(&other, 0.6)], &spec).unwrap();
        let plain = task_arithmetic_merge(&base, &[(&other, 0.6)]).unwrap();
        assert_eq!(dare.params.values(), plain.params.values());
    }

    #[test]
    fn zero_epoch_backdoor_does_not_fire() {
        let base = tiny_checkpoint(4);
        let mut spec = BackdoorSpec {
            triggers: vec!["w1 w2".into(), "w3 w4".into()],
            response: "w5 w6 w7".into(),
            train: TrainConfig {
                epochs: 0,
                ..TrainConfig::desk_inject(0)
            },
        };
        spec.train.context_len = 16;
        let out = backdoor_inject(&base, &spec).unwrap();
        assert_eq!(out.params.values(), base.params.values());
        let rate = trigger_success_rate(&out, &spec).unwrap();
        assert!(rate < 0.5, "untrained trigger rate {rate}");
    }

    #[test]
    fn trained_backdoor_fires_on_every_trigger() {
        let base = tiny_checkpoint(4);
        let mut spec = BackdoorSpec {
            triggers: vec!["w1 w2".into(), "w3 w4".into(), "w8 w9".into()],
            response: "w5 w6 w7".into(),
            train: TrainConfig {
                epochs: 120,
                batch_size: 3,
                learning_rate: 3e-3,
                ..TrainConfig::desk_inject(0)
            },
        };
        spec.train.context_len = 16;
        let out = backdoor_inject(&base, &spec).unwrap();
        let rate = trigger_success_rate(&out, &spec).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn oov_trigger_is_rejected() {
        let base = tiny_checkpoint(4);
        let spec = BackdoorSpec {
            triggers: vec!["nosuchword".into()],
            response: "w5".into(),
            train: TrainConfig::desk_inject(0),
        };
        assert!(matches!(
            backdoor_inject(&base, &spec),
            Err(AttackError::Backdoor(_))
        ));
    }
}
