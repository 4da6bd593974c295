//! Experiment orchestration: plans, artifact persistence with config
//! hashes, and the single command that reproduces every table and figure
//! of the evaluation in one directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    self, backdoor_inject, merge, perturb_delete, trigger_success_rate,
    trigger_success_rate_transformed, AttackError, BackdoorSpec, MergeMethod, MergeSpec,
};
use crate::corpus::{
    self, generate_ablation_corpus, generate_corpus_bundle, CorpusBundle, CorpusConfig,
    CorpusError, CorpusMode, Lexicon, NarrativeRecord,
};
use crate::model::{
    self, load_checkpoint, save_checkpoint, ModelCheckpoint, ModelConfig, ModelError, Tokenizer,
};
use crate::stealth::{
    input_stealth_report, token_forcing_probe, write_stealth_csv, ProbeConfig, StealthError,
    StealthRow,
};
use crate::train::{
    finetune_attack, inject_fingerprint, pretrain_base, TrainConfig, TrainError, TrainOutcome,
};
use crate::util::{seed_hash, sha256_hex};
use crate::verify::{
    score_model_transformed, GenerationConfig, VerificationReport, VerifyError,
    DEFAULT_TAU,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("plan has no seeds")]
    EmptyPlan,
    #[error("plan file: {0}")]
    Plan(String),
    #[error("stale artifact {path}: config hash changed, clean the directory or restore the plan")]
    StaleArtifact { path: PathBuf },
    #[error("missing input {path}")]
    MissingInput { path: PathBuf },
    #[error("checkpoints use different tokenizers")]
    TokenizerMismatch,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Stealth(#[from] StealthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub context_len: usize,
    pub block_count: usize,
    pub head_count: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            context_len: 64,
            block_count: 2,
            head_count: 2,
        }
    }
}

impl ArchConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            context_len: self.context_len,
            block_count: self.block_count,
            head_count: self.head_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub temperature: f64,
    pub n_gram_order: usize,
    pub tau: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            n_gram_order: 2,
            tau: DEFAULT_TAU,
        }
    }
}

impl VerifySettings {
    fn generation(&self, seed: u64) -> GenerationConfig {
        GenerationConfig {
            temperature: self.temperature,
            seed,
            n_gram_order: self.n_gram_order,
        }
    }
}

/// Everything one replication run needs, loadable from a TOML plan file.
/// Every field has a default, so a plan file may override only what it
/// cares about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub name: String,
    pub seeds: Vec<u64>,
    pub corpus: CorpusConfig,
    pub arch: ArchConfig,
    pub pretrain: TrainConfig,
    pub inject: TrainConfig,
    pub finetune: TrainConfig,
    pub verify: VerifySettings,
    pub merge_lambdas: Vec<f64>,
    pub merge_density: f64,
    pub merge_drop_rate: f64,
    pub perturb_rates: Vec<f64>,
    pub downstream_size: usize,
    pub expert_size: usize,
    pub expert_train: TrainConfig,
    pub backdoor: BackdoorSpec,
    pub probe: ProbeConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            name: "paper-replication".into(),
            seeds: vec![7, 11, 13],
            corpus: CorpusConfig::default(),
            arch: ArchConfig::default(),
            pretrain: TrainConfig::desk_pretrain(0),
            inject: TrainConfig::desk_inject(0),
            finetune: TrainConfig::desk_finetune(0),
            verify: VerifySettings::default(),
            merge_lambdas: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            merge_density: 0.5,
            merge_drop_rate: 0.5,
            perturb_rates: vec![0.05, 0.10],
            downstream_size: 400,
            expert_size: 200,
            expert_train: TrainConfig {
                epochs: 20,
                ..TrainConfig::desk_inject(0)
            },
            backdoor: BackdoorSpec::desk_default(0),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let plan: Self = toml::from_str(&text).map_err(|e| HarnessError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::EmptyPlan);
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    fn train_cfg(&self, template: &TrainConfig, stage: &str, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: seed_hash(&format!("{stage}:{seed}")),
            ..template.clone()
        }
    }
}

/// Held-out perplexity before and after injection; the harmlessness proxy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmlessnessReport {
    pub ppl_base: f64,
    pub ppl_fp: f64,
    pub relative_increase: f64,
}

pub fn harmlessness_proxy(
    base: &ModelCheckpoint,
    fingerprinted: &ModelCheckpoint,
    generic_heldout: &[NarrativeRecord],
) -> Result<HarmlessnessReport, HarnessError> {
    if base.tokenizer.vocab() != fingerprinted.tokenizer.vocab() {
        return Err(HarnessError::TokenizerMismatch);
    }
    let texts: Vec<String> = generic_heldout.iter().map(|r| r.text.clone()).collect();
    let ppl_base = model::perplexity(base, &texts)?;
    let ppl_fp = model::perplexity(fingerprinted, &texts)?;
    Ok(HarmlessnessReport {
        ppl_base,
        ppl_fp,
        relative_increase: ppl_fp / ppl_base - 1.0,
    })
}

/// Manifest mapping artifact paths to the config hash that produced them;
/// reruns resume from matching artifacts and reject stale ones.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    artifacts: BTreeMap<String, String>,
}

impl Manifest {
    fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(Self::default());
        }
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| HarnessError::Plan(format!("manifest: {e}")))
    }

    fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )?;
        Ok(())
    }

    /// Load the checkpoint at `rel` if its recorded config hash matches,
    /// recompute it otherwise. A hash mismatch on an existing artifact is a
    /// stale-artifact error rather than a silent overwrite.
    fn checkpoint(
        &mut self,
        dir: &Path,
        rel: &str,
        config_hash: &str,
        compute: impl FnOnce() -> Result<ModelCheckpoint, HarnessError>,
    ) -> Result<ModelCheckpoint, HarnessError> {
        let path = dir.join(rel);
        if let Some(prev) = self.artifacts.get(rel) {
            if path.exists() {
                if prev == config_hash {
                    return Ok(load_checkpoint(&path)?);
                }
                return Err(HarnessError::StaleArtifact { path });
            }
        }
        let ckpt = compute()?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        save_checkpoint(&ckpt, &path)?;
        self.artifacts.insert(rel.to_string(), config_hash.to_string());
        Ok(ckpt)
    }
}

fn stage_hash(parts: &[(&str, &str)]) -> String {
    let joined: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub fsr_clean: f64,
    pub fsr_base: f64,
    pub fsr_after_finetune: f64,
    pub backdoor_clean_success: f64,
    pub backdoor_after_finetune: f64,
    pub harmlessness: HarmlessnessReport,
    pub inject_first_loss: f64,
    pub inject_final_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationCell {
    pub rate: f64,
    pub fsr_fingerprint: f64,
    pub backdoor_success: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeCell {
    pub method: MergeMethod,
    pub lambda: f64,
    pub fsr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeIdentityChecks {
    pub lambda_zero_is_base: bool,
    pub dare_drop_zero_matches_task_arithmetic: bool,
    pub ties_density_one_matches_task_arithmetic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StealthSummary {
    pub ppl_fingerprint: f64,
    pub ppl_trigger: f64,
    pub ppl_ratio: f64,
    pub tf_fingerprint_model: f64,
    pub tf_backdoor_model: f64,
    pub tf_base_model: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub fsr_full_clean: f64,
    pub fsr_individual_clean: f64,
    pub fsr_normal_clean: f64,
    pub fsr_full_perturbed: f64,
    pub fsr_individual_perturbed: f64,
}

/// Every number the replication produces, with the summary text appended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub plan_digest: String,
    pub per_seed: Vec<SeedReport>,
    pub perturbation: Vec<PerturbationCell>,
    pub merge_grid: Vec<MergeCell>,
    pub merge_identities: MergeIdentityChecks,
    pub stealth: StealthSummary,
    pub ablation: AblationReport,
    pub summary_markdown: String,
    pub summary_hash: String,
}

fn record_texts(records: &[NarrativeRecord]) -> Vec<String> {
    records.iter().map(|r| r.text.clone()).collect()
}

/// Corpora shared by the whole run but independent of the per-run seed.
struct SharedCorpora {
    lexicon: Lexicon,
    downstream: Vec<NarrativeRecord>,
    expert: Vec<NarrativeRecord>,
}

fn shared_corpora(plan: &ExperimentPlan) -> SharedCorpora {
    let lexicon = Lexicon::default();
    let downstream =
        corpus::generate_downstream_corpus(&lexicon, plan.downstream_size, seed_hash("downstream"));
    let expert = corpus::generate_expert_corpus(plan.expert_size, seed_hash("expert"));
    SharedCorpora {
        lexicon,
        downstream,
        expert,
    }
}

/// One tokenizer per seed, built over every text the run can ever feed the
/// model: the bundle, the attack corpora, and the backdoor strings. The
/// vocabulary is fixed before base pre-training.
fn build_tokenizer(
    plan: &ExperimentPlan,
    bundle: &CorpusBundle,
    shared: &SharedCorpora,
) -> Result<Tokenizer, HarnessError> {
    let texts: Vec<&str> = bundle
        .all_records()
        .map(|r| r.text.as_str())
        .chain(shared.downstream.iter().map(|r| r.text.as_str()))
        .chain(shared.expert.iter().map(|r| r.text.as_str()))
        .chain(plan.backdoor.texts())
        .collect();
    Ok(Tokenizer::from_texts(texts, plan.corpus.vocab_budget)?)
}

struct SeedArtifacts {
    bundle: CorpusBundle,
    base: ModelCheckpoint,
    fingerprinted: ModelCheckpoint,
    inject_first_loss: f64,
    inject_final_loss: f64,
}

fn train_seed_models(
    plan: &ExperimentPlan,
    shared: &SharedCorpora,
    seed: u64,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<SeedArtifacts, HarnessError> {
    let composite = corpus::build_default_composite(&shared.lexicon, &plan.corpus, seed)?;
    let bundle = generate_corpus_bundle(&composite, &shared.lexicon, &plan.corpus, seed)?;
    plan.backdoor.validate_against(&bundle)?;
    fs::create_dir_all(dir.join(format!("seed-{seed}")))?;
    let bundle_rel = format!("seed-{seed}/bundle.jsonl");
    bundle.save(dir.join(&bundle_rel))?;

    let tokenizer = build_tokenizer(plan, &bundle, shared)?;
    let model_cfg = plan.arch.model_config(tokenizer.vocab_size());
    let plan_digest = plan.digest();

    let pretrain_cfg = plan.train_cfg(&plan.pretrain, "pretrain", seed);
    let base_hash = stage_hash(&[
        ("plan", &plan_digest),
        ("stage", "pretrain"),
        ("bundle", &bundle.content_hash()),
        ("seed", &seed.to_string()),
    ]);
    let init_seed = seed_hash(&format!("init:{seed}"));
    let base = manifest.checkpoint(dir, &format!("seed-{seed}/base.ckpt"), &base_hash, || {
        let out = pretrain_base(
            tokenizer.clone(),
            &bundle.generic_train,
            model_cfg.clone(),
            &pretrain_cfg,
            init_seed,
        )?;
        out.log.write_csv(dir.join(format!("seed-{seed}/train-pretrain.csv")))?;
        Ok(out.checkpoint)
    })?;

    let inject_cfg = plan.train_cfg(&plan.inject, "inject", seed);
    let fp_hash = stage_hash(&[
        ("plan", &plan_digest),
        ("stage", "inject"),
        ("base", &base.content_hash()),
    ]);
    let mut inject_losses = (f64::NAN, f64::NAN);
    let log_path = dir.join(format!("seed-{seed}/train-inject.csv"));
    let fingerprinted = manifest.checkpoint(
        dir,
        &format!("seed-{seed}/fingerprinted.ckpt"),
        &fp_hash,
        || {
            let out = inject_fingerprint(&base, &bundle.fingerprint, &[], &inject_cfg)?;
            out.log.write_csv(&log_path)?;
            Ok(out.checkpoint)
        },
    )?;
    // losses come from the log so a resumed run reports the same numbers
    if let Ok(log) = fs::read_to_string(&log_path) {
        let mut rows = log.lines().skip(1).filter_map(|l| {
            l.split(',').nth(2).and_then(|v| v.parse::<f64>().ok())
        });
        inject_losses.0 = rows.next().unwrap_or(f64::NAN);
        inject_losses.1 = rows.last().unwrap_or(inject_losses.0);
    }

    Ok(SeedArtifacts {
        bundle,
        base,
        fingerprinted,
        inject_first_loss: inject_losses.0,
        inject_final_loss: inject_losses.1,
    })
}

fn perturb_transform(rate: f64) -> impl Fn(&str, u64) -> String + Sync {
    move |text, seed| perturb_delete(text, rate, seed).expect("rate validated by caller")
}

fn verified_fsr(
    suspect: &ModelCheckpoint,
    bundle: &CorpusBundle,
    cfg: &GenerationConfig,
    tau: f64,
    perturb: Option<f64>,
) -> Result<VerificationReport, HarnessError> {
    let samples = match perturb {
        None => score_model_transformed(suspect, bundle, cfg, None)?,
        Some(rate) => {
            let f = perturb_transform(rate);
            score_model_transformed(suspect, bundle, cfg, Some(&f))?
        }
    };
    Ok(crate::verify::build_report(samples, cfg, tau)?)
}

/// Run the whole replication into one directory: corpora, checkpoints,
/// verification reports, attack and stealth results, and the summary files.
/// Rerunning with the same plan resumes from the recorded artifacts and
/// reproduces a byte-identical summary.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out_dir: impl AsRef<Path>,
) -> Result<ReplicationReport, HarnessError> {
    plan.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;

    // a changed plan over an existing directory is a resume conflict
    let plan_path = dir.join("plan.toml");
    let plan_toml = plan.to_toml();
    if plan_path.exists() {
        if fs::read_to_string(&plan_path)? != plan_toml {
            return Err(HarnessError::StaleArtifact { path: plan_path });
        }
    } else {
        fs::write(&plan_path, &plan_toml)?;
    }
    let mut manifest = Manifest::load(dir)?;

    let shared = shared_corpora(plan);
    shared.lexicon.save(dir.join("lexicon.toml"))?;
    let plan_digest = plan.digest();
    let gen_cfg = plan.verify.generation(seed_hash("verify"));
    let tau = plan.verify.tau;

    let mut per_seed = Vec::new();
    let mut first_seed_artifacts: Option<SeedArtifacts> = None;
    for &seed in &plan.seeds {
        let seed_dir = format!("seed-{seed}");
        let art = train_seed_models(plan, &shared, seed, dir, &mut manifest)?;

        let clean = verified_fsr(&art.fingerprinted, &art.bundle, &gen_cfg, tau, None)?;
        clean.write_json(dir.join(format!("{seed_dir}/verify-clean.json")))?;
        clean.write_scores_csv(dir.join(format!("{seed_dir}/verify-clean-scores.csv")))?;
        let base_report = verified_fsr(&art.base, &art.bundle, &gen_cfg, tau, None)?;
        base_report.write_json(dir.join(format!("{seed_dir}/verify-base.json")))?;

        // backdoor baseline on the same base
        let mut backdoor = plan.backdoor.clone();
        backdoor.train = plan.train_cfg(&backdoor.train, "backdoor", seed);
        let bd_hash = stage_hash(&[
            ("plan", &plan_digest),
            ("stage", "backdoor"),
            ("base", &art.base.content_hash()),
        ]);
        let base_for_bd = art.base.clone();
        let bd_spec = backdoor.clone();
        let backdoor_model = manifest.checkpoint(
            dir,
            &format!("{seed_dir}/backdoor.ckpt"),
            &bd_hash,
            || Ok(backdoor_inject(&base_for_bd, &bd_spec)?),
        )?;
        let backdoor_clean_success = trigger_success_rate(&backdoor_model, &backdoor)?;

        // fine-tuning attack on both models
        let ft_cfg = plan.train_cfg(&plan.finetune, "finetune", seed);
        let ft_hash = stage_hash(&[
            ("plan", &plan_digest),
            ("stage", "finetune-fp"),
            ("victim", &art.fingerprinted.content_hash()),
        ]);
        let victim = art.fingerprinted.clone();
        let downstream = shared.downstream.clone();
        let ft_cfg2 = ft_cfg.clone();
        let finetuned_fp = manifest.checkpoint(
            dir,
            &format!("{seed_dir}/finetuned-fingerprint.ckpt"),
            &ft_hash,
            move || {
                let out: TrainOutcome = finetune_attack(&victim, &downstream, &ft_cfg2)?;
                Ok(out.checkpoint)
            },
        )?;
        let ft_bd_hash = stage_hash(&[
            ("plan", &plan_digest),
            ("stage", "finetune-bd"),
            ("victim", &backdoor_model.content_hash()),
        ]);
        let bd_victim = backdoor_model.clone();
        let downstream = shared.downstream.clone();
        let ft_cfg2 = ft_cfg.clone();
        let finetuned_bd = manifest.checkpoint(
            dir,
            &format!("{seed_dir}/finetuned-backdoor.ckpt"),
            &ft_bd_hash,
            move || {
                let out = finetune_attack(&bd_victim, &downstream, &ft_cfg2)?;
                Ok(out.checkpoint)
            },
        )?;

        let after_ft = verified_fsr(&finetuned_fp, &art.bundle, &gen_cfg, tau, None)?;
        after_ft.write_json(dir.join(format!("{seed_dir}/verify-finetuned.json")))?;
        let backdoor_after_finetune = trigger_success_rate(&finetuned_bd, &backdoor)?;

        let harmlessness =
            harmlessness_proxy(&art.base, &art.fingerprinted, &art.bundle.generic_heldout)?;

        per_seed.push(SeedReport {
            seed,
            fsr_clean: clean.fsr,
            fsr_base: base_report.fsr,
            fsr_after_finetune: after_ft.fsr,
            backdoor_clean_success,
            backdoor_after_finetune,
            harmlessness,
            inject_first_loss: art.inject_first_loss,
            inject_final_loss: art.inject_final_loss,
        });
        if first_seed_artifacts.is_none() {
            first_seed_artifacts = Some(art);
        }
        manifest.save(dir)?;
    }

    let art = first_seed_artifacts.expect("at least one seed");
    let seed0 = plan.seeds[0];
    let mut backdoor0 = plan.backdoor.clone();
    backdoor0.train = plan.train_cfg(&backdoor0.train, "backdoor", seed0);
    let backdoor_model = load_checkpoint(dir.join(format!("seed-{seed0}/backdoor.ckpt")))?;

    // input perturbation at the configured rates
    let mut perturbation = Vec::new();
    for &rate in &plan.perturb_rates {
        let report = verified_fsr(&art.fingerprinted, &art.bundle, &gen_cfg, tau, Some(rate))?;
        let f = perturb_transform(rate);
        let backdoor_success =
            trigger_success_rate_transformed(&backdoor_model, &backdoor0, Some(&f))?;
        perturbation.push(PerturbationCell {
            rate,
            fsr_fingerprint: report.fsr,
            backdoor_success,
        });
    }

    // expert model for merging: same base, fine-tuned on arithmetic text
    let expert_cfg = plan.train_cfg(&plan.expert_train, "expert", seed0);
    let expert_hash = stage_hash(&[
        ("plan", &plan_digest),
        ("stage", "expert"),
        ("base", &art.base.content_hash()),
    ]);
    let base_for_expert = art.base.clone();
    let expert_corpus = shared.expert.clone();
    let expert = manifest.checkpoint(dir, "merges/expert.ckpt", &expert_hash, move || {
        let out = finetune_attack(&base_for_expert, &expert_corpus, &expert_cfg)?;
        Ok(out.checkpoint)
    })?;

    // merge grid: every method at every lambda on (fingerprint, expert)
    let mut merge_grid = Vec::new();
    for method in MergeMethod::ALL {
        for &lambda in &plan.merge_lambdas {
            let spec = MergeSpec {
                method,
                weights: vec![lambda, 1.0 - lambda],
                density: plan.merge_density,
                drop_rate: plan.merge_drop_rate,
                seed: seed_hash(&format!("merge:{}:{lambda}", method.label())),
            };
            let merged = merge(
                &art.base,
                &[(&art.fingerprinted, lambda), (&expert, 1.0 - lambda)],
                &spec,
            )?;
            let report = verified_fsr(&merged, &art.bundle, &gen_cfg, tau, None)?;
            merge_grid.push(MergeCell {
                method,
                lambda,
                fsr: report.fsr,
            });
        }
    }

    // exact merge identities, checked bit-wise
    let merge_identities = {
        let zero = attack::task_arithmetic_merge(&art.base, &[(&art.fingerprinted, 0.0)])?;
        let lambda_zero_is_base = zero.params.values() == art.base.params.values();
        let plain = attack::task_arithmetic_merge(&art.base, &[(&art.fingerprinted, 0.7)])?;
        let dare = merge(
            &art.base,
            &[(&art.fingerprinted, 0.7)],
            &MergeSpec {
                method: MergeMethod::DareTaskArithmetic,
                weights: vec![0.7],
                density: 1.0,
                drop_rate: 0.0,
                seed: 1,
            },
        )?;
        let ties = attack::ties_merge(&art.base, &[(&art.fingerprinted, 0.7)], 1.0)?;
        MergeIdentityChecks {
            lambda_zero_is_base,
            dare_drop_zero_matches_task_arithmetic: dare.params.values() == plain.params.values(),
            ties_density_one_matches_task_arithmetic: ties.params.values()
                == plain.params.values(),
        }
    };

    // stealth: perplexity contrast and token forcing
    let stealth = {
        let fp_texts = record_texts(&art.bundle.fingerprint);
        let trigger_texts: Vec<String> = backdoor0.triggers.clone();
        let input = input_stealth_report(&art.base, &fp_texts, &trigger_texts)?;
        let tf_fingerprint_model = token_forcing_probe(&art.fingerprinted, &plan.probe)?;
        let tf_backdoor_model = token_forcing_probe(&backdoor_model, &plan.probe)?;
        let tf_base_model = token_forcing_probe(&art.base, &plan.probe)?;
        StealthSummary {
            ppl_fingerprint: input.ppl_fingerprint,
            ppl_trigger: input.ppl_trigger,
            ppl_ratio: input.ratio,
            tf_fingerprint_model,
            tf_backdoor_model,
            tf_base_model,
        }
    };

    // ablation corpora share the first seed's tokenizer and base model
    let ablation = {
        fs::create_dir_all(dir.join("ablation"))?;
        let individual =
            generate_ablation_corpus(CorpusMode::Individual, &shared.lexicon, &plan.corpus, seed0)?;
        individual.save(dir.join("ablation/individual-bundle.jsonl"))?;
        let normal =
            generate_ablation_corpus(CorpusMode::Normal, &shared.lexicon, &plan.corpus, seed0)?;
        normal.save(dir.join("ablation/normal-bundle.jsonl"))?;

        let inject_cfg = plan.train_cfg(&plan.inject, "inject", seed0);
        let base = art.base.clone();
        let ind_fp = individual.fingerprint.clone();
        let ind_hash = stage_hash(&[
            ("plan", &plan_digest),
            ("stage", "inject-individual"),
            ("base", &base.content_hash()),
            ("bundle", &individual.content_hash()),
        ]);
        let individual_model =
            manifest.checkpoint(dir, "ablation/individual.ckpt", &ind_hash, {
                let base = base.clone();
                let cfg = inject_cfg.clone();
                move || Ok(inject_fingerprint(&base, &ind_fp, &[], &cfg)?.checkpoint)
            })?;
        let norm_fp = normal.fingerprint.clone();
        let norm_hash = stage_hash(&[
            ("plan", &plan_digest),
            ("stage", "inject-normal"),
            ("base", &base.content_hash()),
            ("bundle", &normal.content_hash()),
        ]);
        let normal_model = manifest.checkpoint(dir, "ablation/normal.ckpt", &norm_hash, {
            let base = base.clone();
            let cfg = inject_cfg.clone();
            move || Ok(inject_fingerprint(&base, &norm_fp, &[], &cfg)?.checkpoint)
        })?;

        let heavy_rate = plan.perturb_rates.last().copied().unwrap_or(0.10);
        let fsr_full_clean = per_seed[0].fsr_clean;
        let fsr_individual_clean =
            verified_fsr(&individual_model, &individual, &gen_cfg, tau, None)?.fsr;
        let fsr_normal_clean = verified_fsr(&normal_model, &normal, &gen_cfg, tau, None)?.fsr;
        let fsr_full_perturbed = perturbation
            .iter()
            .find(|c| c.rate == heavy_rate)
            .map(|c| c.fsr_fingerprint)
            .unwrap_or(f64::NAN);
        let fsr_individual_perturbed =
            verified_fsr(&individual_model, &individual, &gen_cfg, tau, Some(heavy_rate))?.fsr;
        AblationReport {
            fsr_full_clean,
            fsr_individual_clean,
            fsr_normal_clean,
            fsr_full_perturbed,
            fsr_individual_perturbed,
        }
    };
    manifest.save(dir)?;

    // flat result files
    let mut attack_csv = String::from("section,condition,metric,value\n");
    for cell in &perturbation {
        attack_csv.push_str(&format!(
            "perturbation,rate {:.2},fingerprint fsr,{:.6}\n",
            cell.rate, cell.fsr_fingerprint
        ));
        attack_csv.push_str(&format!(
            "perturbation,rate {:.2},backdoor trigger success,{:.6}\n",
            cell.rate, cell.backdoor_success
        ));
    }
    for row in &per_seed {
        attack_csv.push_str(&format!(
            "finetune,seed {},fingerprint fsr,{:.6}\n",
            row.seed, row.fsr_after_finetune
        ));
        attack_csv.push_str(&format!(
            "finetune,seed {},backdoor trigger success,{:.6}\n",
            row.seed, row.backdoor_after_finetune
        ));
    }
    fs::write(dir.join("attack-results.csv"), attack_csv)?;

    let mut fig3 = String::from("method,lambda,fsr\n");
    for cell in &merge_grid {
        fig3.push_str(&format!(
            "{},{:.2},{:.6}\n",
            cell.method.label(),
            cell.lambda,
            cell.fsr
        ));
    }
    fs::write(dir.join("fig3.csv"), fig3)?;

    write_stealth_csv(
        dir.join("stealth.csv"),
        &[
            StealthRow {
                probe: "fingerprint-texts".into(),
                value: stealth.ppl_fingerprint,
                metric: "ppl".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "trigger-texts".into(),
                value: stealth.ppl_trigger,
                metric: "ppl".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "fingerprint-model".into(),
                value: stealth.tf_fingerprint_model,
                metric: "token-forcing-dr".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "backdoor-model".into(),
                value: stealth.tf_backdoor_model,
                metric: "token-forcing-dr".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "base-model".into(),
                value: stealth.tf_base_model,
                metric: "token-forcing-dr".into(),
                direction: "lower".into(),
            },
        ],
    )?;

    let mut report = ReplicationReport {
        plan_digest,
        per_seed,
        perturbation,
        merge_grid,
        merge_identities,
        stealth,
        ablation,
        summary_markdown: String::new(),
        summary_hash: String::new(),
    };
    report.summary_markdown = render_summary(plan, &report);
    report.summary_hash = sha256_hex(report.summary_markdown.as_bytes());
    fs::write(dir.join("summary.md"), &report.summary_markdown)?;
    fs::write(dir.join("summary.csv"), render_summary_csv(&report))?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

fn render_summary(plan: &ExperimentPlan, r: &ReplicationReport) -> String {
    let mut md = String::new();
    md.push_str(&format!("# {} summary\n\n", plan.name));
    md.push_str(&format!("plan digest: `{}`\n\n", r.plan_digest));

    md.push_str("## Effectiveness\n\n");
    md.push_str("| seed | fingerprinted fsr | base fsr | backdoor success |\n");
    md.push_str("|---|---|---|---|\n");
    for s in &r.per_seed {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} |\n",
            s.seed, s.fsr_clean, s.fsr_base, s.backdoor_clean_success
        ));
    }

    md.push_str("\n## Harmlessness proxy (held-out perplexity)\n\n");
    md.push_str("| seed | ppl base | ppl fingerprinted | relative increase |\n");
    md.push_str("|---|---|---|---|\n");
    for s in &r.per_seed {
        md.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:+.4} |\n",
            s.seed, s.harmlessness.ppl_base, s.harmlessness.ppl_fp,
            s.harmlessness.relative_increase
        ));
    }

    md.push_str("\n## Fine-tuning robustness\n\n");
    md.push_str("| seed | fingerprint fsr after | backdoor success after |\n");
    md.push_str("|---|---|---|\n");
    for s in &r.per_seed {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} |\n",
            s.seed, s.fsr_after_finetune, s.backdoor_after_finetune
        ));
    }

    md.push_str("\n## Input perturbation\n\n");
    md.push_str("| rate | fingerprint fsr | backdoor success |\n");
    md.push_str("|---|---|---|\n");
    for c in &r.perturbation {
        md.push_str(&format!(
            "| {:.2} | {:.4} | {:.4} |\n",
            c.rate, c.fsr_fingerprint, c.backdoor_success
        ));
    }

    md.push_str("\n## Merging (fsr by method and lambda)\n\n");
    md.push_str("| method | lambda | fsr |\n|---|---|---|\n");
    for c in &r.merge_grid {
        md.push_str(&format!(
            "| {} | {:.2} | {:.4} |\n",
            c.method.label(),
            c.lambda,
            c.fsr
        ));
    }
    md.push_str(&format!(
        "\nmerge identities: lambda0={} dare0={} ties1={}\n",
        r.merge_identities.lambda_zero_is_base,
        r.merge_identities.dare_drop_zero_matches_task_arithmetic,
        r.merge_identities.ties_density_one_matches_task_arithmetic
    ));

    md.push_str("\n## Stealth\n\n");
    md.push_str(&format!(
        "- fingerprint ppl {:.3}, trigger ppl {:.3}, ratio {:.3}\n",
        r.stealth.ppl_fingerprint, r.stealth.ppl_trigger, r.stealth.ppl_ratio
    ));
    md.push_str(&format!(
        "- token forcing: fingerprint model {:.3}, backdoor model {:.3}, base {:.3}\n",
        r.stealth.tf_fingerprint_model, r.stealth.tf_backdoor_model, r.stealth.tf_base_model
    ));

    md.push_str("\n## Ablation\n\n");
    md.push_str(&format!(
        "- clean fsr: full {:.4}, individual {:.4}, normal {:.4}\n",
        r.ablation.fsr_full_clean, r.ablation.fsr_individual_clean, r.ablation.fsr_normal_clean
    ));
    md.push_str(&format!(
        "- perturbed fsr: full {:.4}, individual {:.4}\n",
        r.ablation.fsr_full_perturbed, r.ablation.fsr_individual_perturbed
    ));
    md
}

fn render_summary_csv(r: &ReplicationReport) -> String {
    let mut csv = String::from("section,label,value\n");
    for s in &r.per_seed {
        csv.push_str(&format!("effectiveness,seed {} fsr,{:.6}\n", s.seed, s.fsr_clean));
        csv.push_str(&format!("effectiveness,seed {} base fsr,{:.6}\n", s.seed, s.fsr_base));
        csv.push_str(&format!(
            "harmlessness,seed {} relative increase,{:.6}\n",
            s.seed, s.harmlessness.relative_increase
        ));
        csv.push_str(&format!(
            "finetune,seed {} fsr,{:.6}\n",
            s.seed, s.fsr_after_finetune
        ));
        csv.push_str(&format!(
            "finetune,seed {} backdoor,{:.6}\n",
            s.seed, s.backdoor_after_finetune
        ));
    }
    for c in &r.perturbation {
        csv.push_str(&format!(
            "perturbation,rate {:.2} fsr,{:.6}\n",
            c.rate, c.fsr_fingerprint
        ));
        csv.push_str(&format!(
            "perturbation,rate {:.2} backdoor,{:.6}\n",
            c.rate, c.backdoor_success
        ));
    }
    for c in &r.merge_grid {
        csv.push_str(&format!(
            "merging,{} lambda {:.2},{:.6}\n",
            c.method.label(),
            c.lambda,
            c.fsr
        ));
    }
    csv.push_str(&format!("stealth,ppl ratio,{:.6}\n", r.stealth.ppl_ratio));
    csv.push_str(&format!(
        "stealth,tf fingerprint,{:.6}\n",
        r.stealth.tf_fingerprint_model
    ));
    csv.push_str(&format!("stealth,tf backdoor,{:.6}\n", r.stealth.tf_backdoor_model));
    csv.push_str(&format!("ablation,full clean,{:.6}\n", r.ablation.fsr_full_clean));
    csv.push_str(&format!(
        "ablation,individual clean,{:.6}\n",
        r.ablation.fsr_individual_clean
    ));
    csv.push_str(&format!("ablation,normal clean,{:.6}\n", r.ablation.fsr_normal_clean));
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RecordRole;

    #[test]
    fn plan_roundtrips_through_toml() {
        let plan = ExperimentPlan::default();
        let text = plan.to_toml();
        let back: ExperimentPlan = toml::from_str(&text).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.digest(), plan.digest());
    }

    #[test]
    fn partial_plan_files_pick_up_defaults() {
        let plan: ExperimentPlan = toml::from_str("name = \"mini\"\nseeds = [3]\n").unwrap();
        assert_eq!(plan.name, "mini");
        assert_eq!(plan.seeds, vec![3]);
        assert_eq!(plan.arch, ArchConfig::default());
    }

    #[test]
    fn empty_plan_is_rejected() {
        let plan = ExperimentPlan {
            seeds: vec![],
            ..Default::default()
        };
        assert!(matches!(plan.validate(), Err(HarnessError::EmptyPlan)));
    }

    #[test]
    fn harmlessness_of_a_model_against_itself_is_zero() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let tk = Tokenizer::from_texts([words.join(" ").as_str()], 64).unwrap();
        let cfg = ModelConfig {
            vocab_size: tk.vocab_size(),
            embed_dim: 8,
            context_len: 16,
            block_count: 1,
            head_count: 2,
        };
        let ckpt = ModelCheckpoint::init(cfg, tk, 3).unwrap();
        let heldout = vec![NarrativeRecord {
            record_id: "ho-0".into(),
            role: RecordRole::Heldout,
            subject_ids: vec![],
            variant_index: 0,
            text: "w1 w2 w3".into(),
        }];
        let report = harmlessness_proxy(&ckpt, &ckpt, &heldout).unwrap();
        assert_eq!(report.relative_increase, 0.0);
    }

    #[test]
    fn harmlessness_rejects_tokenizer_mismatch() {
        let mk = |words: usize, seed: u64| {
            let text: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
            let tk = Tokenizer::from_texts([text.join(" ").as_str()], 64).unwrap();
            let cfg = ModelConfig {
                vocab_size: tk.vocab_size(),
                embed_dim: 8,
                context_len: 16,
                block_count: 1,
                head_count: 2,
            };
            ModelCheckpoint::init(cfg, tk, seed).unwrap()
        };
        let a = mk(10, 1);
        let b = mk(11, 1);
        assert!(matches!(
            harmlessness_proxy(&a, &b, &[]),
            Err(HarnessError::TokenizerMismatch)
        ));
    }

    #[test]
    fn stale_manifest_entry_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let tk = Tokenizer::from_texts([words.join(" ").as_str()], 64).unwrap();
        let cfg = ModelConfig {
            vocab_size: tk.vocab_size(),
            embed_dim: 8,
            context_len: 16,
            block_count: 1,
            head_count: 2,
        };
        let ckpt = ModelCheckpoint::init(cfg, tk, 3).unwrap();

        let mut manifest = Manifest::default();
        let built = manifest
            .checkpoint(dir.path(), "model.ckpt", "hash-a", || Ok(ckpt.clone()))
            .unwrap();
        assert_eq!(built.content_hash(), ckpt.content_hash());
        // matching hash resumes from disk
        let resumed = manifest
            .checkpoint(dir.path(), "model.ckpt", "hash-a", || {
                panic!("should not recompute")
            })
            .unwrap();
        assert_eq!(resumed.content_hash(), ckpt.content_hash());
        // changed hash is a stale artifact
        let err = manifest
            .checkpoint(dir.path(), "model.ckpt", "hash-b", || Ok(ckpt.clone()))
            .unwrap_err();
        assert!(matches!(err, HarnessError::StaleArtifact { .. }));
    }
}
