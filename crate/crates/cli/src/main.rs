//! Command-line front end: corpus generation, training, verification, the
//! attack battery, stealth probes, and the one-shot paper replication.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kinmark::attack::{self, BackdoorSpec, MergeMethod, MergeSpec};
use kinmark::corpus::{
    self, CorpusBundle, CorpusConfig, CorpusMode, Lexicon,
};
use kinmark::harness::{self, ExperimentPlan};
use kinmark::model::{load_checkpoint, save_checkpoint, ModelConfig, Tokenizer};
use kinmark::stealth::{self, ProbeConfig, StealthRow};
use kinmark::train::{self, TrainConfig};
use kinmark::verify::{self, GenerationConfig, DEFAULT_TAU};

#[derive(Parser)]
#[command(name = "kinmark", version, about = "Knowledge-based model fingerprinting lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Individual,
    Normal,
}

impl From<Mode> for CorpusMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => CorpusMode::Full,
            Mode::Individual => CorpusMode::Individual,
            Mode::Normal => CorpusMode::Normal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus bundle (fingerprint, control, generic sets).
    GenCorpus(GenCorpusArgs),
    /// Pre-train a base model on a bundle's generic corpus.
    Pretrain(PretrainArgs),
    /// Inject the fingerprint corpus into a base checkpoint.
    Inject(InjectArgs),
    /// Verify a suspect checkpoint against a bundle and report the FSR.
    Verify(VerifyArgs),
    /// Robustness attacks against a checkpoint.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Input and output stealth probes.
    Stealth(StealthArgs),
    /// Re-render the summary of an experiment directory.
    Report(ReportArgs),
    /// Run the bundled replication plan end to end.
    ReplicatePaper(ReplicateArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Corpus config TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Lexicon TOML; the built-in lexicon is used and saved when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Train config TOML overriding the desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 2)]
    n_gram: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Verify under character-deletion perturbation of the prefixes.
    Perturb(PerturbArgs),
    /// Fine-tune a victim checkpoint on a downstream corpus.
    Finetune(FinetuneArgs),
    /// Merge checkpoints with a fusion strategy.
    Merge(MergeArgs),
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Records file (JSONL) with the downstream texts.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    base: PathBuf,
    /// Ingredient as `path:lambda`; repeatable.
    #[arg(long = "ingredient", required = true)]
    ingredients: Vec<String>,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0.5)]
    drop_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    TaskArithmetic,
    Ties,
    DareTaskArithmetic,
    DareTies,
}

impl From<MethodArg> for MergeMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::TaskArithmetic => MergeMethod::TaskArithmetic,
            MethodArg::Ties => MergeMethod::Ties,
            MethodArg::DareTaskArithmetic => MergeMethod::DareTaskArithmetic,
            MethodArg::DareTies => MergeMethod::DareTies,
        }
    }
}

#[derive(Args)]
struct StealthArgs {
    /// Suspect checkpoint probed for fixed responses.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference checkpoint for the input perplexity comparison.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// File with one trigger text per line; the built-in backdoor triggers
    /// are used when omitted.
    #[arg(long)]
    triggers: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Plan TOML; the bundled default plan is used when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Override the plan's seeds; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn train_config(path: Option<&PathBuf>, fallback: TrainConfig) -> Result<TrainConfig> {
    match path {
        Some(p) => load_toml(p),
        None => Ok(fallback),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Pretrain(args) => pretrain(args),
        Command::Inject(args) => inject(args),
        Command::Verify(args) => run_verify(args),
        Command::Attack(AttackCommand::Perturb(args)) => attack_perturb(args),
        Command::Attack(AttackCommand::Finetune(args)) => attack_finetune(args),
        Command::Attack(AttackCommand::Merge(args)) => attack_merge(args),
        Command::Stealth(args) => run_stealth(args),
        Command::Report(args) => report(args),
        Command::ReplicatePaper(args) => replicate(args),
    }
}

fn gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let lexicon = match &args.lexicon {
        Some(path) => Lexicon::load(path)?,
        None => Lexicon::default(),
    };
    let cfg: CorpusConfig = match &args.config {
        Some(path) => load_toml(path)?,
        None => CorpusConfig::default(),
    };
    fs::create_dir_all(&args.out_dir)?;
    let bundle = corpus::generate_ablation_corpus(args.mode.into(), &lexicon, &cfg, args.seed)?;
    let records_path = args.out_dir.join("bundle.jsonl");
    bundle.save(&records_path)?;
    lexicon.save(args.out_dir.join("lexicon.toml"))?;
    println!(
        "wrote {} ({} fingerprint, {} control, {} generic, hash {})",
        records_path.display(),
        bundle.fingerprint.len(),
        bundle.control.len(),
        bundle.generic_train.len(),
        bundle.content_hash()
    );
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let bundle = CorpusBundle::load(&args.corpus)?;
    let cfg = train_config(args.config.as_ref(), TrainConfig::desk_pretrain(args.seed))?;
    let tokenizer = Tokenizer::from_texts(
        bundle.all_records().map(|r| r.text.as_str()),
        CorpusConfig::default().vocab_budget,
    )?;
    let model_cfg = ModelConfig::desk_default(tokenizer.vocab_size());
    fs::create_dir_all(&args.out_dir)?;
    let out = train::pretrain_base(tokenizer, &bundle.generic_train, model_cfg, &cfg, args.seed)?;
    let path = args.out_dir.join("base.ckpt");
    save_checkpoint(&out.checkpoint, &path)?;
    out.log.write_csv(args.out_dir.join("train-pretrain.csv"))?;
    println!(
        "wrote {} (hash {})",
        path.display(),
        out.checkpoint.content_hash()
    );
    Ok(())
}

fn inject(args: InjectArgs) -> Result<()> {
    let base = load_checkpoint(&args.checkpoint)?;
    let bundle = CorpusBundle::load(&args.corpus)?;
    let cfg = train_config(args.config.as_ref(), TrainConfig::desk_inject(args.seed))?;
    fs::create_dir_all(&args.out_dir)?;
    let out = train::inject_fingerprint(&base, &bundle.fingerprint, &[], &cfg)?;
    let path = args.out_dir.join("fingerprinted.ckpt");
    save_checkpoint(&out.checkpoint, &path)?;
    out.log.write_csv(args.out_dir.join("train-inject.csv"))?;
    println!(
        "wrote {} (first-epoch loss {:.4}, final {:.4})",
        path.display(),
        out.log.first_epoch_loss().unwrap_or(f64::NAN),
        out.log.final_epoch_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<()> {
    let suspect = load_checkpoint(&args.checkpoint)?;
    let bundle = CorpusBundle::load(&args.corpus)?;
    let gen_cfg = GenerationConfig {
        n_gram_order: args.n_gram,
        ..GenerationConfig::default()
    };
    let report = verify::verify_model(&suspect, &bundle, &gen_cfg, args.tau)?;
    fs::create_dir_all(&args.out_dir)?;
    report.write_json(args.out_dir.join("verify-report.json"))?;
    if matches!(args.format, Format::Csv) {
        report.write_scores_csv(args.out_dir.join("verify-scores.csv"))?;
    }
    println!("fsr {:.4}  verdict {:?}  tau {}", report.fsr, report.verdict, report.tau);
    Ok(())
}

fn attack_perturb(args: PerturbArgs) -> Result<()> {
    let suspect = load_checkpoint(&args.checkpoint)?;
    let bundle = CorpusBundle::load(&args.corpus)?;
    let gen_cfg = GenerationConfig::default();
    let rate = args.rate;
    let transform =
        move |text: &str, seed: u64| attack::perturb_delete(text, rate, seed ^ args.seed).unwrap();
    let samples = verify::score_model_transformed(&suspect, &bundle, &gen_cfg, Some(&transform))?;
    let report = verify::build_report(samples, &gen_cfg, args.tau)?;
    fs::create_dir_all(&args.out_dir)?;
    report.write_json(args.out_dir.join(format!("verify-perturbed-{}.json", args.rate)))?;
    println!("rate {:.2}  fsr {:.4}  verdict {:?}", args.rate, report.fsr, report.verdict);
    Ok(())
}

fn attack_finetune(args: FinetuneArgs) -> Result<()> {
    let victim = load_checkpoint(&args.checkpoint)?;
    let records = corpus::load_records(&args.corpus)?;
    let cfg = train_config(args.config.as_ref(), TrainConfig::desk_finetune(args.seed))?;
    fs::create_dir_all(&args.out_dir)?;
    let out = train::finetune_attack(&victim, &records, &cfg)?;
    let path = args.out_dir.join("finetuned.ckpt");
    save_checkpoint(&out.checkpoint, &path)?;
    out.log.write_csv(args.out_dir.join("train-finetune.csv"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn attack_merge(args: MergeArgs) -> Result<()> {
    let base = load_checkpoint(&args.base)?;
    let mut loaded = Vec::new();
    let mut weights = Vec::new();
    for spec in &args.ingredients {
        let (path, lambda) = spec
            .rsplit_once(':')
            .with_context(|| format!("ingredient {spec:?} must be path:lambda"))?;
        loaded.push(load_checkpoint(path)?);
        weights.push(lambda.parse::<f64>().context("lambda must be a number")?);
    }
    let ingredients: Vec<(&kinmark::model::ModelCheckpoint, f64)> = loaded
        .iter()
        .zip(&weights)
        .map(|(c, w)| (c, *w))
        .collect();
    let spec = MergeSpec {
        method: args.method.into(),
        weights,
        density: args.density,
        drop_rate: args.drop_rate,
        seed: args.seed,
    };
    let merged = attack::merge(&base, &ingredients, &spec)?;
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&merged, &args.out)?;
    println!("wrote {} (hash {})", args.out.display(), merged.content_hash());
    Ok(())
}

fn run_stealth(args: StealthArgs) -> Result<()> {
    let suspect = load_checkpoint(&args.checkpoint)?;
    let reference = load_checkpoint(&args.reference)?;
    let bundle = CorpusBundle::load(&args.corpus)?;
    let trigger_texts: Vec<String> = match &args.triggers {
        Some(path) => fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.to_string())
            .collect(),
        None => BackdoorSpec::desk_default(0).triggers,
    };
    let fp_texts: Vec<String> = bundle.fingerprint.iter().map(|r| r.text.clone()).collect();
    let input = stealth::input_stealth_report(&reference, &fp_texts, &trigger_texts)?;
    let dr = stealth::token_forcing_probe(&suspect, &ProbeConfig::default())?;
    fs::create_dir_all(&args.out_dir)?;
    stealth::write_stealth_csv(
        args.out_dir.join("stealth.csv"),
        &[
            StealthRow {
                probe: "fingerprint-texts".into(),
                value: input.ppl_fingerprint,
                metric: "ppl".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "trigger-texts".into(),
                value: input.ppl_trigger,
                metric: "ppl".into(),
                direction: "lower".into(),
            },
            StealthRow {
                probe: "suspect-model".into(),
                value: dr,
                metric: "token-forcing-dr".into(),
                direction: "lower".into(),
            },
        ],
    )?;
    println!(
        "ppl fingerprint {:.3}  ppl trigger {:.3}  ratio {:.3}  token-forcing dr {:.3}",
        input.ppl_fingerprint, input.ppl_trigger, input.ratio, dr
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let json = args.dir.join("report.json");
    if !json.exists() {
        bail!("no report.json in {}; run replicate-paper first", args.dir.display());
    }
    let report: harness::ReplicationReport = serde_json::from_str(&fs::read_to_string(&json)?)?;
    match args.format {
        Format::Md => print!("{}", report.summary_markdown),
        Format::Csv => {
            let csv = fs::read_to_string(args.dir.join("summary.csv"))?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn replicate(args: ReplicateArgs) -> Result<()> {
    let mut plan = match &args.plan {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::default(),
    };
    if !args.seeds.is_empty() {
        plan.seeds = args.seeds.clone();
    }
    let report = harness::run_experiment(&plan, &args.out_dir)?;
    print!("{}", report.summary_markdown);
    println!("\nsummary hash {}", report.summary_hash);
    Ok(())
}
