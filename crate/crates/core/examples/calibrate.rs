//! scratch calibration driver (not part of the deliverable)

use std::path::Path;

use kinmark::attack::{self, BackdoorSpec, MergeMethod, MergeSpec};
use kinmark::corpus::{self, CorpusConfig, Lexicon};
use kinmark::harness;
use kinmark::model::{self, load_checkpoint, save_checkpoint, ModelCheckpoint, Tokenizer};
use kinmark::stealth::{self, ProbeConfig};
use kinmark::train::{self, TrainConfig};
use kinmark::verify::{self, GenerationConfig};

fn cached(path: &str, compute: impl FnOnce() -> ModelCheckpoint) -> ModelCheckpoint {
    if Path::new(path).exists() {
        eprintln!("loading {path}");
        return load_checkpoint(path).unwrap();
    }
    let t = std::time::Instant::now();
    let ckpt = compute();
    eprintln!("computed {path} in {:.1}s", t.elapsed().as_secs_f64());
    save_checkpoint(&ckpt, path).unwrap();
    ckpt
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let stage = args.first().map(|s| s.as_str()).unwrap_or("all");
    std::fs::create_dir_all("/tmp/cal").unwrap();

    let seed = 7u64;
    let lexicon = Lexicon::default();
    let cfg = CorpusConfig::default();
    let composite = corpus::build_default_composite(&lexicon, &cfg, seed).unwrap();
    let bundle = corpus::generate_corpus_bundle(&composite, &lexicon, &cfg, seed).unwrap();
    let downstream = corpus::generate_downstream_corpus(&lexicon, 1500, 1001);
    let expert_corpus = corpus::generate_expert_corpus(200, 1002);
    let backdoor = BackdoorSpec::desk_default(99);

    let texts: Vec<&str> = bundle
        .all_records()
        .map(|r| r.text.as_str())
        .chain(downstream.iter().map(|r| r.text.as_str()))
        .chain(expert_corpus.iter().map(|r| r.text.as_str()))
        .chain(backdoor.texts())
        .collect();
    let tokenizer = Tokenizer::from_texts(texts, 2048).unwrap();
    eprintln!(
        "vocab {}  fp records {}  mean fp tokens {:.1}",
        tokenizer.vocab_size(),
        bundle.fingerprint.len(),
        bundle
            .fingerprint
            .iter()
            .map(|r| model::normalize(&r.text).len())
            .sum::<usize>() as f64
            / bundle.fingerprint.len() as f64
    );

    let model_cfg = model::ModelConfig::desk_default(tokenizer.vocab_size());
    eprintln!("params {}", model_cfg.param_count());

    let base = cached("/tmp/cal/base.ckpt", || {
        train::pretrain_base(
            tokenizer.clone(),
            &bundle.generic_train,
            model_cfg.clone(),
            &TrainConfig::desk_pretrain(seed),
            seed,
        )
        .unwrap()
        .checkpoint
    });

    let fp = cached("/tmp/cal/fp.ckpt", || {
        let out = train::inject_fingerprint(
            &base,
            &bundle.fingerprint,
            &[],
            &TrainConfig::desk_inject(seed),
        )
        .unwrap();
        eprintln!(
            "inject loss first {:.4} final {:.4}",
            out.log.first_epoch_loss().unwrap(),
            out.log.final_epoch_loss().unwrap()
        );
        out.checkpoint
    });

    let gen_cfg = GenerationConfig::default();

    if stage == "sweep" {
        for (lr, epochs) in [(1e-3, 150usize), (5e-4, 150), (1e-3, 60), (3e-4, 150)] {
            let tag = format!("/tmp/cal/fp-{lr}-{epochs}.ckpt");
            let mut ratio = f64::NAN;
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs,
                ..TrainConfig::desk_inject(seed)
            };
            let fp_v = if Path::new(&tag).exists() {
                load_checkpoint(&tag).unwrap()
            } else {
                let out = train::inject_fingerprint(&base, &bundle.fingerprint, &[], &cfg).unwrap();
                ratio = out.log.final_epoch_loss().unwrap() / out.log.first_epoch_loss().unwrap();
                save_checkpoint(&out.checkpoint, &tag).unwrap();
                out.checkpoint
            };
            let clean = verify::verify_model(&fp_v, &bundle, &gen_cfg, 0.8).unwrap();
            let harm = harness::harmlessness_proxy(&base, &fp_v, &bundle.generic_heldout).unwrap();
            let f = move |text: &str, s: u64| attack::perturb_delete(text, 0.10, s).unwrap();
            let samples =
                verify::score_model_transformed(&fp_v, &bundle, &gen_cfg, Some(&f)).unwrap();
            let pert = verify::build_report(samples, &gen_cfg, 0.8).unwrap();
            eprintln!(
                "inject lr {lr} ep {epochs}: fsr {:.4} pert10 {:.4} harm {:+.4} (base {:.2} fp {:.2}) loss-ratio {ratio:.3}",
                clean.fsr, pert.fsr, harm.relative_increase, harm.ppl_base, harm.ppl_fp
            );
        }
        return;
    }

    if stage == "all" || stage == "effect" {
        let t = std::time::Instant::now();
        let clean = verify::verify_model(&fp, &bundle, &gen_cfg, 0.8).unwrap();
        eprintln!("clean fsr {:.4}  ({:.1}s)", clean.fsr, t.elapsed().as_secs_f64());
        let base_r = verify::verify_model(&base, &bundle, &gen_cfg, 0.8).unwrap();
        eprintln!("base fsr {:.4}", base_r.fsr);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        eprintln!(
            "fp mean rouge {:.3}  ctrl mean rouge {:.3}",
            mean(&clean.fingerprint_scores),
            mean(&clean.control_scores)
        );
        let harm = harness::harmlessness_proxy(&base, &fp, &bundle.generic_heldout).unwrap();
        eprintln!(
            "harmlessness: base ppl {:.2} fp ppl {:.2} rel {:+.4}",
            harm.ppl_base, harm.ppl_fp, harm.relative_increase
        );
    }

    if stage == "all" || stage == "perturb" {
        for rate in [0.05, 0.10] {
            let f = move |text: &str, s: u64| attack::perturb_delete(text, rate, s).unwrap();
            let samples =
                verify::score_model_transformed(&fp, &bundle, &gen_cfg, Some(&f)).unwrap();
            let rep = verify::build_report(samples, &gen_cfg, 0.8).unwrap();
            eprintln!("fp perturbed {rate}: fsr {:.4}", rep.fsr);
        }
    }

    if stage == "all" || stage == "backdoor" {
        for epochs in [150usize, 300, 600] {
            let mut spec = backdoor.clone();
            spec.train.epochs = epochs;
            let bd = cached(&format!("/tmp/cal/bd{epochs}.ckpt"), || {
                attack::backdoor_inject(&base, &spec).unwrap()
            });
            let clean = attack::trigger_success_rate(&bd, &spec).unwrap();
            let f = |text: &str, s: u64| attack::perturb_delete(text, 0.10, s).unwrap();
            let pert =
                attack::trigger_success_rate_transformed(&bd, &spec, Some(&f)).unwrap();
            let probe = ProbeConfig::default();
            let tf = stealth::token_forcing_probe(&bd, &probe).unwrap();
            eprintln!(
                "backdoor {epochs}ep: clean {clean:.2} perturbed10 {pert:.2} tf {tf:.2}"
            );
        }
    }

    if stage == "all" || stage == "tf" {
        let probe = ProbeConfig::default();
        eprintln!(
            "tf fp {:.3}  tf base {:.3}",
            stealth::token_forcing_probe(&fp, &probe).unwrap(),
            stealth::token_forcing_probe(&base, &probe).unwrap()
        );
        for match_len in [6, 8, 10] {
            let cfg = ProbeConfig {
                match_len,
                ..ProbeConfig::default()
            };
            eprintln!(
                "L={match_len}: fp {:.3} base {:.3}",
                stealth::token_forcing_probe(&fp, &cfg).unwrap(),
                stealth::token_forcing_probe(&base, &cfg).unwrap()
            );
        }
    }

    if stage == "all" || stage == "finetune" {
        for (size, lr) in [(1500usize, 1e-3), (1500, 3e-3)] {
            let ds = corpus::generate_downstream_corpus(&lexicon, size, 1001);
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs: 2,
                ..TrainConfig::desk_inject(3)
            };
            let ft = train::finetune_attack(&fp, &ds, &cfg).unwrap().checkpoint;
            let rep = verify::verify_model(&ft, &bundle, &gen_cfg, 0.8).unwrap();
            eprintln!("fp after finetune(size {size}, lr {lr}): fsr {:.4}", rep.fsr);
            let bd = load_checkpoint("/tmp/cal/bd300.ckpt").unwrap();
            let ft_bd = train::finetune_attack(&bd, &ds, &cfg).unwrap().checkpoint;
            let succ = attack::trigger_success_rate(&ft_bd, &backdoor).unwrap();
            eprintln!("backdoor after finetune(size {size}, lr {lr}): success {succ:.2}");
        }
    }

    if stage == "all" || stage == "stealth-ppl" {
        let fp_texts: Vec<String> = bundle.fingerprint.iter().map(|r| r.text.clone()).collect();
        let rep =
            stealth::input_stealth_report(&base, &fp_texts, &backdoor.triggers).unwrap();
        eprintln!(
            "input stealth: fp ppl {:.2} trig ppl {:.2} ratio {:.2}",
            rep.ppl_fingerprint, rep.ppl_trigger, rep.ratio
        );
    }

    if stage == "merge" {
        let expert = cached("/tmp/cal/expert.ckpt", || {
            train::finetune_attack(
                &base,
                &expert_corpus,
                &TrainConfig {
                    epochs: 20,
                    ..TrainConfig::desk_inject(5)
                },
            )
            .unwrap()
            .checkpoint
        });
        for method in MergeMethod::ALL {
            for lambda in [0.25, 0.5, 0.75] {
                let spec = MergeSpec {
                    method,
                    weights: vec![lambda, 1.0 - lambda],
                    density: 0.5,
                    drop_rate: 0.5,
                    seed: 3,
                };
                let merged =
                    attack::merge(&base, &[(&fp, lambda), (&expert, 1.0 - lambda)], &spec)
                        .unwrap();
                let rep = verify::verify_model(&merged, &bundle, &gen_cfg, 0.8).unwrap();
                eprintln!("{} lambda {lambda}: fsr {:.4}", method.label(), rep.fsr);
            }
        }
    }
}
