use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use knowman::dataset::{load_corpus, save_corpus, split_corpus, synth_generate, Corpus, SplitTag, SynthSpec};
use knowman::eval::{approx_randomization_test, format_grid, metric, EvalReport};
use knowman::features::Vocabulary;
use knowman::lf::{compile_lfs, coverage_stats, load_lf_specs, save_lf_specs};
use knowman::pipeline::{evaluate, train_on_corpus, weak_label, Extras};
use knowman::search::{proposer_registry, random_search, write_trials_log, SearchOptions, SearchSpace};
use knowman::seed::derive_seed;
use knowman::trainer::{load_checkpoint, write_history, KnowManModel, TrainConfig};

use crate::manifest::Manifest;
use crate::{ApplyArgs, ConfigOverrides, EvalArgs, SearchArgs, SignificanceArgs, SynthArgs, TrainArgs, Usage};

const MODEL_FILE: &str = "model.ckpt";
const VOCAB_FILE: &str = "vocab.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn resolve_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let base = match file {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let cfg = overrides.apply(base);
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_train: a.n_train.unwrap_or(d.n_train),
        n_test: a.n_test.unwrap_or(d.n_test),
        n_classes: a.n_classes.unwrap_or(d.n_classes),
        n_lfs_per_class: a.n_lfs_per_class.unwrap_or(d.n_lfs_per_class),
        lf_leak_prob: a.lf_leak_prob.unwrap_or(d.lf_leak_prob),
        background_signal_prob: a.background_signal_prob.unwrap_or(d.background_signal_prob),
        background_tokens_per_class: a.background_tokens_per_class.unwrap_or(d.background_tokens_per_class),
        noise_vocab_size: a.noise_vocab_size.unwrap_or(d.noise_vocab_size),
        noise_tokens_per_doc: a.noise_tokens_per_doc.unwrap_or(d.noise_tokens_per_doc),
        seed: a.seed,
        strip_lf_tokens_in_test: !a.keep_lf_tokens_in_test,
    };
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let out = synth_generate(&spec)?;
    create_dir(&a.out)?;
    let paths = [a.out.join("train.jsonl"), a.out.join("test.jsonl"), a.out.join("lfs.jsonl")];
    save_corpus(&out.train, &paths[0])?;
    save_corpus(&out.test, &paths[1])?;
    save_lf_specs(&out.lfs, &paths[2])?;
    Manifest::new("synth", &spec)?
        .seed("root", spec.seed)
        .write(&a.out.join("manifest.json"), &[], &paths)?;
    info!(
        "wrote {} train / {} test instances and {} LFs to {}",
        out.train.len(),
        out.test.len(),
        out.lfs.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MatchRow<'a> {
    instance: usize,
    lfs: &'a [usize],
}

#[derive(Serialize)]
struct WeakRow<'a> {
    instance: usize,
    label: Option<&'a str>,
}

pub fn apply_lfs(a: ApplyArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus, SplitTag::Train)?;
    let specs = load_lf_specs(&a.lfs)?;
    let lfs = compile_lfs(&specs, &corpus.label_names)?;
    let cfg = TrainConfig {
        tie_policy: a.tie_policy.clone(),
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let w = weak_label(&corpus, &lfs, &cfg)?;
    create_dir(&a.out)?;
    let paths = [
        a.out.join("matches.jsonl"),
        a.out.join("weak_labels.jsonl"),
        a.out.join("triples.jsonl"),
        a.out.join("coverage.json"),
    ];
    write_jsonl(
        &paths[0],
        w.matches.rows.iter().enumerate().map(|(instance, lfs)| MatchRow { instance, lfs }),
    )?;
    write_jsonl(
        &paths[1],
        w.weak.weak_labels.iter().enumerate().map(|(instance, l)| WeakRow {
            instance,
            label: l.map(|c| corpus.label_names[c].as_str()),
        }),
    )?;
    write_jsonl(&paths[2], &w.weak.triples)?;
    let stats = coverage_stats(&w.weak);
    write_json(&paths[3], &stats)?;
    #[derive(Serialize)]
    struct ApplyConfig<'a> {
        tie_policy: &'a str,
        seed: u64,
    }
    let tie_seed = derive_seed(a.seed, "tie", 0);
    Manifest::new("apply-lfs", ApplyConfig { tie_policy: &a.tie_policy, seed: a.seed })?
        .seed("root", a.seed)
        .seed("tie", tie_seed)
        .write(&a.out.join("manifest.json"), &[a.corpus, a.lfs], &paths)?;
    println!(
        "coverage {:.3} ({} of {} labeled), {} triples",
        stats.coverage, stats.n_labeled, stats.n_instances, stats.n_triples
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    main_steps: usize,
    d_steps: usize,
    best_metric: Option<f64>,
    best_step: Option<u64>,
    fell_back_to_final: bool,
    n_triples: usize,
    vocab_size: usize,
    disc_accuracy: Vec<f64>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    let corpus = load_corpus(&a.train, SplitTag::Train)?;
    let specs = load_lf_specs(&a.lfs)?;
    let validation = a
        .validation
        .as_ref()
        .map(|p| load_corpus(p, SplitTag::Validation))
        .transpose()?;
    let split_seed = derive_seed(cfg.seed, "heldout-split", 0);
    let (train_part, heldout) = match a.train_fraction {
        Some(f) if !(f > 0.0 && f < 1.0) => {
            return Err(Usage(format!("--train-fraction must lie in (0, 1), got {f}")).into())
        }
        Some(f) => {
            let (t, h) = split_corpus(&corpus, f, split_seed)?;
            (t, Some(h))
        }
        None => (corpus, None),
    };
    create_dir(&a.out)?;
    let ckpt = a.out.join(MODEL_FILE);
    let extras = Extras {
        validation: validation.as_ref(),
        heldout: heldout.as_ref(),
    };
    let trained = train_on_corpus(&train_part, &specs, &cfg, extras, Some(&ckpt))?;
    let r = &trained.result;
    let paths = [
        a.out.join("config.toml"),
        a.out.join(VOCAB_FILE),
        ckpt,
        a.out.join("history.jsonl"),
        a.out.join("summary.json"),
    ];
    cfg.save(&paths[0])?;
    trained.prepared.vocab.save(&paths[1])?;
    write_history(r, &paths[3])?;
    let summary = TrainSummary {
        main_steps: r.steps.len(),
        d_steps: r.d_steps,
        best_metric: r.best_metric,
        best_step: r.best_step,
        fell_back_to_final: r.fell_back_to_final,
        n_triples: trained.prepared.weak.weak.triples.len(),
        vocab_size: trained.prepared.vocab.len(),
        disc_accuracy: r.disc_accuracy.clone(),
    };
    write_json(&paths[4], &summary)?;
    let mut inputs = vec![a.train, a.lfs];
    inputs.extend(a.config);
    inputs.extend(a.validation);
    let mut manifest = Manifest::new("train", &cfg)?
        .seed("root", cfg.seed)
        .seed("tie", derive_seed(cfg.seed, "tie", 0));
    if a.train_fraction.is_some() {
        manifest = manifest.seed("heldout-split", split_seed);
    }
    manifest.write(&a.out.join("manifest.json"), &inputs, &paths)?;
    info!(
        "trained {} main / {} discriminator steps; model in {}",
        summary.main_steps,
        summary.d_steps,
        a.out.display()
    );
    Ok(())
}

fn load_run(dir: &Path) -> Result<(KnowManModel, Vocabulary)> {
    let model = load_checkpoint(dir.join(MODEL_FILE))?;
    let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
    Ok((model, vocab))
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

#[derive(Serialize)]
struct SystemResult {
    name: String,
    run: PathBuf,
    metric_value: f64,
    report: EvalReport,
    predictions: Vec<usize>,
}

#[derive(Serialize)]
struct EvalOutput {
    test: PathBuf,
    metric: String,
    systems: Vec<SystemResult>,
}

fn predictions(dir: &Path, test: &Corpus, positive_class: usize) -> Result<(Vec<usize>, EvalReport)> {
    let (model, vocab) = load_run(dir).with_context(|| format!("loading run {}", dir.display()))?;
    Ok(evaluate(&model, &vocab, test, positive_class)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let test = load_corpus(&a.test, SplitTag::Test)?;
    let m = metric(&a.metric, a.positive_class)?;
    let golds = test.gold_labels()?;
    let mut systems = Vec::new();
    for dir in &a.runs {
        let (preds, report) = predictions(dir, &test, a.positive_class)?;
        systems.push(SystemResult {
            name: run_name(dir),
            run: dir.clone(),
            metric_value: m.compute(&preds, &golds),
            report,
            predictions: preds,
        });
    }
    let grid: Vec<(String, EvalReport)> = systems.iter().map(|s| (s.name.clone(), s.report.clone())).collect();
    print!("{}", format_grid(&grid));
    let out = a.out.clone().unwrap_or_else(|| a.runs[0].join("eval.json"));
    write_json(
        &out,
        &EvalOutput {
            test: a.test.clone(),
            metric: a.metric.clone(),
            systems,
        },
    )?;
    let mut inputs = vec![a.test];
    for r in &a.runs {
        inputs.push(r.join(MODEL_FILE));
        inputs.push(r.join(VOCAB_FILE));
    }
    #[derive(Serialize)]
    struct EvalConfig<'a> {
        metric: &'a str,
        positive_class: usize,
    }
    Manifest::new("eval", EvalConfig { metric: &a.metric, positive_class: a.positive_class })?
        .write(&out.with_extension("manifest.json"), &inputs, std::slice::from_ref(&out))?;
    Ok(())
}

pub fn significance(a: SignificanceArgs) -> Result<()> {
    if a.rounds == 0 {
        return Err(Usage("--rounds must be >= 1".into()).into());
    }
    let test = load_corpus(&a.test, SplitTag::Test)?;
    let golds = test.gold_labels()?;
    let (pa, _) = predictions(&a.a, &test, a.positive_class)?;
    let (pb, _) = predictions(&a.b, &test, a.positive_class)?;
    let m = metric(&a.metric, a.positive_class)?;
    let r = approx_randomization_test(&pa, &pb, &golds, m.as_ref(), a.rounds, a.seed)?;
    println!(
        "{}: A {:.4} vs B {:.4}, diff {:+.4}, p = {:.4} ({} rounds){}",
        r.metric,
        r.score_a,
        r.score_b,
        r.observed_diff,
        r.p_value,
        r.n_permutations,
        if r.significant { ", significant" } else { "" }
    );
    let out = a.out.clone().unwrap_or_else(|| a.a.join("significance.json"));
    write_json(&out, &r)?;
    let inputs = vec![
        a.test,
        a.a.join(MODEL_FILE),
        a.a.join(VOCAB_FILE),
        a.b.join(MODEL_FILE),
        a.b.join(VOCAB_FILE),
    ];
    #[derive(Serialize)]
    struct SigConfig<'a> {
        metric: &'a str,
        positive_class: usize,
        rounds: usize,
        seed: u64,
    }
    let cfg = SigConfig {
        metric: &a.metric,
        positive_class: a.positive_class,
        rounds: a.rounds,
        seed: a.seed,
    };
    Manifest::new("significance", cfg)?
        .seed("root", a.seed)
        .write(&out.with_extension("manifest.json"), &inputs, std::slice::from_ref(&out))?;
    Ok(())
}

pub fn search(a: SearchArgs) -> Result<()> {
    let base = resolve_config(a.config.as_deref(), &a.overrides)?;
    let space = match &a.space {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SearchSpace>(&text).map_err(|e| Usage(format!("search space: {e}")))?
        }
        None => SearchSpace::default(),
    };
    space.validate()?;
    if a.budget == 0 || a.parallelism == 0 {
        return Err(Usage("--budget and --parallelism must be >= 1".into()).into());
    }
    let proposers = proposer_registry();
    let proposer = proposers.get(&a.proposer).map_err(|e| Usage(e.to_string()))?;
    let corpus = load_corpus(&a.train, SplitTag::Train)?;
    let validation = load_corpus(&a.validation, SplitTag::Validation)?;
    let specs = load_lf_specs(&a.lfs)?;
    let opts = SearchOptions {
        budget: a.budget,
        seed: a.search_seed,
        parallelism: a.parallelism,
        proposer: proposer.as_ref(),
    };
    let outcome = random_search(&space, &base, &opts, |cfg| {
        let extras = Extras {
            validation: Some(&validation),
            heldout: None,
        };
        let trained = train_on_corpus(&corpus, &specs, cfg, extras, None)?;
        match trained.result.best_metric {
            Some(m) => Ok(m),
            None => {
                let (preds, _) = evaluate(&trained.result.model, &trained.prepared.vocab, &validation, cfg.positive_class)?;
                let m = metric(&cfg.metric, cfg.positive_class)?;
                Ok(m.compute(&preds, &validation.gold_labels()?))
            }
        }
    })?;
    create_dir(&a.out)?;
    let mut paths: Vec<PathBuf> = vec![a.out.join("trials.jsonl")];
    write_trials_log(&outcome, &paths[0])?;
    match outcome.best() {
        Some(best) => {
            let p = a.out.join("best_config.toml");
            best.config.save(&p)?;
            paths.push(p);
            println!(
                "best trial {} metric {:.4} ({} completed, {} failed)",
                best.index,
                best.metric.unwrap_or(f64::NAN),
                outcome.ranked.len(),
                outcome.failed.len()
            );
        }
        None => log::warn!("every trial failed; no best configuration"),
    }
    #[derive(Serialize)]
    struct SearchConfig<'a> {
        base: &'a TrainConfig,
        space: &'a SearchSpace,
        budget: usize,
        proposer: &'a str,
        parallelism: usize,
    }
    let cfg = SearchConfig {
        base: &base,
        space: &space,
        budget: a.budget,
        proposer: &a.proposer,
        parallelism: a.parallelism,
    };
    let mut manifest = Manifest::new("search", cfg)?.seed("root", a.search_seed);
    for t in outcome.in_order() {
        manifest = manifest.seed(&format!("trial-{}", t.index), t.seed);
    }
    let mut inputs = vec![a.train, a.lfs, a.validation];
    inputs.extend(a.config);
    inputs.extend(a.space);
    manifest.write(&a.out.join("manifest.json"), &inputs, &paths)?;
    if outcome.ranked.is_empty() {
        anyhow::bail!("all {} trials failed", outcome.failed.len());
    }
    Ok(())
}
