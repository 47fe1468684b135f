//! End-to-end helpers: weak-label a corpus, vectorize it, train and score.

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::eval::{score, EvalReport};
use crate::features::{FeatureMatrix, VectorizerConfig, Vocabulary};
use crate::lf::{
    apply_lfs, compile_lfs, resolve_weak_labels, tie_policy, LabelingFunction, LfSpec, MatchMatrix,
    WeakDataset,
};
use crate::trainer::{
    build_for_config, predict, train, EvalSet, HeldOutTriples, KnowManModel, TrainConfig, TrainData,
    TrainResult,
};

#[derive(Debug, Clone)]
pub struct WeakCorpus {
    pub matches: MatchMatrix,
    pub weak: WeakDataset,
}

pub fn weak_label(corpus: &Corpus, lfs: &[LabelingFunction], cfg: &TrainConfig) -> Result<WeakCorpus> {
    let matches = apply_lfs(corpus, lfs)?;
    let policy = tie_policy(&cfg.tie_policy, crate::seed::derive_seed(cfg.seed, "tie", 0))?;
    let weak = resolve_weak_labels(&matches, lfs, corpus.n_classes(), policy.as_ref())?;
    Ok(WeakCorpus { matches, weak })
}

/// Everything derived from the training corpus before optimization starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub lfs: Vec<LabelingFunction>,
    pub vocab: Vocabulary,
    pub features: FeatureMatrix,
    pub weak: WeakCorpus,
}

pub fn prepare(train: &Corpus, lf_specs: &[LfSpec], cfg: &TrainConfig) -> Result<Prepared> {
    let lfs = compile_lfs(lf_specs, &train.label_names)?;
    let weak = weak_label(train, &lfs, cfg)?;
    if weak.weak.triples.is_empty() {
        return Err(Error::Invalid("no training instance matched any LF".into()));
    }
    let vocab = Vocabulary::fit(
        train.texts(),
        VectorizerConfig {
            min_df: cfg.min_df,
            ..VectorizerConfig::default()
        },
    )?;
    let features = vocab.vectorize(train.texts());
    Ok(Prepared {
        lfs,
        vocab,
        features,
        weak,
    })
}

/// Optional corpora used during training.
#[derive(Default, Clone, Copy)]
pub struct Extras<'a> {
    /// Gold-labeled data for checkpoint selection.
    pub validation: Option<&'a Corpus>,
    /// Weakly labeled data whose triples score the discriminator per epoch.
    pub heldout: Option<&'a Corpus>,
}

#[derive(Debug)]
pub struct Trained {
    pub prepared: Prepared,
    pub result: TrainResult,
}

pub fn train_on_corpus(
    train_corpus: &Corpus,
    lf_specs: &[LfSpec],
    cfg: &TrainConfig,
    extras: Extras,
    checkpoint: Option<&std::path::Path>,
) -> Result<Trained> {
    let prepared = prepare(train_corpus, lf_specs, cfg)?;
    let val = extras
        .validation
        .map(|c| Ok::<_, Error>((prepared.vocab.vectorize(c.texts()), c.gold_labels()?)))
        .transpose()?;
    let held = extras
        .heldout
        .map(|c| {
            let w = weak_label(c, &prepared.lfs, cfg)?;
            Ok::<_, Error>((prepared.vocab.vectorize(c.texts()), w.weak.triples))
        })
        .transpose()?;
    let mut model = build_for_config(
        prepared.vocab.len(),
        train_corpus.n_classes(),
        prepared.lfs.len(),
        cfg,
    )?;
    let data = TrainData {
        features: &prepared.features,
        triples: &prepared.weak.weak.triples,
        validation: val.as_ref().map(|(f, g)| EvalSet {
            features: f,
            golds: g,
        }),
        heldout: held.as_ref().map(|(f, t)| HeldOutTriples {
            features: f,
            triples: t,
        }),
    };
    let result = train(&mut model, &data, cfg, checkpoint)?;
    Ok(Trained { prepared, result })
}

pub fn evaluate(
    model: &KnowManModel,
    vocab: &Vocabulary,
    corpus: &Corpus,
    positive_class: usize,
) -> Result<(Vec<usize>, EvalReport)> {
    let preds = predict(model, &vocab.vectorize(corpus.texts()))?;
    let report = score(&preds.classes, &corpus.gold_labels()?, positive_class)?;
    Ok((preds.classes, report))
}
