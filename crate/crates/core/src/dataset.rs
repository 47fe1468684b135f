//! Corpus files, train/validation/test splits and the synthetic LF-leak
//! generator.
//!
//! Corpus files are UTF-8, line-delimited JSON: a mandatory header record
//! `{"label_names": [...]}` followed by one `{"text": ..., "label": ...}`
//! record per instance (`label` optional). Labels are names on disk and
//! class ids in memory, mapped through the header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::{LfKind, LfSpec};
use crate::seed::{derived_rng, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: usize,
    pub text: String,
    pub gold_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub label_names: Vec<String>,
    pub split: SplitTag,
}

#[derive(Deserialize)]
struct Header {
    label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    text: std::borrow::Cow<'a, str>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<std::borrow::Cow<'a, str>>,
}

impl Corpus {
    /// Builds a corpus from texts and optional gold labels, assigning dense ids.
    pub fn new(
        texts: impl IntoIterator<Item = (String, Option<usize>)>,
        label_names: Vec<String>,
        split: SplitTag,
    ) -> Result<Self> {
        let instances = texts
            .into_iter()
            .enumerate()
            .map(|(id, (text, gold_label))| Instance {
                id,
                text,
                gold_label,
            })
            .collect();
        let corpus = Self {
            instances,
            label_names,
            split,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().map(|i| i.text.as_str())
    }

    /// Gold labels, failing if any instance is unlabeled.
    pub fn gold_labels(&self) -> Result<Vec<usize>> {
        self.instances
            .iter()
            .map(|i| {
                i.gold_label.ok_or_else(|| {
                    Error::Schema(format!("instance {} has no gold label", i.id))
                })
            })
            .collect()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_names.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 label names, got {}",
                self.label_names.len()
            )));
        }
        if self.instances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (pos, inst) in self.instances.iter().enumerate() {
            if inst.id != pos {
                return Err(Error::Schema(format!(
                    "instance ids must be dense: found {} at position {pos}",
                    inst.id
                )));
            }
            if inst.text.trim().is_empty() {
                return Err(Error::Schema(format!("instance {pos} has empty text")));
            }
            if let Some(l) = inst.gold_label {
                if l >= self.label_names.len() {
                    return Err(Error::Schema(format!(
                        "instance {pos} label {l} out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>, split: SplitTag) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), split)
}

pub fn read_corpus(reader: impl BufRead, split: SplitTag) -> Result<Corpus> {
    let mut label_names: Option<Vec<String>> = None;
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let names = match &label_names {
            None => {
                let header: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("expected label_names header: {e}"),
                })?;
                label_names = Some(header.label_names);
                continue;
            }
            Some(names) => names,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let gold_label = match rec.label {
            None => None,
            Some(name) => Some(names.iter().position(|n| *n == name).ok_or_else(|| {
                Error::Schema(format!("line {lineno}: unknown label `{name}`"))
            })?),
        };
        if rec.text.trim().is_empty() {
            return Err(Error::Schema(format!("line {lineno}: empty text")));
        }
        instances.push(Instance {
            id: instances.len(),
            text: rec.text.into_owned(),
            gold_label,
        });
    }
    let label_names = label_names.ok_or(Error::EmptyCorpus)?;
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let corpus = Corpus {
        instances,
        label_names,
        split,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(corpus, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(corpus: &Corpus, w: &mut impl Write) -> std::io::Result<()> {
    let header = serde_json::json!({ "label_names": corpus.label_names });
    writeln!(w, "{header}")?;
    for inst in &corpus.instances {
        let rec = Record {
            text: inst.text.as_str().into(),
            label: inst
                .gold_label
                .map(|l| corpus.label_names[l].as_str().into()),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Shuffles `corpus` with `seed` and splits it into parts of
/// `round(fraction * N)` and the remainder. Each part keeps the original
/// relative order and gets dense ids.
pub fn split_corpus(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = corpus.len();
    let n_first = (fraction * n as f64).round() as usize;
    if n_first == 0 || n_first == n {
        return Err(Error::EmptySplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let mut first: Vec<usize> = order[..n_first].to_vec();
    let mut second: Vec<usize> = order[n_first..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    let part = |ids: &[usize]| Corpus {
        instances: ids
            .iter()
            .enumerate()
            .map(|(new_id, &old)| Instance {
                id: new_id,
                ..corpus.instances[old].clone()
            })
            .collect(),
        label_names: corpus.label_names.clone(),
        split: corpus.split,
    };
    Ok((part(&first), part(&second)))
}

/// Parameters of the synthetic LF-leak corpus generator.
///
/// Each class owns `n_lfs_per_class` keyword LFs and
/// `background_tokens_per_class` class-correlated tokens that no LF looks
/// at. Every document also carries `noise_tokens_per_doc` tokens drawn
/// uniformly from a shared noise vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub n_lfs_per_class: usize,
    pub lf_leak_prob: f64,
    pub background_signal_prob: f64,
    pub background_tokens_per_class: usize,
    pub noise_vocab_size: usize,
    pub noise_tokens_per_doc: usize,
    pub seed: u64,
    pub strip_lf_tokens_in_test: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 600,
            n_test: 400,
            n_classes: 2,
            n_lfs_per_class: 3,
            lf_leak_prob: 0.9,
            background_signal_prob: 0.6,
            background_tokens_per_class: 2,
            noise_vocab_size: 200,
            noise_tokens_per_doc: 8,
            seed: 0,
            strip_lf_tokens_in_test: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_lfs_per_class", self.n_lfs_per_class),
            ("noise_vocab_size", self.noise_vocab_size),
            ("noise_tokens_per_doc", self.noise_tokens_per_doc),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        for (name, p) in [
            ("lf_leak_prob", self.lf_leak_prob),
            ("background_signal_prob", self.background_signal_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class{c}")).collect()
    }

    pub fn lf_keyword(class: usize, k: usize) -> String {
        format!("lf{class}k{k}")
    }

    pub fn background_token(class: usize, k: usize) -> String {
        format!("bg{class}t{k}")
    }

    pub fn noise_token(k: usize) -> String {
        format!("nz{k}")
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Corpus,
    pub test: Corpus,
    pub lfs: Vec<LfSpec>,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let label_names = spec.label_names();
    let lfs = (0..spec.n_classes)
        .flat_map(|c| {
            let label = label_names[c].clone();
            (0..spec.n_lfs_per_class).map(move |k| LfSpec {
                name: format!("kw_{}_{k}", label),
                kind: LfKind::Keyword,
                pattern: SynthSpec::lf_keyword(c, k),
                label: label.clone(),
            })
        })
        .collect();
    let train = synth_split(spec, spec.n_train, SplitTag::Train, false, &label_names)?;
    let test = synth_split(
        spec,
        spec.n_test,
        SplitTag::Test,
        spec.strip_lf_tokens_in_test,
        &label_names,
    )?;
    Ok(SynthOutput { train, test, lfs })
}

fn synth_split(
    spec: &SynthSpec,
    n: usize,
    split: SplitTag,
    strip_lf: bool,
    label_names: &[String],
) -> Result<Corpus> {
    let tag = match split {
        SplitTag::Train => "synth-train",
        SplitTag::Validation => "synth-validation",
        SplitTag::Test => "synth-test",
    };
    let mut rng = derived_rng(spec.seed, tag, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng);
    let docs = labels
        .into_iter()
        .map(|class| {
            let mut tokens = Vec::new();
            if !strip_lf {
                for k in 0..spec.n_lfs_per_class {
                    if rng.random_bool(spec.lf_leak_prob) {
                        tokens.push(SynthSpec::lf_keyword(class, k));
                    }
                }
            }
            for k in 0..spec.background_tokens_per_class {
                if rng.random_bool(spec.background_signal_prob) {
                    tokens.push(SynthSpec::background_token(class, k));
                }
            }
            for _ in 0..spec.noise_tokens_per_doc {
                tokens.push(SynthSpec::noise_token(
                    rng.random_range(0..spec.noise_vocab_size),
                ));
            }
            tokens.shuffle(&mut rng);
            (tokens.join(" "), Some(class))
        })
        .collect::<Vec<_>>();
    Corpus::new(docs, label_names.to_vec(), split)
}
