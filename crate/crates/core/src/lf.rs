//! Labeling functions: compilation, application, weak-label resolution and
//! expansion into `(instance, label, lf)` training triples.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::features::tokenize;
use crate::registry::Registry;
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfKind {
    Keyword,
    Regex,
}

/// On-disk LF record; `label` is a class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfSpec {
    pub name: String,
    pub kind: LfKind,
    pub pattern: String,
    pub label: String,
}

#[derive(Debug, Clone)]
enum Matcher {
    /// Lowercased token sequence matched contiguously on token boundaries.
    Keyword(Vec<String>),
    Regex(Regex),
}

#[derive(Debug, Clone)]
pub struct LabelingFunction {
    pub lf_id: usize,
    pub name: String,
    pub kind: LfKind,
    pub pattern: String,
    pub output_label: usize,
    matcher: Matcher,
}

impl LabelingFunction {
    pub fn fires_on(&self, text: &str) -> bool {
        match &self.matcher {
            Matcher::Keyword(kw) => {
                let toks = tokenize(text);
                toks.windows(kw.len()).any(|w| w == kw.as_slice())
            }
            Matcher::Regex(re) => re.is_match(text),
        }
    }

    fn keyword_tokens(&self) -> Option<&[String]> {
        match &self.matcher {
            Matcher::Keyword(kw) => Some(kw),
            Matcher::Regex(_) => None,
        }
    }
}

pub fn compile_lf(spec: &LfSpec, lf_id: usize, label_names: &[String]) -> Result<LabelingFunction> {
    if spec.pattern.is_empty() {
        return Err(Error::Schema(format!("LF `{}` has an empty pattern", spec.name)));
    }
    let output_label = label_names
        .iter()
        .position(|l| *l == spec.label)
        .ok_or_else(|| {
            Error::Schema(format!("LF `{}`: unknown label `{}`", spec.name, spec.label))
        })?;
    let matcher = match spec.kind {
        LfKind::Keyword => {
            let toks = tokenize(&spec.pattern);
            if toks.is_empty() {
                return Err(Error::Schema(format!(
                    "LF `{}`: keyword `{}` has no tokens",
                    spec.name, spec.pattern
                )));
            }
            Matcher::Keyword(toks)
        }
        LfKind::Regex => Matcher::Regex(Regex::new(&spec.pattern).map_err(|e| Error::Regex {
            pattern: spec.pattern.chars().take(60).collect(),
            message: e.to_string(),
        })?),
    };
    Ok(LabelingFunction {
        lf_id,
        name: spec.name.clone(),
        kind: spec.kind,
        pattern: spec.pattern.clone(),
        output_label,
        matcher,
    })
}

/// Compiles specs in order, assigning dense ids.
pub fn compile_lfs(specs: &[LfSpec], label_names: &[String]) -> Result<Vec<LabelingFunction>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| compile_lf(s, i, label_names))
        .collect()
}

pub fn load_lf_specs(path: impl AsRef<Path>) -> Result<Vec<LfSpec>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut specs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        specs.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(specs)
}

pub fn save_lf_specs(specs: &[LfSpec], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in specs {
        writeln!(w, "{}", serde_json::to_string(s).expect("lf spec"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sparse boolean matrix of LF hits; each row lists firing LF ids ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMatrix {
    pub n_instances: usize,
    pub n_lfs: usize,
    pub rows: Vec<Vec<usize>>,
}

impl MatchMatrix {
    pub fn hit(&self, instance: usize, lf: usize) -> bool {
        self.rows[instance].binary_search(&lf).is_ok()
    }

    pub fn n_hits(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0u8; self.n_lfs];
                for &j in r {
                    d[j] = 1;
                }
                d
            })
            .collect()
    }
}

pub fn apply_lfs(corpus: &Corpus, lfs: &[LabelingFunction]) -> Result<MatchMatrix> {
    if lfs.is_empty() {
        return Err(Error::Invalid("apply_lfs needs at least one LF".into()));
    }
    // Keyword LFs indexed by their first token.
    let mut by_first: HashMap<&str, Vec<&LabelingFunction>> = HashMap::new();
    let mut regexes = Vec::new();
    for lf in lfs {
        match lf.keyword_tokens() {
            Some(kw) => by_first.entry(kw[0].as_str()).or_default().push(lf),
            None => regexes.push(lf),
        }
    }
    let rows = corpus
        .instances
        .par_iter()
        .map(|inst| {
            let toks = tokenize(&inst.text);
            let mut hits = Vec::new();
            for (pos, tok) in toks.iter().enumerate() {
                if let Some(cands) = by_first.get(tok.as_str()) {
                    for lf in cands {
                        let kw = lf.keyword_tokens().expect("keyword LF");
                        if toks.len() - pos >= kw.len() && toks[pos..pos + kw.len()] == *kw {
                            hits.push(lf.lf_id);
                        }
                    }
                }
            }
            for lf in &regexes {
                if lf.fires_on(&inst.text) {
                    hits.push(lf.lf_id);
                }
            }
            hits.sort_unstable();
            hits.dedup();
            hits
        })
        .collect();
    Ok(MatchMatrix {
        n_instances: corpus.len(),
        n_lfs: lfs.len(),
        rows,
    })
}

/// Chooses among tied majority classes.
pub trait TieBreaker: Send + Sync {
    fn name(&self) -> &'static str;
    /// `tied` is ascending and has at least two entries.
    fn break_tie(&self, instance: usize, tied: &[usize]) -> Option<usize>;
}

pub struct DropTies;

impl TieBreaker for DropTies {
    fn name(&self) -> &'static str {
        "majority_drop_ties"
    }

    fn break_tie(&self, _instance: usize, _tied: &[usize]) -> Option<usize> {
        None
    }
}

pub struct RandomTie {
    pub seed: u64,
}

impl TieBreaker for RandomTie {
    fn name(&self) -> &'static str {
        "majority_random_tie"
    }

    fn break_tie(&self, instance: usize, tied: &[usize]) -> Option<usize> {
        let mut rng = derived_rng(self.seed, "tie", instance as u64);
        Some(tied[rng.random_range(0..tied.len())])
    }
}

pub type TieFactory = dyn Fn(u64) -> Box<dyn TieBreaker> + Send + Sync;

pub const DEFAULT_TIE_POLICY: &str = "majority_drop_ties";

/// Tie policies by name; each factory takes the policy seed.
pub fn tie_policies() -> Registry<TieFactory> {
    let mut reg: Registry<TieFactory> = Registry::new("tie policy");
    reg.register("majority_drop_ties", Arc::new(|_seed| Box::new(DropTies)));
    reg.register(
        "majority_random_tie",
        Arc::new(|seed| Box::new(RandomTie { seed })),
    );
    reg
}

pub fn tie_policy(name: &str, seed: u64) -> Result<Box<dyn TieBreaker>> {
    Ok(tie_policies().get(name)?(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub instance: usize,
    pub label: usize,
    pub lf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakDataset {
    pub n_instances: usize,
    pub n_classes: usize,
    pub n_lfs: usize,
    pub weak_labels: Vec<Option<usize>>,
    /// One entry per (instance, firing LF agreeing with the resolved label).
    pub triples: Vec<Triple>,
    pub lf_fire_counts: Vec<usize>,
}

pub fn resolve_weak_labels(
    matches: &MatchMatrix,
    lfs: &[LabelingFunction],
    n_classes: usize,
    policy: &dyn TieBreaker,
) -> Result<WeakDataset> {
    if matches.n_lfs != lfs.len() {
        return Err(Error::Shape(format!(
            "match matrix has {} LFs, got {}",
            matches.n_lfs,
            lfs.len()
        )));
    }
    if let Some(lf) = lfs.iter().find(|lf| lf.output_label >= n_classes) {
        return Err(Error::Schema(format!(
            "LF `{}` emits class {} but only {n_classes} classes exist",
            lf.name, lf.output_label
        )));
    }
    let mut weak_labels = Vec::with_capacity(matches.n_instances);
    let mut triples = Vec::new();
    let mut lf_fire_counts = vec![0usize; lfs.len()];
    let mut votes = vec![0usize; n_classes];
    for (i, row) in matches.rows.iter().enumerate() {
        votes.iter_mut().for_each(|v| *v = 0);
        for &j in row {
            lf_fire_counts[j] += 1;
            votes[lfs[j].output_label] += 1;
        }
        let top = votes.iter().copied().max().unwrap_or(0);
        let label = if top == 0 {
            None
        } else {
            let tied: Vec<usize> = (0..n_classes).filter(|&c| votes[c] == top).collect();
            if tied.len() == 1 {
                Some(tied[0])
            } else {
                policy.break_tie(i, &tied)
            }
        };
        if let Some(y) = label {
            triples.extend(
                row.iter()
                    .filter(|&&j| lfs[j].output_label == y)
                    .map(|&j| Triple {
                        instance: i,
                        label: y,
                        lf: j,
                    }),
            );
        }
        weak_labels.push(label);
    }
    Ok(WeakDataset {
        n_instances: matches.n_instances,
        n_classes,
        n_lfs: lfs.len(),
        weak_labels,
        triples,
        lf_fire_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub n_instances: usize,
    pub n_labeled: usize,
    pub coverage: f64,
    pub n_triples: usize,
    pub lf_fire_counts: Vec<usize>,
    pub lf_triple_counts: Vec<usize>,
    pub label_distribution: Vec<usize>,
}

pub fn coverage_stats(w: &WeakDataset) -> CoverageStats {
    let mut lf_triple_counts = vec![0usize; w.n_lfs];
    for t in &w.triples {
        lf_triple_counts[t.lf] += 1;
    }
    let mut label_distribution = vec![0usize; w.n_classes];
    for l in w.weak_labels.iter().flatten() {
        label_distribution[*l] += 1;
    }
    let n_labeled = label_distribution.iter().sum::<usize>();
    CoverageStats {
        n_instances: w.n_instances,
        n_labeled,
        coverage: if w.n_instances == 0 {
            0.0
        } else {
            n_labeled as f64 / w.n_instances as f64
        },
        n_triples: w.triples.len(),
        lf_fire_counts: w.lf_fire_counts.clone(),
        lf_triple_counts,
        label_distribution,
    }
}
