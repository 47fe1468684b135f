//! Tokenization and TF-IDF features.
//!
//! Weighting: smooth idf `ln((1 + N) / (1 + df)) + 1`, raw term counts,
//! L2-normalized rows. Terms are sorted lexicographically so the column
//! order does not depend on corpus order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_TOKEN_LEN: usize = 2;

/// Lowercases and splits on non-alphanumeric characters, dropping tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, DEFAULT_MIN_TOKEN_LEN)
}

pub fn tokenize_with(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= min_len)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizerConfig {
    pub min_df: usize,
    /// Upper document-frequency bound as a fraction of the fitting corpus.
    pub max_df: f64,
    pub min_token_len: usize,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self {
            min_df: 1,
            max_df: 1.0,
            min_token_len: DEFAULT_MIN_TOKEN_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    pub config: VectorizerConfig,
    pub n_fit: usize,
}

/// Sparse row: `(column, value)` pairs sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub rows: Vec<SparseRow>,
    /// Rows whose tokens were all out of vocabulary.
    pub n_zero_rows: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense copy of the selected rows, `ids.len() x dim`, row-major.
    pub fn dense_rows(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; ids.len() * self.dim];
        for (r, &id) in ids.iter().enumerate() {
            let base = r * self.dim;
            for &(col, v) in &self.rows[id] {
                out[base + col] = v;
            }
        }
        out
    }
}

pub fn idf_weight(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl Vocabulary {
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        config: VectorizerConfig,
    ) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for text in texts {
            n_docs += 1;
            let mut toks = tokenize_with(text, config.min_token_len);
            toks.sort_unstable();
            toks.dedup();
            for t in toks {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let max_df = (config.max_df * n_docs as f64).floor() as usize;
        let kept: Vec<(String, usize)> = df
            .into_iter()
            .filter(|&(_, d)| d >= config.min_df && d <= max_df)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let idf = kept.iter().map(|&(_, d)| idf_weight(n_docs, d)).collect();
        let terms: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
        Ok(Self::from_parts(terms, idf, config, n_docs))
    }

    fn from_parts(terms: Vec<String>, idf: Vec<f64>, config: VectorizerConfig, n_fit: usize) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            index,
            idf,
            config,
            n_fit,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn vectorize_one(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize_with(text, self.config.min_token_len) {
            if let Some(&col) = self.index.get(&tok) {
                *counts.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(col, tf)| (col, tf * self.idf[col]))
            .collect();
        let norm = row.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }

    pub fn vectorize<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> FeatureMatrix {
        let rows: Vec<SparseRow> = texts.into_iter().map(|t| self.vectorize_one(t)).collect();
        let n_zero_rows = rows.iter().filter(|r| r.is_empty()).count();
        FeatureMatrix {
            dim: self.len(),
            rows,
            n_zero_rows,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = VocabHeader {
            format: VOCAB_FORMAT.into(),
            version: VOCAB_VERSION,
            n_fit: self.n_fit,
            n_terms: self.len(),
            config: self.config.clone(),
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&header).expect("header")).map_err(io)?;
        for (i, (term, idf)) in self.terms.iter().zip(&self.idf).enumerate() {
            let entry = VocabEntry {
                term: term.clone(),
                index: i,
                idf: *idf,
            };
            writeln!(w, "{}", serde_json::to_string(&entry).expect("entry")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            message: e.to_string(),
        };
        let first = lines
            .next()
            .ok_or_else(|| parse_err(1, &"missing vocabulary header"))?
            .map_err(|e| parse_err(1, &e))?;
        let header: VocabHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, &e))?;
        if header.format != VOCAB_FORMAT || header.version != VOCAB_VERSION {
            return Err(Error::Schema(format!(
                "unsupported vocabulary format {} v{}",
                header.format, header.version
            )));
        }
        let mut terms = Vec::with_capacity(header.n_terms);
        let mut idf = Vec::with_capacity(header.n_terms);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| parse_err(i + 2, &e))?;
            let entry: VocabEntry = serde_json::from_str(&line).map_err(|e| parse_err(i + 2, &e))?;
            if entry.index != terms.len() {
                return Err(parse_err(i + 2, &"vocabulary indices must be dense and ordered"));
            }
            terms.push(entry.term);
            idf.push(entry.idf);
        }
        if terms.len() != header.n_terms {
            return Err(Error::Schema(format!(
                "vocabulary truncated: {} of {} terms",
                terms.len(),
                header.n_terms
            )));
        }
        Ok(Self::from_parts(terms, idf, header.config, header.n_fit))
    }
}

const VOCAB_FORMAT: &str = "knowman-vocab";
const VOCAB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    format: String,
    version: u32,
    n_fit: usize,
    n_terms: usize,
    config: VectorizerConfig,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    term: String,
    index: usize,
    idf: f64,
}

/// Fits a vocabulary with default settings except `min_df`.
pub fn fit_vectorizer<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_df: usize,
) -> Result<Vocabulary> {
    Vocabulary::fit(
        texts,
        VectorizerConfig {
            min_df,
            ..VectorizerConfig::default()
        },
    )
}
