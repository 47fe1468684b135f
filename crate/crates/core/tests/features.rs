use std::collections::{BTreeMap, BTreeSet};

use knowman::features::{tokenize, VectorizerConfig, Vocabulary};
use knowman::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense TF-IDF written out directly from the definition.
fn dense_tfidf(docs: &[Vec<&str>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let terms: Vec<String> = docs
        .iter()
        .flatten()
        .map(|t| t.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = docs.len() as f64;
    let mut out = Vec::new();
    for doc in docs {
        let mut row = vec![0.0; terms.len()];
        for (j, term) in terms.iter().enumerate() {
            let tf = doc.iter().filter(|t| **t == term).count() as f64;
            let df = docs.iter().filter(|d| d.contains(&term.as_str())).count() as f64;
            row[j] = tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0);
        }
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        out.push(row);
    }
    (terms, out)
}

fn densify(row: &[(usize, f64)], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(j, x) in row {
        v[j] = x;
    }
    v
}

#[test]
fn hand_corpus_values() {
    let docs = [
        "the cat sat",
        "the dog sat",
        "the cat ate the fish",
        "dog dog bird",
        "fish swim",
    ];
    let vocab = Vocabulary::fit(docs.iter().copied(), VectorizerConfig::default()).unwrap();
    assert_eq!(
        vocab.terms(),
        ["ate", "bird", "cat", "dog", "fish", "sat", "swim", "the"]
    );
    // ln(6/2)+1, ln(6/3)+1, ln(6/4)+1
    let (rare, mid, common) = (2.09861228866811, 1.6931471805599454, 1.4054651081081644);
    let want_idf = [rare, rare, mid, mid, mid, mid, rare, common];
    for (got, want) in vocab.idf().iter().zip(want_idf) {
        assert!((got - want).abs() < 1e-9);
    }
    let m = vocab.vectorize(docs.iter().copied());
    let expected: [&[(&str, f64)]; 5] = [
        &[("cat", 0.6098184563533858), ("sat", 0.6098184563533858), ("the", 0.5062044059286201)],
        &[("dog", 0.6098184563533858), ("sat", 0.6098184563533858), ("the", 0.5062044059286201)],
        &[
            ("ate", 0.49411270256733086),
            ("cat", 0.39864701724475515),
            ("fish", 0.39864701724475515),
            ("the", 0.6618260711435657),
        ],
        &[("bird", 0.52677824987419), ("dog", 0.8500027502658362)],
        &[("fish", 0.6279137616509933), ("swim", 0.7782829228046183)],
    ];
    for (row, want) in m.rows.iter().zip(expected) {
        assert_eq!(row.len(), want.len());
        for &(term, v) in want {
            let j = vocab.index_of(term).unwrap();
            let got = row.iter().find(|e| e.0 == j).unwrap().1;
            assert!((got - v).abs() < 1e-9, "{term}: {got} vs {v}");
        }
    }
}

#[test]
fn matches_dense_oracle_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let docs: Vec<Vec<&str>> = (0..60)
        .map(|_| {
            let len = rng.random_range(1..15);
            (0..len)
                .map(|_| words[rng.random_range(0..words.len())].as_str())
                .collect()
        })
        .collect();
    let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
    let vocab = Vocabulary::fit(texts.iter().map(String::as_str), VectorizerConfig::default()).unwrap();
    let (terms, dense) = dense_tfidf(&docs);
    assert_eq!(vocab.terms(), terms.as_slice());
    let m = vocab.vectorize(texts.iter().map(String::as_str));
    for (row, want) in m.rows.iter().zip(&dense) {
        for (a, b) in densify(row, m.dim).iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn unseen_and_empty_texts_give_zero_rows() {
    let vocab = Vocabulary::fit(["alpha beta", "beta gamma"], VectorizerConfig::default()).unwrap();
    let m = vocab.vectorize(["zeta", "", "beta"]);
    assert!(m.rows[0].is_empty() && m.rows[1].is_empty());
    assert_eq!(m.n_zero_rows, 2);
    assert_eq!(m.rows[2].len(), 1);
    assert!((m.rows[2][0].1 - 1.0).abs() < 1e-12);
}

#[test]
fn empty_inputs_are_errors() {
    assert!(matches!(
        Vocabulary::fit(std::iter::empty(), VectorizerConfig::default()),
        Err(Error::EmptyCorpus)
    ));
    assert!(matches!(
        Vocabulary::fit(["a", "! ?"], VectorizerConfig::default()),
        Err(Error::EmptyVocabulary)
    ));
}

#[test]
fn min_df_prunes_rare_terms() {
    let cfg = VectorizerConfig {
        min_df: 2,
        ..VectorizerConfig::default()
    };
    let vocab = Vocabulary::fit(["aa bb", "aa cc", "aa bb dd"], cfg).unwrap();
    assert_eq!(vocab.terms(), ["aa", "bb"]);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.jsonl");
    let texts = ["Spam offer now", "meeting at noon", "offer ends at noon"];
    let vocab = Vocabulary::fit(texts, VectorizerConfig::default()).unwrap();
    vocab.save(&path).unwrap();
    let back = Vocabulary::load(&path).unwrap();
    assert_eq!(back.terms(), vocab.terms());
    assert_eq!(back.idf(), vocab.idf());
    assert_eq!(back.vectorize(texts).rows, vocab.vectorize(texts).rows);
}

#[test]
fn tokenizer_lowercases_and_splits() {
    assert_eq!(tokenize("Check OUT my-channel, x2 now!"), ["check", "out", "my", "channel", "x2", "now"]);
}

fn term_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl"]), 0..8)
            .prop_map(|ws| ws.join(" ")),
        1..20,
    )
}

proptest! {
    #[test]
    fn rows_are_unit_or_zero(texts in term_strategy()) {
        match Vocabulary::fit(texts.iter().map(String::as_str), VectorizerConfig::default()) {
            Ok(vocab) => {
                let m = vocab.vectorize(texts.iter().map(String::as_str));
                for row in &m.rows {
                    let norm: f64 = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
                    prop_assert!(row.is_empty() || (norm - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|e| e.1 > 0.0));
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::EmptyVocabulary)),
        }
    }

    #[test]
    fn idf_is_decreasing_in_df(texts in term_strategy()) {
        if let Ok(vocab) = Vocabulary::fit(texts.iter().map(String::as_str), VectorizerConfig::default()) {
            let mut df: BTreeMap<&str, usize> = BTreeMap::new();
            for t in &texts {
                let uniq: BTreeSet<&str> = t.split_whitespace().collect();
                for w in uniq {
                    *df.entry(w).or_default() += 1;
                }
            }
            for (a, ia) in vocab.terms().iter().zip(vocab.idf()) {
                for (b, ib) in vocab.terms().iter().zip(vocab.idf()) {
                    if df[a.as_str()] < df[b.as_str()] {
                        prop_assert!(ia > ib);
                    }
                }
            }
        }
    }
}
