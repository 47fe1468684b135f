use knowman::dataset::{synth_generate, Corpus, SplitTag, SynthSpec};
use knowman::lf::{
    apply_lfs, compile_lfs, coverage_stats, resolve_weak_labels, tie_policy, DropTies, LfKind, LfSpec,
    RandomTie, Triple,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names() -> Vec<String> {
    vec!["ham".into(), "spam".into()]
}

/// Appends a filler token no LF matches, since blank texts are rejected.
fn corpus(texts: &[String]) -> Corpus {
    Corpus::new(texts.iter().map(|t| (format!("{t} qq"), None)), names(), SplitTag::Train).unwrap()
}

fn keyword(name: &str, pattern: &str, label: &str) -> LfSpec {
    LfSpec {
        name: name.into(),
        kind: LfKind::Keyword,
        pattern: pattern.into(),
        label: label.into(),
    }
}

/// Word-by-word comparison without any index.
fn brute_force_fires(text: &str, pattern: &str) -> bool {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect();
    let kw: Vec<String> = pattern.split_whitespace().map(str::to_lowercase).collect();
    (0..words.len()).any(|s| s + kw.len() <= words.len() && words[s..s + kw.len()] == kw[..])
}

#[test]
fn matches_brute_force_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = ["free", "win", "call", "now", "meeting", "lunch", "Prize", "CLICK", "here"];
    let texts: Vec<String> = (0..50)
        .map(|_| {
            let n = rng.random_range(0..12);
            (0..n)
                .map(|_| vocab[rng.random_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(if rng.random_bool(0.5) { " " } else { ", " })
        })
        .collect();
    let specs = vec![
        keyword("a", "free", "spam"),
        keyword("b", "win prize", "spam"),
        keyword("c", "Click here", "spam"),
        keyword("d", "meeting", "ham"),
        keyword("e", "lunch now", "ham"),
        keyword("f", "call", "ham"),
        LfSpec {
            name: "g".into(),
            kind: LfKind::Regex,
            pattern: r"CLICK".into(),
            label: "spam".into(),
        },
    ];
    let lfs = compile_lfs(&specs, &names()).unwrap();
    let c = corpus(&texts);
    let m = apply_lfs(&c, &lfs).unwrap();
    for (i, text) in texts.iter().enumerate() {
        for (j, spec) in specs.iter().enumerate() {
            let want = match spec.kind {
                LfKind::Keyword => brute_force_fires(text, &spec.pattern),
                LfKind::Regex => text.contains("CLICK"),
            };
            assert_eq!(m.hit(i, j), want, "text {text:?} lf {}", spec.name);
        }
    }
    assert_eq!(apply_lfs(&c, &lfs).unwrap(), m);
}

#[test]
fn regex_is_case_sensitive_and_keyword_is_not() {
    let specs = vec![
        keyword("k", "FREE", "spam"),
        LfSpec {
            name: "r".into(),
            kind: LfKind::Regex,
            pattern: "FREE".into(),
            label: "spam".into(),
        },
    ];
    let lfs = compile_lfs(&specs, &names()).unwrap();
    let c = corpus(&["get it free".into(), "get it FREE".into(), "freedom".into()]);
    let m = apply_lfs(&c, &lfs).unwrap();
    assert_eq!(m.to_dense(), vec![vec![1, 0], vec![1, 1], vec![0, 0]]);
}

#[test]
fn bad_regex_is_reported() {
    let specs = vec![LfSpec {
        name: "r".into(),
        kind: LfKind::Regex,
        pattern: "(unclosed".into(),
        label: "spam".into(),
    }];
    let err = compile_lfs(&specs, &names()).unwrap_err();
    assert!(err.to_string().contains("(unclosed"));
}

#[test]
fn unknown_label_is_schema_error() {
    let err = compile_lfs(&[keyword("a", "x", "eggs")], &names()).unwrap_err();
    assert!(matches!(err, knowman::Error::Schema(_)));
}

/// Counts votes per class and checks label and triple set against the
/// aggregate independently.
#[test]
fn vote_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels = [0usize, 0, 1, 1, 1];
    let specs: Vec<LfSpec> = labels
        .iter()
        .enumerate()
        .map(|(j, &l)| keyword(&format!("lf{j}"), &format!("tok{j}"), &names()[l]))
        .collect();
    let texts: Vec<String> = (0..30)
        .map(|_| {
            (0..5)
                .filter(|_| rng.random_bool(0.4))
                .map(|j| format!("tok{j}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let lfs = compile_lfs(&specs, &names()).unwrap();
    let m = apply_lfs(&corpus(&texts), &lfs).unwrap();
    let w = resolve_weak_labels(&m, &lfs, 2, &DropTies).unwrap();
    let mut expected_triples = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let fired: Vec<usize> = (0..5).filter(|j| text.contains(&format!("tok{j}"))).collect();
        let v0 = fired.iter().filter(|&&j| labels[j] == 0).count();
        let v1 = fired.len() - v0;
        let want = if v0 > v1 {
            Some(0)
        } else if v1 > v0 {
            Some(1)
        } else {
            None
        };
        assert_eq!(w.weak_labels[i], want, "{text}");
        if let Some(y) = want {
            for &j in &fired {
                if labels[j] == y {
                    expected_triples.push(Triple {
                        instance: i,
                        label: y,
                        lf: j,
                    });
                }
            }
        }
    }
    assert_eq!(w.triples, expected_triples);
    let stats = coverage_stats(&w);
    assert_eq!(stats.lf_triple_counts.iter().sum::<usize>(), w.triples.len());
    assert!(w.triples.len() >= stats.n_labeled);
}

#[test]
fn coverage_extremes() {
    let lfs = compile_lfs(&[keyword("a", "zz", "spam")], &names()).unwrap();
    let all = corpus(&["zz".into(), "aa zz".into()]);
    let none = corpus(&["aa".into(), "bb".into()]);
    let w = resolve_weak_labels(&apply_lfs(&all, &lfs).unwrap(), &lfs, 2, &DropTies).unwrap();
    assert_eq!(coverage_stats(&w).coverage, 1.0);
    let w = resolve_weak_labels(&apply_lfs(&none, &lfs).unwrap(), &lfs, 2, &DropTies).unwrap();
    assert_eq!(coverage_stats(&w).coverage, 0.0);
    assert!(w.triples.is_empty());
}

#[test]
fn random_tie_policy_is_seeded_per_instance() {
    let specs = vec![keyword("a", "aa", "ham"), keyword("b", "bb", "spam")];
    let lfs = compile_lfs(&specs, &names()).unwrap();
    let texts: Vec<String> = (0..200).map(|_| "aa bb".to_string()).collect();
    let m = apply_lfs(&corpus(&texts), &lfs).unwrap();
    let run = |seed| resolve_weak_labels(&m, &lfs, 2, &RandomTie { seed }).unwrap();
    let a = run(1);
    assert_eq!(a, run(1));
    assert!(a.weak_labels.iter().all(|l| l.is_some()));
    let zeros = a.weak_labels.iter().filter(|l| **l == Some(0)).count();
    assert!((60..140).contains(&zeros));
    let dropped = resolve_weak_labels(&m, &lfs, 2, tie_policy("majority_drop_ties", 0).unwrap().as_ref()).unwrap();
    assert!(dropped.weak_labels.iter().all(|l| l.is_none()));
    assert!(tie_policy("coin_flip", 0).is_err());
}

/// One LF per class firing with probability 0.5: every LF's fire count stays
/// within three binomial standard deviations of its mean.
#[test]
fn synthetic_fire_rate_within_binomial_bound() {
    let spec = SynthSpec {
        n_lfs_per_class: 1,
        lf_leak_prob: 0.5,
        n_train: 2000,
        seed: 3,
        ..SynthSpec::default()
    };
    let out = synth_generate(&spec).unwrap();
    let lfs = compile_lfs(&out.lfs, &out.train.label_names).unwrap();
    let m = apply_lfs(&out.train, &lfs).unwrap();
    let w = resolve_weak_labels(&m, &lfs, 2, &DropTies).unwrap();
    let n = (spec.n_train / spec.n_classes) as f64;
    let (mean, sd) = (0.5 * n, (n * 0.25).sqrt());
    for &c in &w.lf_fire_counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "count {c} vs {mean}±{}", 3.0 * sd);
    }
}

proptest! {
    #[test]
    fn single_lf_labels_exactly_its_matches(texts in prop::collection::vec("(aa|bb|cc| ){0,12}", 1..40)) {
        let lfs = compile_lfs(&[keyword("only", "bb", "spam")], &names()).unwrap();
        let m = apply_lfs(&corpus(&texts), &lfs).unwrap();
        let w = resolve_weak_labels(&m, &lfs, 2, &DropTies).unwrap();
        for (i, t) in texts.iter().enumerate() {
            let fires = t.split_whitespace().any(|w| w == "bb");
            prop_assert_eq!(w.weak_labels[i], fires.then_some(1));
        }
        for t in &w.triples {
            prop_assert!(m.hit(t.instance, t.lf));
        }
    }
}
