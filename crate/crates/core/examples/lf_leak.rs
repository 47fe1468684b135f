//! Compares lambda settings on synthetic LF-leak corpora.
//!
//! `cargo run --example lf_leak -- [lambda ...]`

use knowman::dataset::{split_corpus, synth_generate, SynthSpec};
use knowman::pipeline::{evaluate, train_on_corpus, Extras};
use knowman::trainer::{CheckpointPolicy, EvalCadence, TrainConfig};

fn main() -> knowman::Result<()> {
    let lambdas: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("lambda"))
        .collect();
    let lambdas = if lambdas.is_empty() { vec![0.0, 2.0, 5.0] } else { lambdas };
    let seeds = 5;
    // Scores the stripped test set during training to show the trajectory.
    let trace = std::env::var("TRACE").is_ok();
    for &lambda in &lambdas {
        let (mut acc, mut dacc) = (0.0, 0.0);
        let t0 = std::time::Instant::now();
        for seed in 0..seeds {
            let spec = SynthSpec {
                seed,
                background_tokens_per_class: env("BG", 2.0) as usize,
                noise_tokens_per_doc: env("NOISE", 8.0) as usize,
                noise_vocab_size: env("NVOCAB", 200.0) as usize,
                n_train: env("NTRAIN", 600.0) as usize,
                lf_leak_prob: env("LEAK", 0.9),
                ..SynthSpec::default()
            };
            let data = synth_generate(&spec)?;
            let (train, held) = split_corpus(&data.train, 0.8, seed)?;
            let cfg = TrainConfig {
                lambda,
                seed,
                n_critic: env("NCRITIC", 5.0) as usize,
                batch_size: env("BATCH", 32.0) as usize,
                epochs: env("EPOCHS", 10.0) as usize,
                lr_main: env("LR", 1e-4),
                lr_d: env("LRD", 1e-4),
                shared_hidden: env("HIDDEN", 700.0) as usize,
                dropout: env("DROPOUT", 0.4),
                checkpoint_policy: CheckpointPolicy::Final,
                eval_cadence: EvalCadence::EveryKSteps(env("EVAL_EVERY", 15.0) as u64),
                ..TrainConfig::default()
            };
            let trained = train_on_corpus(
                &train,
                &data.lfs,
                &cfg,
                Extras {
                    validation: trace.then_some(&data.test),
                    heldout: Some(&held),
                },
                None,
            )?;
            let (_, rep) = evaluate(&trained.result.model, &trained.prepared.vocab, &data.test, 1)?;
            if trace {
                let pts: Vec<String> = trained
                    .result
                    .evaluations
                    .iter()
                    .map(|e| format!("{:.2}", e.metric))
                    .collect();
                println!("  lambda={lambda} seed={seed} trace {}", pts.join(" "));
            }
            let d = *trained.result.disc_accuracy.last().unwrap_or(&f64::NAN);
            if std::env::var("VERBOSE").is_ok() {
                println!("  lambda={lambda} seed={seed} acc={:.3} disc={:.3}", rep.accuracy, d);
            }
            acc += rep.accuracy;
            dacc += d;
        }
        println!(
            "lambda={lambda}: mean test acc {:.4}, mean disc acc {:.4} ({:.1}s)",
            acc / seeds as f64,
            dacc / seeds as f64,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn env(key: &str, default: f64) -> f64 {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}
