//! `knowman` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use knowman::trainer::{CheckpointPolicy, EvalCadence, TrainConfig};

#[derive(Parser)]
#[command(name = "knowman", version, about = "Weak supervision with adversarial LF discriminators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic LF-leak corpus with its labeling functions.
    Synth(SynthArgs),
    /// Run labeling functions over a corpus and resolve weak labels.
    ApplyLfs(ApplyArgs),
    /// Train a model on a weakly labeled corpus.
    Train(TrainArgs),
    /// Score trained runs on a gold-labeled corpus.
    Eval(EvalArgs),
    /// Random hyperparameter search.
    Search(SearchArgs),
    /// Paired approximate randomization test between two runs.
    Significance(SignificanceArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub n_lfs_per_class: Option<usize>,
    #[arg(long)]
    pub lf_leak_prob: Option<f64>,
    #[arg(long)]
    pub background_signal_prob: Option<f64>,
    #[arg(long)]
    pub background_tokens_per_class: Option<usize>,
    #[arg(long)]
    pub noise_vocab_size: Option<usize>,
    #[arg(long)]
    pub noise_tokens_per_doc: Option<usize>,
    /// Keep LF keywords in the test texts.
    #[arg(long)]
    pub keep_lf_tokens_in_test: bool,
}

#[derive(Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lfs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "majority_drop_ties")]
    pub tie_policy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Best,
    Final,
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {v}"))
    }
}

/// One flag per `TrainConfig` field; set flags override the config file.
#[derive(Args, Default)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, value_parser = non_negative, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_main: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub optimizer_main: Option<String>,
    #[arg(long)]
    pub optimizer_d: Option<String>,
    #[arg(long)]
    pub weight_decay_main: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub shared_hidden: Option<usize>,
    #[arg(long)]
    pub num_f_layers: Option<usize>,
    #[arg(long)]
    pub num_c_layers: Option<usize>,
    #[arg(long)]
    pub num_d_layers: Option<usize>,
    /// Validation interval in main steps; 1 evaluates after every batch.
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long, value_enum)]
    pub checkpoint_policy: Option<PolicyArg>,
    #[arg(long, value_parser = ["accuracy", "f1_pos"])]
    pub metric: Option<String>,
    #[arg(long)]
    pub positive_class: Option<usize>,
    #[arg(long)]
    pub tie_policy: Option<String>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        set!(
            scheme, lambda, n_critic, batch_size, epochs, lr_main, lr_d, optimizer_main,
            optimizer_d, weight_decay_main, dropout, shared_hidden, num_f_layers, num_c_layers,
            num_d_layers, metric, positive_class, tie_policy, min_df, seed
        );
        if let Some(k) = self.eval_every {
            c.eval_cadence = if k == 1 {
                EvalCadence::PerBatch
            } else {
                EvalCadence::EveryKSteps(k)
            };
        }
        if let Some(p) = self.checkpoint_policy {
            c.checkpoint_policy = match p {
                PolicyArg::Best => CheckpointPolicy::Best,
                PolicyArg::Final => CheckpointPolicy::Final,
            };
        }
        c
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Weakly supervised training corpus (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub lfs: PathBuf,
    /// Gold-labeled corpus for checkpoint selection.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Fraction of the training corpus kept for training; the rest scores
    /// the discriminator on held-out triples after every epoch.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Gold-labeled test corpus.
    #[arg(long)]
    pub test: PathBuf,
    /// Run directories written by `train`.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_parser = ["accuracy", "f1_pos"], default_value = "accuracy")]
    pub metric: String,
    #[arg(long, default_value_t = 1)]
    pub positive_class: usize,
    /// JSON report path; defaults to eval.json next to the first run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub lfs: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    /// Base TOML configuration for fields that are not searched.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TOML search space; defaults to the built-in space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    /// Root seed of the search; each trial's training seed derives from it.
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, default_value = "random")]
    pub proposer: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Args)]
pub struct SignificanceArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_parser = ["accuracy", "f1_pos"], default_value = "accuracy")]
    pub metric: String,
    #[arg(long, default_value_t = 1)]
    pub positive_class: usize,
    #[arg(long, default_value_t = knowman::eval::DEFAULT_ROUNDS)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON result path; defaults to significance.json next to run A.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Errors that should be reported as bad usage rather than failed runs.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::ApplyLfs(a) => commands::apply_lfs(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Search(a) => commands::search(a),
        Command::Significance(a) => commands::significance(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Some errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            let usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<knowman::Error>(), Some(knowman::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
