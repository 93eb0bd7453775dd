//! Command-line front end for the `vhred` models.
//!
//! [`run`] parses an argument vector, dispatches to a subcommand and returns
//! the process exit code: 0 on success, 1 on a runtime failure, 2 on bad
//! usage.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use settings::Settings;

/// Environment variable naming the directory relative run paths live in.
pub const RUN_ROOT_ENV: &str = "VHRED_RUN_ROOT";

const CONFIG_HELP: &str = "\
CONFIGURATION
  Settings are layered: command-line flags override the config file, which
  overrides the preset. A config file holds one `key=value` per line; `#`
  starts a comment. Keys: preset, model (rnnlm|hred|vhred), embedding_dim,
  rnnlm_cell (gru|lstm), rnnlm_hidden, encoder_hidden, bidirectional_encoder,
  context_hidden, decoder_hidden, gate (tanh|product), gate_dim, latent_dim,
  latent_layers (1|2), covariance_scale, carry_encoder_state, vocab_limit,
  learning_rate, batch_size, clip_threshold, kl_ramp_batches, word_drop_rate,
  validate_every, patience, max_batches, max_unroll, validation_samples,
  seed, beam_width, max_tokens, latent_mode (prior_sample|prior_mean),
  corpus, valid, warm_start.
  Every `train` run writes its effective settings to <run>/config.txt, which
  can be passed back with --config to reproduce the run.

  Relative run directories are placed under $VHRED_RUN_ROOT when it is set.";

#[derive(Debug, Parser)]
#[command(name = "vhred", version, about = "Train, decode and evaluate hierarchical dialogue models", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct ConfigArgs {
    /// Base preset: twitter-vhred, twitter-hred, ubuntu-vhred, ubuntu-hred,
    /// lstm-baseline or toy.
    #[arg(long)]
    preset: Option<String>,
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write logs and checkpoints to a run directory.
    Train(TrainArgs),
    /// Decode responses for each context line.
    Generate(GenerateArgs),
    /// Score responses against references.
    Evaluate(EvaluateArgs),
    /// Compare bound gradients with finite differences on a small dialogue.
    Gradcheck(GradcheckArgs),
    /// Write a topic-structured synthetic corpus and its topic labels.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training corpus, one dialogue per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Validation corpus; defaults to the training corpus.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Initialize shared parameters from this HRED checkpoint.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    kl_ramp: Option<usize>,
    #[arg(long)]
    word_drop: Option<f64>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Record real batch durations in train.log (otherwise 0).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Model checkpoint.
    #[arg(long, required_unless_present = "retrieval_pool")]
    checkpoint: Option<PathBuf>,
    /// Answer by TF-IDF retrieval from this corpus instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    retrieval_pool: Option<PathBuf>,
    /// Contexts in corpus format, one per line.
    #[arg(long)]
    context_file: PathBuf,
    /// Responses file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    n_turns: usize,
    /// Beam width.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// prior_sample or prior_mean.
    #[arg(long)]
    latent_mode: Option<String>,
    /// Ancestral sampling at this temperature instead of beam search.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    references: Option<PathBuf>,
    /// Word vectors in word2vec text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Comma-separated subset of avg, greedy, extrema, stats, ci.
    #[arg(long, default_value = "avg,greedy,extrema")]
    metrics: String,
    /// Corpus whose unigram distribution the stats metric uses.
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// Human preference counts as wins,losses,ties for the ci metric.
    #[arg(long)]
    preferences: Option<String>,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Vocabulary size of the check dialogue (reserved tokens included).
    #[arg(long, default_value_t = 8)]
    vocab: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Fail when the largest relative discrepancy reaches this value.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    /// Redraw every parameter from U(-s, s) first; 0 keeps the
    /// initialization.
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    kl_weight: f64,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long, default_value_t = 4)]
    topics: usize,
    /// Probability that an utterance keeps the previous topic.
    #[arg(long, default_value_t = 0.5)]
    stickiness: f64,
    #[arg(long, default_value_t = 5)]
    words_per_topic: usize,
    #[arg(long, default_value_t = 2000)]
    dialogues: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 4)]
    max_len: usize,
    #[arg(long, default_value_t = 3)]
    min_utterances: usize,
    #[arg(long, default_value_t = 3)]
    max_utterances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus output file.
    #[arg(long)]
    out: PathBuf,
    /// Topic labels file; defaults to <out>.labels.
    #[arg(long)]
    labels: Option<PathBuf>,
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synthesize(a) => commands::synthesize(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            1
        }
    }
}
