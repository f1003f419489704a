use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lattice_ner::{Error, GraphVariant, TagScheme};

mod commands;
mod input;

/// Lexicon-enhanced character-level named entity recognition.
#[derive(Debug, Parser)]
#[command(name = "lattice-ner", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List lexicon words matched in each sentence as `sentence_id<TAB>head<TAB>tail<TAB>surface`.
    Match(MatchArgs),
    /// Print the character/word graph of each sentence.
    Graph(GraphArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Strict-match precision, recall and F1 of predicted tags against gold tags.
    Eval(EvalArgs),
    /// Tag a one-character-per-line file with a trained checkpoint.
    Predict(PredictArgs),
    /// Compare reverse-mode gradients with finite differences on a small model.
    Gradcheck(GradcheckArgs),
    /// Corpus and lexicon-coverage statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    lexicon: PathBuf,
    /// Column corpus, or plain text with one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Supplies `min_word_len`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// standard, wo_word_edge, fc_intra or fc_inter; overrides the config.
    #[arg(long)]
    variant: Option<GraphVariant>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Training corpus; overrides `train`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    variant: Option<GraphVariant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, as `key=value`. Applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = TagScheme::Bio)]
    scheme: TagScheme,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    /// When given, the checkpoint must have been trained with the same model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Model dimensions, `seed` and `init_scale`.
    #[arg(long)]
    config: PathBuf,
    /// Corpus whose first sentence is checked; a built-in five-character sentence otherwise.
    #[arg(long, requires = "lexicon")]
    input: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Weight of the auxiliary loss.
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long, visible_alias = "input")]
    corpus: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = TagScheme::Bio)]
    scheme: TagScheme,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a subcommand, already classified for the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Numeric(_)) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Match(a) => commands::run_match(a),
        Command::Graph(a) => commands::run_graph(a),
        Command::Train(a) => commands::run_train(a),
        Command::Eval(a) => commands::run_eval(a),
        Command::Predict(a) => commands::run_predict(a),
        Command::Gradcheck(a) => commands::run_gradcheck(a),
        Command::Stats(a) => commands::run_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
