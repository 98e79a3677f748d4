//! `lmkit`: command-line front end for tokenizer training, pre-training,
//! fine-tuning, grid search and evaluation.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use lmkit_core::config::{Strategy, TrainingConfig};

#[derive(Debug, Parser)]
#[command(name = "lmkit", version, about = "Masked-LM pre-training, NER/RE fine-tuning and evaluation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for read-only inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// JSON object whose keys are flag names; its values override the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Hyper {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

impl Hyper {
    pub fn apply(&self, mut base: TrainingConfig, seed: u64) -> TrainingConfig {
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            base.weight_decay = v;
        }
        if let Some(v) = self.max_seq_len {
            base.max_sequence_length = v;
        }
        base.seed = seed;
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Ner,
    Re,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a WordPiece vocabulary on a JSONL corpus.
    TrainTokenizer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = lmkit_core::tokenizer::DEFAULT_MIN_FREQUENCY)]
        min_frequency: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-LM pre-training, from scratch (SC) or from a checkpoint (FP).
    Pretrain {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        /// Architecture for SC as a JSON model config; defaults to the desk model.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Reference settings of the multilingual run (batch 16).
        #[arg(long)]
        multilingual: bool,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split an annotated dataset into train, test and validation.
    SplitData {
        #[arg(long)]
        data: PathBuf,
        /// Move documents into train until it holds every relation label.
        #[arg(long)]
        stratify: bool,
        /// Relation inventory used for the instance counts of the report.
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long, default_value_t = 0.75)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0.10)]
        test_ratio: f64,
        #[arg(long, default_value_t = 0.15)]
        validation_ratio: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fine-tune a BIO entity tagger.
    FinetuneNer {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        init_checkpoint: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fine-tune a relation classifier over annotated pairs.
    FinetuneRe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long)]
        init_checkpoint: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Exhaustive search over learning rate, epochs, weight decay and batch size.
    GridSearch {
        #[arg(long, value_enum)]
        task: Task,
        /// `reference` for the 54-point space, or a JSON grid file.
        #[arg(long, default_value = "reference")]
        space: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        init_checkpoint: PathBuf,
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Run only the first N grid points.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        max_seq_len: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Entity-level scores of a tagger.
    EvalNer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write predicted entities as JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relation scores over gold pairs, or over pairs of predicted entities.
    EvalRe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Predicted entities from `eval-ner --predictions`; switches to the predicted-pair protocol.
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-token probe accuracy.
    MaskPredict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-log-likelihood of each line of a text file.
    PllScore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest and compare its outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainTokenizer { .. } => "train-tokenizer",
            Command::Pretrain { .. } => "pretrain",
            Command::SplitData { .. } => "split-data",
            Command::FinetuneNer { .. } => "finetune-ner",
            Command::FinetuneRe { .. } => "finetune-re",
            Command::GridSearch { .. } => "grid-search",
            Command::EvalNer { .. } => "eval-ner",
            Command::EvalRe { .. } => "eval-re",
            Command::MaskPredict { .. } => "mask-predict",
            Command::PllScore { .. } => "pll-score",
            Command::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(lmkit_core::Error),
    ReplayMismatch(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::ReplayMismatch(_) => "replay-mismatch",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_user_error() => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::ReplayMismatch(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<lmkit_core::Error> for CliError {
    fn from(e: lmkit_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Removes `--config PATH` / `--config=PATH` from `args`, returning the path.
fn take_config(args: &mut Vec<String>) -> Option<PathBuf> {
    let mut found = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" && i + 1 < args.len() {
            found = Some(PathBuf::from(args.remove(i + 1)));
            args.remove(i);
        } else if let Some(v) = args[i].strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    found
}

/// Flag arguments from a JSON object: `{"learning_rate": 1e-4, "stratify": true}`
/// becomes `--learning-rate 0.0001 --stratify`.
fn config_args(path: &std::path::Path) -> CliResult<Vec<String>> {
    let value: Value = lmkit_core::io::read_json(path)?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{} must hold a JSON object", path.display())));
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => out.extend([flag, n.to_string()]),
            Value::String(s) => out.extend([flag, s]),
            other => {
                return Err(CliError::Usage(format!("config key {key:?} has unsupported value {other}")));
            }
        }
    }
    Ok(out)
}

/// Parses `args` (without the program name) after `--config` expansion.
/// Returns the parsed command line and the expanded argument list.
pub fn parse(args: &[String]) -> CliResult<(Cli, Vec<String>)> {
    let mut args = args.to_vec();
    if let Some(path) = take_config(&mut args) {
        args.extend(config_args(&path)?);
    }
    let cli = Cli::try_parse_from(std::iter::once("lmkit".to_string()).chain(args.iter().cloned()))
        .map_err(|e| match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Usage(e.render().to_string()),
        })?;
    Ok((cli, args))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V" || a == "help") {
        if let Err(e) = Cli::try_parse_from(std::iter::once("lmkit".to_string()).chain(args.iter().cloned())) {
            let _ = e.print();
            return if e.use_stderr() { fail(&CliError::Usage(e.to_string())) } else { ExitCode::SUCCESS };
        }
    }
    let parsed = parse(&args);
    let level = match &parsed {
        Ok((cli, _)) if cli.quiet => log::LevelFilter::Warn,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let result = parsed.and_then(|(cli, expanded)| commands::execute(cli, expanded));
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    if let CliError::Usage(text) = e {
        eprint!("{text}");
        if !text.ends_with('\n') {
            eprintln!();
        }
    }
    let line = serde_json::json!({ "error": e.kind(), "message": e.to_string().lines().next().unwrap_or_default() });
    eprintln!("{line}");
    ExitCode::from(e.exit_code())
}
