//! `seqlen-audit`: reproduce, detect and mitigate the sequence-length
//! shortcut in LSTM text classifiers.

mod commands;
mod config;
mod data;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Profile, TrainFlags};
use crate::data::TextFlags;
use crate::error::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(name = "seqlen-audit", version, about = "Audit LSTM classifiers for the sequence-length shortcut")]
pub struct Cli {
    /// Single-threaded execution with fixed reduction order; outputs are
    /// byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for independent experiment cells (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test pair with controlled class length distributions.
    Synth(SynthArgs),
    /// Print the class length overlap of two normal specs or of dataset files.
    Overlap(OverlapArgs),
    /// Apply the gap, reverse or reverse* alteration to a text corpus.
    Alter(AlterArgs),
    /// Train an LSTM classifier and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one or more test sets.
    Evaluate(EvaluateArgs),
    /// Project document embeddings to 2-D and score class separability.
    Project(ProjectArgs),
    /// Run an experiment suite end to end.
    #[command(subcommand)]
    Audit(AuditCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MarkerArg {
    PerElement,
    PerSequence,
}

#[derive(Debug, Args)]
pub struct LengthSpecArgs {
    #[arg(long)]
    pub mu0: f64,
    #[arg(long)]
    pub sigma0: f64,
    #[arg(long)]
    pub mu1: f64,
    #[arg(long)]
    pub sigma1: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub lengths: LengthSpecArgs,
    /// Examples per split (overrides the profile).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Vector width (overrides the profile).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Plant all-ones marker steps in positive examples.
    #[arg(long)]
    pub informative: bool,
    #[arg(long, default_value_t = 0.1)]
    pub marker_density: f64,
    #[arg(long, value_enum, default_value = "per-element")]
    pub marker_mode: MarkerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long, requires_all = ["sigma0", "mu1", "sigma1"])]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    /// Dataset files whose class lengths are pooled (instead of specs).
    #[arg(long = "dataset", conflicts_with = "mu0")]
    pub datasets: Vec<PathBuf>,
    #[command(flatten)]
    pub text: TextFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlterMode {
    Gap,
    Reverse,
    ReverseStar,
}

impl AlterMode {
    pub fn name(self) -> &'static str {
        match self {
            AlterMode::Gap => "gap",
            AlterMode::Reverse => "reverse",
            AlterMode::ReverseStar => "reverse-star",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExtendArg {
    /// Double negatives until they reach `neg_min` tokens.
    RepeatUntil,
    /// Append exactly one copy.
    SingleDuplicate,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Longest positive (in tokens) kept on the gap side [default: 79].
    #[arg(long, conflicts_with = "median_thresholds")]
    pub pos_max: Option<usize>,
    /// Shortest negative kept on the gap side [default: 90].
    #[arg(long, conflicts_with = "median_thresholds")]
    pub neg_min: Option<usize>,
    /// Use the per-class median lengths of the input as thresholds.
    #[arg(long)]
    pub median_thresholds: bool,
    #[arg(long, value_enum, default_value = "repeat-until")]
    pub extend: ExtendArg,
}

#[derive(Debug, Args)]
pub struct AlterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AlterMode,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Also write a per-class length histogram with this bin width.
    #[arg(long)]
    pub histogram_bin: Option<usize>,
    #[command(flatten)]
    pub text: TextFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Vocabulary size cap including the unknown token.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Fixed hash-seeded random token vectors instead of a trainable table.
    #[arg(long)]
    pub frozen_embedding: bool,
    #[arg(long, default_value_t = 0)]
    pub embedding_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (vector or text JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Continue from a checkpoint (model, optimizer state and history).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: TrainFlags,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub text: TextFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test set as `NAME=PATH` or `PATH` (named after the file stem); repeatable.
    #[arg(long = "test", required = true)]
    pub tests: Vec<String>,
    #[command(flatten)]
    pub text: TextFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Tsne,
    Pca,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "tsne")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Project only the first N examples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub text: TextFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Accuracy across the five class length overlap scenarios.
    Scenarios(SuiteArgs),
    /// Weight decay × dropout grid on uninformative and informative data at 0 % overlap.
    Regularization(RegularizationArgs),
    /// Accuracy versus hidden size at 0 % overlap.
    HiddenSize(HiddenSizeArgs),
    /// Original/gap-trained models on the original, gap, reverse and reverse* test sets.
    Alteration(AlterationArgs),
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Examples per split (overrides the profile).
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed for data generation.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[command(flatten)]
    pub config: TrainFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegularizationArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1")]
    pub weight_decays: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub dropouts: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub marker_density: f64,
    #[arg(long, value_enum, default_value = "per-element")]
    pub marker_mode: MarkerArg,
}

#[derive(Debug, Args)]
pub struct HiddenSizeArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,64")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AlterationArgs {
    /// Training corpus (text JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Test corpus (text JSONL).
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.045")]
    pub weight_decays: Vec<f64>,
    /// Train the original-train model too (otherwise gap-train only).
    #[arg(long)]
    pub with_original: bool,
    /// Subsample the training corpus to at most this many examples.
    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub max_test: Option<usize>,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub config: TrainFlags,
    #[command(flatten)]
    pub text: TextFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
