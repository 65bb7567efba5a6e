//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "cardiolens",
    version,
    about = "Echocardiography report tokenization, zero-shot inference, retrieval and cohort analytics"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    /// Parses with repeated flags allowed, the last one winning, so values
    /// from `--config` can be overridden on the command line.
    pub fn parse_args(args: Vec<String>) -> Result<Cli, clap::Error> {
        let mut matches = Cli::command()
            .args_override_self(true)
            .mut_subcommands(|sub| sub.args_override_self(true))
            .try_get_matches_from(args)?;
        Cli::from_arg_matches_mut(&mut matches)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Seed for every random draw in the run
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON object of flag values (keys are flag names); flags given on the
    /// command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Tokenize reports with the template or BPE tokenizer, optionally with corpus statistics
    Tokenize(TokenizeArgs),
    /// Write the template vocabulary and optionally train a BPE vocabulary
    Vocab(VocabArgs),
    /// Generate a synthetic corpus of paired reports and frame features
    Gen(GenArgs),
    /// Train the linear dual encoder on a generated corpus
    Train(TrainArgs),
    /// Validate an external embedding manifest and blob and write a normalized store
    Import(ImportArgs),
    /// Zero-shot regression or classification with a trained checkpoint
    Zeroshot(ZeroshotArgs),
    /// Cross-modal retrieval ranks, recall@K and MCMRR
    Retrieval(RetrievalArgs),
    /// Same-patient similarity geometry and procedure timelines
    Cohort(CohortArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Template,
    Bpe,
}

#[derive(Debug, Args, Serialize)]
pub struct TokenizeArgs {
    /// Report file: one report per line, or JSON lines with a "text" field
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Template vocabulary (defaults to the built-in starter vocabulary)
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Tokenizer for the token output
    #[arg(long, value_enum, default_value_t = TokenizerKind::Template)]
    pub tokenizer: TokenizerKind,
    /// Trained BPE vocabulary; without it BPE is trained on the input
    #[arg(long, value_name = "FILE")]
    pub bpe: Option<PathBuf>,
    /// Merges when training BPE on the input
    #[arg(long, default_value_t = 1000)]
    pub merges: usize,
    /// Maximum sequence length including bos and eos
    #[arg(long, default_value_t = 77)]
    pub context_length: usize,
    /// Also write token-count statistics for both tokenizers and their ratio
    #[arg(long)]
    pub stats: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    /// Template vocabulary to validate and rewrite (defaults to the starter vocabulary)
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    /// Report file to train a BPE vocabulary on
    #[arg(long, value_name = "FILE")]
    pub bpe_corpus: Option<PathBuf>,
    /// BPE merges
    #[arg(long, default_value_t = 1000)]
    pub merges: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Number of synthetic patients
    #[arg(long, default_value_t = 400)]
    pub patients: usize,
    /// Studies per patient
    #[arg(long, default_value_t = 2)]
    pub studies: usize,
    /// Expected norm of per-frame noise
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Frames per study
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Image feature dimension
    #[arg(long, default_value_t = 64)]
    pub d_img: usize,
    /// Probability that a report states the pulmonary artery pressure
    #[arg(long, default_value_t = 0.15)]
    pub pap_measured_rate: f64,
    /// Pacemaker prevalence
    #[arg(long, default_value_t = 0.2)]
    pub pacemaker_rate: f64,
    /// Give every patient a procedure date and shift post-procedure features by this norm
    #[arg(long)]
    pub event_shift: Option<f64>,
    /// Days on either side of the procedure that studies fall in
    #[arg(long, default_value_t = 200)]
    pub window_days: i64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small model and large step size for desk-scale corpora
    Desk,
    /// Full-scale schedule: peak 5e-5, 2000 warmup steps, batch 1024, 50 epochs
    Paper,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Corpus directory written by `gen`
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Template vocabulary (defaults to the starter vocabulary)
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Base hyperparameters; the flags below override them
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Peak learning rate
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Linear warmup steps
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Joint embedding dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Epochs between validation MCMRR evaluations
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Fraction of patients held out for checkpoint selection
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportArgs {
    /// JSON-lines manifest, one record per blob row
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// EMB1 blob
    #[arg(long, value_name = "FILE")]
    pub blob: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Where embeddings come from: a stored manifest and blob, or a generated
/// corpus embedded by a checkpoint.
#[derive(Debug, Args, Serialize)]
pub struct SourceArgs {
    /// Embedding manifest (with --blob)
    #[arg(long, value_name = "FILE", requires = "blob", conflicts_with_all = ["corpus", "checkpoint"])]
    pub manifest: Option<PathBuf>,
    /// Embedding blob (with --manifest)
    #[arg(long, value_name = "FILE", requires = "manifest")]
    pub blob: Option<PathBuf>,
    /// Corpus directory written by `gen` (with --checkpoint)
    #[arg(long, value_name = "DIR", requires = "checkpoint")]
    pub corpus: Option<PathBuf>,
    /// Checkpoint directory written by `train` (with --corpus)
    #[arg(long, value_name = "DIR", requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    /// Template vocabulary for report text (defaults to the starter vocabulary)
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Frames per study to embed from a corpus
    #[arg(long, default_value_t = 16)]
    pub embed_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ensemble {
    /// All phrasings compete in one candidate set
    Pooled,
    /// Similarities are averaged across phrasings per value first
    Averaged,
}

#[derive(Debug, Args, Serialize)]
pub struct ZeroshotArgs {
    /// Corpus directory written by `gen`
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Checkpoint directory written by `train`
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Template vocabulary (defaults to the starter vocabulary)
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Built-in task name
    #[arg(long, required_unless_present = "task_file", conflicts_with = "task_file")]
    pub task: Option<String>,
    /// Task definition file; its "task" field must name a built-in target
    #[arg(long, value_name = "FILE")]
    pub task_file: Option<PathBuf>,
    /// Fraction of prompts whose values are pooled into the median
    #[arg(long, default_value_t = 0.2)]
    pub top_fraction: f64,
    #[arg(long, value_enum, default_value_t = Ensemble::Pooled)]
    pub ensemble: Ensemble,
    /// Leading frames averaged per video for regression
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Leading frames averaged per video for classification (1 for single-frame)
    #[arg(long, default_value_t = 10)]
    pub classify_frames: usize,
    /// Bootstrap resamples
    #[arg(long, default_value_t = 1000)]
    pub n_boot: usize,
    /// Resample whole patients instead of videos
    #[arg(long)]
    pub by_patient: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Smallest image id per report
    MinId,
    /// Mean of the first --pool-frames frames
    Mean,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrievalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Image embedding per report
    #[arg(long, value_enum, default_value_t = Pooling::MinId)]
    pub pooling: Pooling,
    /// Frames averaged with --pooling mean
    #[arg(long, default_value_t = 10)]
    pub pool_frames: u32,
    /// Recall cut-offs
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    pub k: Vec<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CohortArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Image pairs sampled per relation class
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    /// CSV of patient_id,event_date (defaults to events.csv in --corpus when present)
    #[arg(long, value_name = "FILE")]
    pub events: Option<PathBuf>,
    /// Days on either side of an event kept in its timeline
    #[arg(long, default_value_t = 200)]
    pub window: i64,
    /// Bootstrap resamples
    #[arg(long, default_value_t = 1000)]
    pub n_boot: usize,
    /// Resample whole patients for the before/after AUC
    #[arg(long)]
    pub by_patient: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tokenize(_) => "tokenize",
            Command::Vocab(_) => "vocab",
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Import(_) => "import",
            Command::Zeroshot(_) => "zeroshot",
            Command::Retrieval(_) => "retrieval",
            Command::Cohort(_) => "cohort",
        }
    }

    pub fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Tokenize(a) => &a.out,
            Command::Vocab(a) => &a.out,
            Command::Gen(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Import(a) => &a.out,
            Command::Zeroshot(a) => &a.out,
            Command::Retrieval(a) => &a.out,
            Command::Cohort(a) => &a.out,
        }
    }
}

pub const SUBCOMMANDS: &[&str] = &[
    "tokenize",
    "vocab",
    "gen",
    "train",
    "import",
    "zeroshot",
    "retrieval",
    "cohort",
];
