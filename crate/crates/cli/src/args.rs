use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Exact n-gram corpus indexing and memorization analysis.
#[derive(Debug, Parser)]
#[command(name = "memtrace", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Settings that may also come from `--config`. Flags win over the file,
/// the file wins over built-in defaults.
#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus store and index directory.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for sampling and the hash embedder.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Corpus JSONL ({"text", "meta"?}).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Task dataset JSONL ({"input", "output", "score"?}).
    #[arg(long, global = true)]
    pub task: Option<PathBuf>,
    /// Task-gram table JSONL.
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// Token log-probability records JSONL.
    #[arg(long, global = true)]
    pub records: Option<PathBuf>,
    /// Gradient dump directory.
    #[arg(long, global = true)]
    pub grads: Option<PathBuf>,
    /// N-gram size.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Cosine similarity threshold, in (0, 1).
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Threshold family used when --gamma is absent (wmt, triviaqa, mmlu).
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Longest n-gram kept in the postings index.
    #[arg(long, global = true)]
    pub n_pair_max: Option<usize>,
    /// Keep case when tokenizing.
    #[arg(long, global = true)]
    pub no_lowercase: bool,
    /// Prompt layout with one {x} and one {y}.
    #[arg(long, global = true)]
    pub template: Option<String>,
    #[arg(long, global = true)]
    pub instruction: Option<String>,
    /// `hash` (built-in) or `http`.
    #[arg(long, global = true)]
    pub embedder: Option<String>,
    #[arg(long, global = true)]
    pub embed_url: Option<String>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    #[arg(long, global = true)]
    pub model_endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    /// Build and query the corpus index.
    Index(IndexCmd),
    /// Mine a task-gram table from a task dataset.
    Mine(MineArgs),
    #[command(subcommand)]
    /// Task-gram language model queries.
    Tasklm(TasklmCmd),
    #[command(subcommand)]
    /// Unbounded n-gram backoff probabilities.
    Infgram(InfgramCmd),
    #[command(subcommand)]
    /// Fetch, validate and align LLM token log-probs.
    Probs(ProbsCmd),
    #[command(subcommand)]
    /// Memorization, novelty, contamination, influence and binning.
    Analyze(AnalyzeCmd),
    /// Rewrite a prompt to raise or lower its corpus n-gram count.
    PromptOpt(PromptOptArgs),
    /// Merge analysis artifacts in the output directory.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Index(c) => match c {
                IndexCmd::Build => "index-build",
                IndexCmd::Count(_) => "index-count",
                IndexCmd::PairCount(_) => "index-pair-count",
                IndexCmd::Docs(_) => "index-docs",
            },
            Command::Mine(_) => "mine",
            Command::Tasklm(c) => match c {
                TasklmCmd::Prob(_) => "tasklm-prob",
                TasklmCmd::Mass => "tasklm-mass",
            },
            Command::Infgram(c) => match c {
                InfgramCmd::Prob(_) => "infgram-prob",
                InfgramCmd::Batch => "infgram-batch",
            },
            Command::Probs(c) => match c {
                ProbsCmd::Fetch => "probs-fetch",
                ProbsCmd::Validate => "probs-validate",
                ProbsCmd::Align => "probs-align",
            },
            Command::Analyze(c) => match c {
                AnalyzeCmd::Memorization(_) => "analyze-memorization",
                AnalyzeCmd::Novelty(_) => "analyze-novelty",
                AnalyzeCmd::Decontam(_) => "analyze-decontam",
                AnalyzeCmd::Influence(_) => "analyze-influence",
                AnalyzeCmd::Bins(_) => "analyze-bins",
            },
            Command::PromptOpt(_) => "prompt-opt",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Ingest --corpus and build the index under --store.
    Build,
    /// Occurrences of an n-gram.
    Count(NgramArg),
    /// Documents containing both n-grams.
    PairCount(PairArg),
    /// Documents containing an n-gram, or a pair when --target is given.
    Docs(DocsArgs),
}

#[derive(Debug, Args)]
pub struct NgramArg {
    #[arg(long)]
    pub ngram: String,
}

#[derive(Debug, Args)]
pub struct PairArg {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
}

#[derive(Debug, Args)]
pub struct DocsArgs {
    #[arg(long)]
    pub ngram: String,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Use the whole output as the single target n-gram.
    #[arg(long)]
    pub whole_output: bool,
    #[arg(long)]
    pub candidate_cap: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TasklmCmd {
    /// P(target | source) from the table.
    Prob(PairArg),
    /// Per-example pair-count mass over the task set.
    Mass,
}

#[derive(Debug, Subcommand)]
pub enum InfgramCmd {
    /// Backoff probability of one token after a context.
    Prob(InfgramProbArgs),
    /// Span probabilities of every table pair's target in the task set.
    Batch,
}

#[derive(Debug, Args)]
pub struct InfgramProbArgs {
    #[arg(long)]
    pub context: String,
    #[arg(long)]
    pub token: String,
}

#[derive(Debug, Subcommand)]
pub enum ProbsCmd {
    /// Query --model-endpoint for echo log-probs, appending to --records.
    Fetch,
    /// Check --records against the rendered task prompts.
    Validate,
    /// Align table targets to LLM tokens and sum their log-probs.
    Align,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Rank correlation of n-gram LM and LLM log-probs over table pairs.
    Memorization(MemorizationArgs),
    /// Count generated pairs that never co-occur in the corpus.
    Novelty(NoveltyArgs),
    /// Flag task examples sharing long n-grams with the corpus.
    Decontam(DecontamArgs),
    /// Gradient dot-product influence of retrieved documents.
    Influence(InfluenceArgs),
    /// Task score by pair-count mass bin.
    Bins(BinsArgs),
}

#[derive(Debug, Args)]
pub struct MemorizationArgs {
    /// taskgram or infgram.
    #[arg(long, default_value = "taskgram")]
    pub lm: String,
    /// Exact permutation p-value (at most 10 observations).
    #[arg(long)]
    pub permutation: bool,
}

#[derive(Debug, Args)]
pub struct NoveltyArgs {
    /// JSONL of {"input", "generated", "example_id"?}.
    #[arg(long)]
    pub generations: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecontamArgs {
    #[arg(long = "ngram-sizes", value_delimiter = ',', default_values_t = [8usize, 14])]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    /// pair or target_only.
    #[arg(long, default_value = "pair")]
    pub scheme: String,
    #[arg(long, default_value_t = 50)]
    pub r: usize,
}

#[derive(Debug, Args)]
pub struct BinsArgs {
    #[arg(long, conflicts_with_all = ["width", "edges"])]
    pub bins: Option<usize>,
    #[arg(long, conflicts_with = "edges")]
    pub width: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub edges: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PromptOptArgs {
    /// maximize or minimize.
    #[arg(long)]
    pub objective: String,
    #[arg(long)]
    pub iters: usize,
    #[arg(long)]
    pub init: String,
    /// Chat endpoint for rewrites.
    #[arg(long, conflicts_with = "mock_candidates")]
    pub rewriter_url: Option<String>,
    /// File of candidate prompts, one per line, served in a cycle.
    #[arg(long)]
    pub mock_candidates: Option<PathBuf>,
}
