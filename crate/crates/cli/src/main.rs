//! `mpvr`: generate prompt corpora with an LLM, build zero-shot classifiers
//! from them and evaluate the result.

mod backends;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

/// A mistake in how the command was invoked rather than in the data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "mpvr", about = "Meta-prompted visual recognition: LLM-written prompt corpora for zero-shot classifiers")]
#[command(disable_version_flag = true, subcommand_required = false)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// LLM backend: http[:URL], mock:DIR, replay:DIR or synthetic
    #[arg(long, global = true, value_name = "SPEC")]
    pub llm: Option<String>,

    /// Model name sent to the LLM; also the corpus llm_id
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Embedding backend: files:DIR[,DIR..], synthetic:DIM:SEED or http:URL
    #[arg(long, global = true, value_name = "SPEC")]
    pub emb: Option<String>,

    /// Expected embedding dimension, checked against the backend
    #[arg(long, global = true)]
    pub dim: Option<usize>,

    /// Directory holding system_prompt.txt and incontext/
    #[arg(long, global = true, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,

    /// Append-only response cache consulted before the LLM
    #[arg(long, global = true, value_name = "DIR")]
    pub cache: Option<PathBuf>,

    /// Write every LLM answer as a mock fixture into DIR
    #[arg(long, global = true, value_name = "DIR")]
    pub record: Option<PathBuf>,

    /// Upper bound on concurrent LLM requests
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,

    /// Number of stage-1 query templates
    #[arg(long, global = true)]
    pub n_templates: Option<usize>,

    /// Descriptions requested per template and class
    #[arg(long, global = true)]
    pub prompts_per_template: Option<usize>,

    /// Token budget per requested item
    #[arg(long, global = true)]
    pub max_tokens: Option<usize>,

    /// Seed for LLM requests and corpus sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Softmax temperature of the classifier
    #[arg(long, global = true)]
    pub temperature: Option<f64>,

    /// Print tabular results as CSV instead of JSON
    #[arg(long, global = true)]
    pub csv: bool,

    /// Print the resolved plan without calling backends or writing files
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Log each stage on stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,

    /// Print version and file format versions as JSON
    #[arg(long)]
    pub version: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage 1: ask the LLM for query templates
    MetaGen(MetaGenArgs),
    /// Stage 2: turn templates into a prompt corpus
    DescGen(DescGenArgs),
    /// Build a classifier from a corpus and save it
    Build(BuildArgs),
    /// Classify one image with a saved classifier
    Classify(ClassifyArgs),
    /// Evaluate a corpus on a labeled split
    Eval(EvalArgs),
    /// Evaluate several corpora together
    Ensemble(EnsembleArgs),
    /// Run one of the ablation protocols
    Ablate(AblateArgs),
    /// Inspect, import or hash corpus files
    #[command(subcommand)]
    Corpus(CorpusCommand),
}

#[derive(Debug, Args, Clone, Copy)]
pub struct MetaPromptFlags {
    /// Leave the dataset name out of the meta-prompt
    #[arg(long)]
    pub no_name: bool,
    /// Leave the dataset description out of the meta-prompt
    #[arg(long)]
    pub no_metadata: bool,
    /// Leave the in-context example queries out of the meta-prompt
    #[arg(long)]
    pub no_in_context: bool,
    /// Add the class names to the meta-prompt
    #[arg(long)]
    pub class_names: bool,
}

#[derive(Debug, Args)]
pub struct MetaGenArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: MetaPromptFlags,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("variant").args(["one_step", "templates_only"])))]
pub struct DescGenArgs {
    #[arg(long)]
    pub task: PathBuf,
    /// Output of meta-gen, or a JSON list of template strings
    #[arg(long, required_unless_present = "one_step")]
    pub templates: Option<PathBuf>,
    /// Corpus file; defaults to <corpora>/<dataset>/<llm_id>.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ask for descriptions directly, skipping the templates
    #[arg(long)]
    pub one_step: bool,
    /// Use the filled-in templates as the prompts; no LLM calls
    #[arg(long)]
    pub templates_only: bool,
    /// Also write per-request provenance records to this file
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for the classifier
    #[arg(long)]
    pub out: PathBuf,
    /// Take the class order from this split
    #[arg(long, conflicts_with = "task")]
    pub split: Option<PathBuf>,
    /// Take the class order from this task
    #[arg(long)]
    pub task: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Directory written by `build`
    #[arg(long)]
    pub classifier: PathBuf,
    /// Image key known to the embedding backend
    #[arg(long)]
    pub image: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Embedding,
    Probability,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Corpus file; repeat for every source
    #[arg(long = "source", required = true)]
    pub sources: Vec<PathBuf>,
    #[arg(long)]
    pub split: PathBuf,
    /// Save the merged classifier here (embedding strategy only)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("protocol").required(true).args(["meta_prompt", "variants", "scaling", "robustness", "truncate"])))]
pub struct AblateArgs {
    /// Meta-prompt component rows
    #[arg(long)]
    pub meta_prompt: bool,
    /// S-TEMP, templates-only, 1-step and 2-step
    #[arg(long)]
    pub variants: bool,
    /// Accuracy over growing corpus fractions
    #[arg(long)]
    pub scaling: bool,
    /// Mean and spread over seeded subsamples
    #[arg(long)]
    pub robustness: bool,
    /// Mean over seeded truncations
    #[arg(long)]
    pub truncate: bool,

    #[arg(long)]
    pub split: PathBuf,
    /// Needed by --meta-prompt and --variants
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Needed by --scaling, --robustness and --truncate
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated fractions for --scaling
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.25, 0.5, 0.75, 1.0])]
    pub fractions: Vec<f64>,
    /// Subsample fraction for --robustness
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    /// Number of runs; defaults to 10 for --robustness and 5 for --truncate
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Summary counts of a corpus file
    Stats { path: PathBuf },
    /// Content hash of a corpus file
    Hash { path: PathBuf },
    /// Convert a plain {class: [prompt, ..]} file into a corpus
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        llm_id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage_exit(message: &str) -> ExitCode {
    use clap::CommandFactory;
    eprintln!("error: {message}\n");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(usage) = e.downcast_ref::<UsageError>() {
                return usage_exit(&usage.0);
            }
            // A reader such as `head` closing stdout early is not a failure.
            let closed = e
                .chain()
                .filter_map(|c| c.downcast_ref::<std::io::Error>())
                .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe);
            if closed {
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
