//! Command-line front end: corpus generation, filtering, sweeps, sensitivity
//! analyses, simnet runs, policy checks and the two-run reproducibility
//! check. Every command writes its reports plus a `manifest.json` into the
//! output directory.

mod commands;
mod output;
mod reproduce;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub use output::{sha256_hex, FileDigest, Manifest, OutputDir, MANIFEST_FILE};
pub use reproduce::{compare_dirs, Divergence, ReproduceReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

/// What a command reports back: exit code and one summary line per fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub lines: Vec<String>,
}

impl Outcome {
    fn ok(lines: Vec<String>) -> Self {
        Outcome { code: EXIT_OK, lines }
    }

    fn check(passed: bool, lines: Vec<String>) -> Self {
        Outcome { code: if passed { EXIT_OK } else { EXIT_CHECK_FAILED }, lines }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "afdo", version, about = "Autonomous FAIR digital object decision stack")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Root seed for every random choice.
    #[arg(long, global = true, env = "AFDO_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Corpus scale relative to the reference corpus of 3,914 records.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub scale: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic conflict corpus.
    Generate(GenerateArgs),
    /// Run the four-stage filter over a raw submission table.
    Filter(FilterArgs),
    /// Accuracy under attack across models, fractions and strategies.
    Sweep(SweepArgs),
    /// Strategy comparison without attack.
    Ablation(AblationArgs),
    /// Accuracy across trim ratios without attack.
    Sensitivity(SensitivityArgs),
    /// Trust-parameter grid and perturbation analysis.
    TrustSensitivity(TrustSensitivityArgs),
    /// Virtual-time execution in three modes plus snapshot equivalence.
    Simnet(SimnetArgs),
    /// Policy file checks.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Every stage at desk scale into one directory tree.
    Pipeline(PipelineArgs),
    /// Runs a command twice and compares all outputs byte for byte.
    Reproduce(ReproduceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Filter(_) => "filter",
            Command::Sweep(_) => "sweep",
            Command::Ablation(_) => "ablation",
            Command::Sensitivity(_) => "sensitivity",
            Command::TrustSensitivity(_) => "trust-sensitivity",
            Command::Simnet(_) => "simnet",
            Command::Policy(_) => "policy-check",
            Command::Pipeline(_) => "pipeline",
            Command::Reproduce(_) => "reproduce",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArg {
    /// Corpus file (JSON lines). Generated from --seed and --scale when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// Mean submissions per record.
    #[arg(long)]
    pub mean_submissions: Option<f64>,
    /// Fewest submissions in a record.
    #[arg(long)]
    pub min_submissions: Option<usize>,
    /// Most submissions in a record.
    #[arg(long)]
    pub max_submissions: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FilterArgs {
    /// Raw submission table (TSV).
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    /// Adversary fractions f/n.
    #[arg(long, value_delimiter = ',', default_values_t = afdo_core::adversary::SWEEP_FRACTIONS)]
    pub fractions: Vec<f64>,
    /// Attack models.
    #[arg(long, value_delimiter = ',', default_values = ["sybil", "collusion", "poisoning"])]
    pub models: Vec<String>,
    /// Aggregation strategies.
    #[arg(long, value_delimiter = ',', default_values = ["twm", "sm", "fw"])]
    pub strategies: Vec<String>,
    /// Trim ratio for the trimmed weighted mean.
    #[arg(long, value_delimiter = ',', default_values_t = [0.20])]
    pub theta: Vec<f64>,
    /// Attack draws per record and cell.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblationArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    /// Trim ratios to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = afdo_core::adversary::THETA_GRID)]
    pub theta_grid: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrustSensitivityArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.10, 0.30, 0.50])]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.10])]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.10, 0.20, 0.30])]
    pub gammas: Vec<f64>,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 30)]
    pub replicates: usize,
    /// Relative perturbation of alpha, beta and gamma.
    #[arg(long, default_value_t = 0.10)]
    pub perturbation: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimnetArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    /// Records in the workload, taken from the front of the corpus.
    #[arg(long, default_value_t = 100)]
    pub records: usize,
    /// Mean cross-region round trip, milliseconds.
    #[arg(long, default_value_t = 144.0)]
    pub mean_rtt: f64,
    /// Round-trip standard deviation, milliseconds.
    #[arg(long, default_value_t = 55.0)]
    pub sd_rtt: f64,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum PolicyCommand {
    /// Parse, serialise, re-parse and compare behaviour on generated inputs.
    Check(PolicyCheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PolicyCheckArgs {
    /// Policy files or directories of `.ttl` files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Missing fields are evaluation errors instead of false clauses.
    #[arg(long)]
    pub strict_fields: bool,
    /// Generated evaluation inputs per file.
    #[arg(long, default_value_t = 45)]
    pub inputs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 100)]
    pub records: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReproduceArgs {
    /// Feeds the second run from an unseeded source.
    #[arg(long, hide = true)]
    pub inject_unseeded: bool,
    /// The command to run, with its own flags.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
    pub command: Vec<String>,
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub scale: f64,
    pub format: Format,
    /// Replaces the seed with wall-clock entropy. Test hook for reproduce.
    pub unseeded: bool,
}

impl Context {
    fn from_cli(cli: &Cli) -> Self {
        Context { seed: cli.seed, scale: cli.scale, format: cli.format, unseeded: false }
    }

    pub fn seed(&self) -> afdo_core::Seed {
        if self.unseeded {
            let nanos =
                std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
            afdo_core::Seed(self.seed ^ nanos)
        } else {
            afdo_core::Seed(self.seed)
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    run_with(cli, &Context::from_cli(cli))
}

fn run_with(cli: &Cli, ctx: &Context) -> Result<Outcome, CliError> {
    if !(cli.scale > 0.0 && cli.scale.is_finite()) {
        return Err(CliError::usage(format!("--scale must be positive, got {}", cli.scale)));
    }
    let config = serde_json::to_value(cli).expect("command line serialises");
    let out = &cli.out;
    match &cli.command {
        Command::Generate(a) => commands::generate(ctx, a, out, config),
        Command::Filter(a) => commands::filter(ctx, a, out, config),
        Command::Sweep(a) => commands::sweep(ctx, a, out, config),
        Command::Ablation(a) => commands::ablation(ctx, a, out, config),
        Command::Sensitivity(a) => commands::sensitivity(ctx, a, out, config),
        Command::TrustSensitivity(a) => commands::trust_sensitivity(ctx, a, out, config),
        Command::Simnet(a) => commands::simnet(ctx, a, out, config),
        Command::Policy(PolicyCommand::Check(a)) => commands::policy_check(ctx, a, out, config),
        Command::Pipeline(a) => commands::pipeline(ctx, a, out, config),
        Command::Reproduce(a) => reproduce::reproduce(cli, a),
    }
}

/// Parses `args` (without the program name) and runs them.
pub fn run_args<I, S>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("afdo")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::usage(e.to_string().trim_end()))?;
    run(&cli)
}
