//! `alarm-hmm`: simulate, extract, train, diagnose, evaluate, baseline, report.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alarm_hmm::extraction::{DEFAULT_KAPPA, DEFAULT_PERSIST_SECONDS};

#[derive(Debug, Parser)]
#[command(
    name = "alarm-hmm",
    version,
    about = "Alarm-sequence root-cause diagnosis with a discrete HMM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and test alarm sequences from a propagation graph.
    Simulate(SimulateArgs),
    /// Turn measurement-trace CSVs into alarm sequences.
    Extract(ExtractArgs),
    /// Train the diagnoser on labeled sequences.
    Train(TrainArgs),
    /// Diagnose one or more sequences with a trained model.
    Diagnose(DiagnoseArgs),
    /// Prefix-length accuracy and confusion matrices on a test set.
    Evaluate(EvaluateArgs),
    /// Similarity-clustering baseline on the same splits.
    Baseline(BaselineArgs),
    /// Merge evaluate and baseline outputs into one comparison CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Smoothing floor applied to emission and transition entries.
    #[arg(long, default_value_t = 1e-10)]
    pub floor: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Propagation graph JSON; the bundled ten-fault graph when omitted.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Training sequences per fault (overrides the reference counts).
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test sequences per fault (overrides the reference counts).
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub mag_low: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mag_high: f64,
    #[arg(long, default_value_t = 0.1)]
    pub swap_prob: f64,
    #[arg(long, default_value_t = 0.05)]
    pub drop_prob: f64,
    /// Also write measurement traces (CSV) for every scenario plus normal-operation traces.
    #[arg(long)]
    pub traces: bool,
    /// Sample period of written traces, seconds.
    #[arg(long, default_value_t = 10.0)]
    pub sample_period: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Trace CSVs to extract from.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Normal-operation trace CSVs used to set the alarm limits.
    #[arg(long, required = true, num_args = 1..)]
    pub normal: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PERSIST_SECONDS)]
    pub persist_t: f64,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Fault label attached to every extracted sequence.
    #[arg(long)]
    pub fault: Option<usize>,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled training JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measurement count of the codebook; read from the records when omitted.
    #[arg(long)]
    pub measurements: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub self_transition: f64,
    #[arg(long, default_value_t = 0.1)]
    pub pseudocount: f64,
    /// Pin every off-diagonal transition to this value during training.
    #[arg(long)]
    pub hard_mask: Option<f64>,
    /// Comma-separated fault priors (failure rates) for the initial distribution.
    #[arg(long, value_delimiter = ',')]
    pub priors: Option<Vec<f64>>,
    /// Output model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSONL of sequences to diagnose.
    #[arg(
        long = "in",
        conflicts_with = "sequence",
        required_unless_present = "sequence"
    )]
    pub input: Option<PathBuf>,
    /// A single comma-separated symbol sequence.
    #[arg(long, value_delimiter = ',')]
    pub sequence: Option<Vec<usize>>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled test JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Longest prefix evaluated; the longest test sequence when omitted.
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Prefix length of the written confusion matrix; `lmax` when omitted.
    #[arg(long)]
    pub confusion_at: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Labeled training JSONL.
    #[arg(long)]
    pub train: PathBuf,
    /// Test JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Number of flat clusters; the number of training faults when omitted.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Symbol alphabet size; read from the records when omitted.
    #[arg(long)]
    pub symbols: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `evaluate`.
    #[arg(long)]
    pub evaluate: PathBuf,
    /// Output directory of `baseline`.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let err = error::CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code());
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.line());
            ExitCode::from(err.exit_code())
        }
    }
}
