use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsr_cli::commands::{self, RunOverrides};
use gsr_cli::experiment::CliError;

#[derive(Parser)]
#[command(name = "gsr", version, about = "Group spectral regularization experiments on long-tailed 2-D mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Seeds, e.g. `0,1,2` or `0-4`; overrides `run.seeds`.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel runs; overrides `run.jobs`.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration.
    Train(RunArgs),
    /// Baseline, +LeCam, +gSR and +both arms with a summary table.
    Ablate(RunArgs),
    /// One gSR run per (n_g, n_c) pair in `sweep.groups`.
    SweepGroups(RunArgs),
    /// One gSR run per weight in `sweep.lambdas`.
    SweepLambda(RunArgs),
    /// Render SVG figures from runlog, metrics, covariance or samples CSVs.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for the SVG files (default: next to each input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    let (f, a): (fn(&_) -> Result<_, CliError>, RunArgs) = match cmd {
        Command::Train(a) => (commands::cmd_train, a),
        Command::Ablate(a) => (commands::cmd_ablate, a),
        Command::SweepGroups(a) => (commands::cmd_sweep_groups, a),
        Command::SweepLambda(a) => (commands::cmd_sweep_lambda, a),
        Command::Plot { inputs, out } => {
            for p in commands::cmd_plot(&inputs, out.as_deref())? {
                println!("wrote {}", p.display());
            }
            return Ok(());
        }
    };
    let ov = RunOverrides {
        seeds: a.seeds,
        out: a.out,
        jobs: a.jobs,
    };
    let cfg = commands::load_config(&a.config, &ov)?;
    f(&cfg).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
