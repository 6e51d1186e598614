use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use selfonn_cli::config::{self, Overrides, Run};
use selfonn_cli::{commands, CliError, EXIT_OK};

#[derive(Parser, Debug)]
#[command(name = "selfonn", version, about = "Train and inspect self-organized operational neural networks")]
struct Cli {
    /// Overrides `training.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `training.runs`.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Single precision (not accepted by gradcheck).
    #[arg(long, global = true)]
    f32: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train every selected fold of a run config.
    Train { config: PathBuf },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Test fixture: corrupt one analytic gradient.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Print parameter and MAC counts per layer.
    Cost { config: PathBuf },
    /// Train several configs on the same folds and tabulate the results.
    Compare {
        #[arg(num_args = 2.., required = true)]
        configs: Vec<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured dataset.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn overrides(cli: &Cli) -> Result<Overrides, CliError> {
    let output_dir = std::env::var_os("SELFONN_OUT").map(PathBuf::from);
    Ok(Overrides {
        seed: cli.seed,
        runs: cli.runs,
        output_dir,
    })
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SELFONN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("SELFONN_THREADS: expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("SELFONN_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let ov = overrides(&cli)?;
    let load = |p: &PathBuf| -> Result<Run, CliError> { config::load(p, &ov) };
    match &cli.cmd {
        Cmd::Train { config } => {
            commands::train(&load(config)?, cli.f32)?;
        }
        Cmd::Gradcheck {
            config,
            samples,
            corrupt_gradient,
        } => {
            if cli.f32 {
                return Err(CliError::Config("gradcheck runs in double precision only; drop --f32".into()));
            }
            commands::gradcheck(&load(config)?, *samples, *corrupt_gradient)?;
        }
        Cmd::Cost { config } => print!("{}", commands::cost_table(&load(config)?)?),
        Cmd::Compare { configs } => {
            let runs = configs.iter().map(load).collect::<Result<Vec<_>, _>>()?;
            print!("{}", commands::compare(&runs, cli.f32)?);
        }
        Cmd::Eval { config, checkpoint } => {
            if !checkpoint.is_file() {
                return Err(CliError::Config(format!("{}: no such checkpoint", checkpoint.display())));
            }
            commands::eval(&load(config)?, checkpoint, cli.f32)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
