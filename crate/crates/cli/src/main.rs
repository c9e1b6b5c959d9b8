use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hsmargin_cli::{commands, threads_from_env, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "hsmg",
    version,
    about = "Angular-margin loss analyses, training runs and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file (a directory for `train`). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Characteristic function Δ(θ) of each configured curve.
    PlotDelta,
    /// Binary loss against the target angle at several scales.
    PlotQ,
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train on synthetic hypersphere data.
    Train,
    /// Verification and identification metrics for embedding files.
    Eval,
    /// Decision-boundary gap between two weights with a multiplicative margin.
    MarginExp,
    /// Loss at fixed angles for a sweep of scales.
    ScaleLimit,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    eprintln!("# resolved config\n{}", cfg.render());

    let out = cli.out.as_deref();
    match cli.command {
        Command::PlotDelta => commands::plot_delta(&cfg, &mut output(out)?),
        Command::PlotQ => commands::plot_q(&cfg, &mut output(out)?),
        Command::Gradcheck { corrupt } => {
            commands::gradcheck(&cfg, &mut output(out)?, corrupt).map(|_| ())
        }
        Command::Train => {
            let threads = threads_from_env()?;
            let outcome = commands::train(&cfg, threads, out, &mut io::stdout().lock())?;
            eprintln!(
                "final accuracy {} | final loss {} | angular gap {}",
                outcome.history.final_accuracy,
                outcome.history.tail_mean(100),
                outcome.separation.gap()
            );
            Ok(())
        }
        Command::Eval => commands::eval(&cfg, &mut output(out)?),
        Command::MarginExp => commands::margin_exp(&cfg, &mut output(out)?),
        Command::ScaleLimit => commands::scale_limit(&cfg, &mut output(out)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hsmg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
