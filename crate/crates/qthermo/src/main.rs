use clap::{Args, Parser, Subcommand};
use qthermo::cli::{self, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Squeezed-light thermoreflective imaging simulator.
#[derive(Parser)]
#[command(name = "qthermo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON); a manifest from a previous run also works.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = rayon default). Results are identical for any
    /// thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Squeezing-vs-loss surfaces and the conjugate-loss optimizer ridge.
    Optimize(CommonArgs),
    /// Raster-scan heat map (CSV + PGM + ground truth).
    Scan(CommonArgs),
    /// Cycle-resolved transients with double-exponential fits and variance
    /// insets.
    Transient(CommonArgs),
    /// Intensity-noise spectrum and resolution-vs-averaging table.
    Noise(CommonArgs),
    /// Fit a recorded transient curve CSV.
    Fit {
        /// Input CSV: `time_us,dT_mK[,...]` or any two-column numeric table.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for fit.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize(args) => run_with(args, "optimize"),
        Command::Scan(args) => run_with(args, "scan"),
        Command::Transient(args) => run_with(args, "transient"),
        Command::Noise(args) => run_with(args, "noise"),
        Command::Fit { input, out } => cli::cmd_fit(input, out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run_with(args: &CommonArgs, command: &str) -> qthermo::Result<i32> {
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        threads: args.threads,
    };
    cli::run(command, &args.config, &overrides)
}
