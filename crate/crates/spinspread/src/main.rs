use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinspread::cli::{self, RunConfig};
use spinspread::Error;

/// Stochastic and exact simulators for operator spreading in power-law
/// interacting spin systems.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; sections override the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in parameter set: adamantane-DQ, adamantane-YY, or krb.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed for all stochastic components.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo operator spreading on a lattice.
    Spread,
    /// Cluster-size/coherence-order master equation.
    Kn,
    /// Exact small-system quantum simulation.
    Oracle,
    /// Coherence-spectrum analysis of a g_n CSV.
    Analyze,
    /// Two-parameter fit of a simulated curve to experimental data.
    Fit,
    /// Growth-regime table for a list of interaction exponents.
    Regimes,
}

fn overlay(base: RunConfig, top: RunConfig) -> RunConfig {
    RunConfig {
        lattice: top.lattice.or(base.lattice),
        kernel: top.kernel.or(base.kernel),
        spread: top.spread.or(base.spread),
        kn: top.kn.or(base.kn),
        oracle: top.oracle.or(base.oracle),
        analyze: top.analyze.or(base.analyze),
        fit: top.fit.or(base.fit),
        regimes: top.regimes.or(base.regimes),
    }
}

fn execute(args: &Args) -> spinspread::Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let mut config = RunConfig::default();
    if let Some(name) = &args.preset {
        config = cli::preset(name)?;
    }
    if let Some(path) = &args.config {
        config = overlay(config, RunConfig::from_file(path)?);
    }
    let sub = match args.command {
        Command::Spread => cli::Subcommand::Spread,
        Command::Kn => cli::Subcommand::Kn,
        Command::Oracle => cli::Subcommand::Oracle,
        Command::Analyze => cli::Subcommand::Analyze,
        Command::Fit => cli::Subcommand::Fit,
        Command::Regimes => cli::Subcommand::Regimes,
    };
    cli::run(sub, &config, args.seed, &args.out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({ "error": err.to_string() });
            eprintln!("{record}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
