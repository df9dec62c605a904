//! Command-line front end: parses flags, loads the experiment config, and
//! dispatches to the subcommand runners. Exit codes: 0 success, 1 validation
//! error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use wpnrd::circuit::SwitchEvent;
use wpnrd::config::ExperimentConfig;
use wpnrd::error::Error;
use wpnrd::runner::{self, RunContext, Subcommand};

#[derive(Parser)]
#[command(
    name = "wpnrd",
    version,
    about = "Waveguide photon-number-resolving detector simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Absorption probabilities versus overlap length (CSV).
    Absorb {
        /// Comma-separated overlap lengths in micrometres.
        #[arg(long, value_delimiter = ',')]
        lengths_um: Option<Vec<f64>>,
    },
    /// Static IV characteristic (CSV).
    Iv {
        #[arg(long, default_value_t = 20.0)]
        i_max_ua: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Transient output pulse for a list of switch events (CSV).
    Pulse {
        /// Events as time_ns:wire pairs, e.g. `0:0,0:1,5.5:2`.
        #[arg(long, value_delimiter = ',')]
        events: Option<Vec<String>>,
        /// Apply the amplifier band-pass to the trace.
        #[arg(long)]
        filtered: bool,
    },
    /// Monte Carlo threshold rates over a photon-number sweep (CSV + JSON).
    Mc {
        /// Comma-separated mean photons per pulse; log sweep when omitted.
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100_000)]
        shots: u64,
    },
    /// P(m|n) matrix and fidelity ledger (CSV + JSON).
    Fidelity {
        #[arg(long, default_value_t = 6)]
        n_max: usize,
        /// Photon number the ledger is evaluated for.
        #[arg(long, default_value_t = 2)]
        ledger_n: usize,
    },
    /// Simulated pulse-height histogram with multi-Gaussian fit (CSV + JSON).
    Histogram {
        #[arg(long, default_value_t = 30_000)]
        shots: u64,
        #[arg(long, default_value_t = 120)]
        bins: usize,
    },
}

fn parse_events(specs: &[String]) -> Result<Vec<SwitchEvent>, Error> {
    let mut events = Vec::with_capacity(specs.len());
    for spec in specs {
        let (time, wire) = spec
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("event `{spec}` is not time_ns:wire")))?;
        let time_ns: f64 = time
            .parse()
            .map_err(|_| Error::invalid(format!("bad event time `{time}`")))?;
        let wire: usize = wire
            .parse()
            .map_err(|_| Error::invalid(format!("bad wire index `{wire}`")))?;
        events.push(SwitchEvent::new(time_ns * 1e-9, wire));
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(events)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Error> {
    let mut config = match &cli.common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let ctx = RunContext::new(config, &cli.common.out);
    let cmd = match &cli.command {
        Command::Absorb { lengths_um } => Subcommand::Absorb { lengths_um: lengths_um.clone() },
        Command::Iv { i_max_ua, points } => Subcommand::Iv { i_max_ua: *i_max_ua, points: *points },
        Command::Pulse { events, filtered } => Subcommand::Pulse {
            events: events.as_deref().map(parse_events).transpose()?,
            filtered: *filtered,
        },
        Command::Mc { mu, shots } => Subcommand::Mc { mus: mu.clone(), shots: *shots },
        Command::Fidelity { n_max, ledger_n } => {
            Subcommand::Fidelity { n_max: *n_max, ledger_n: *ledger_n }
        }
        Command::Histogram { shots, bins } => {
            Subcommand::Histogram { shots: *shots, bins: *bins }
        }
    };
    runner::run_subcommand(&cmd, &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for path in paths {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
