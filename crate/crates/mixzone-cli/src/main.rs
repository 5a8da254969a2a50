use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use mixzone::sim::PairingPolicy;
use mixzone_cli::commands::{
    cmd_attack, cmd_simulate, cmd_sweep, cmd_validate, cmd_wmap, AttackOverrides, SweepAxis,
};

/// Mix-zone privacy simulator: pseudonym changes guarded by virtual
/// decoy traffic, evaluated against linking adversaries.
#[derive(Parser)]
#[command(name = "mixzone", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Pair decoys along the gate pairs that triggered activation.
    TriggeringPair,
    /// Route every decoy along its entry gate's most likely exit.
    MostProbableExit,
}

impl From<PolicyArg> for PairingPolicy {
    fn from(arg: PolicyArg) -> Self {
        match arg {
            PolicyArg::TriggeringPair => PairingPolicy::TriggeringPair,
            PolicyArg::MostProbableExit => PairingPolicy::MostProbableExit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    /// Uniform per-gate Poisson arrival rate (vehicles per second).
    ArrivalRate,
    /// Mapping-weight threshold for transceiver activation.
    Threshold,
    /// Defense off versus on.
    Activation,
}

impl From<AxisArg> for SweepAxis {
    fn from(arg: AxisArg) -> Self {
        match arg {
            AxisArg::ArrivalRate => SweepAxis::ArrivalRate,
            AxisArg::Threshold => SweepAxis::Threshold,
            AxisArg::Activation => SweepAxis::Activation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and echo the fully resolved configuration.
    Validate { scenario: PathBuf },
    /// Compute the mapping-weight matrix and activation plan for a state.
    Wmap {
        scenario: PathBuf,
        /// Per-gate ingress counts, comma-separated (default: all zero)
        #[arg(long)]
        ingress: Option<String>,
        /// Per-gate egress counts, comma-separated (default: all zero)
        #[arg(long)]
        egress: Option<String>,
        /// Override the scenario's weight threshold
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the simulator and write observation + ground-truth files.
    Simulate {
        scenario: PathBuf,
        /// Output directory for observations.csv and ground_truth.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the scenario seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the decoy pairing policy
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Link a trace blind, then score the attack against ground truth.
    Attack {
        scenario: PathBuf,
        /// Observations file (time_s,gate,lane,pseudonym per line)
        #[arg(long)]
        obs: PathBuf,
        /// Ground-truth sidecar (egress,ingress,kind per line)
        #[arg(long)]
        truth: PathBuf,
        /// Minimum transition probability a candidate pair must have
        #[arg(long)]
        epsilon: Option<f64>,
        /// Extra in-zone dwell seconds widening travel-time supports
        #[arg(long)]
        dwell: Option<f64>,
        /// Oldest ingress (seconds before egress) still considered
        #[arg(long)]
        horizon: Option<f64>,
        /// Append one CSV row to this report file
        #[arg(long)]
        report: Option<PathBuf>,
        /// Row label (defaults to the scenario id)
        #[arg(long)]
        label: Option<String>,
        /// Seed recorded in the report row (defaults to the scenario's)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run simulate+attack across one axis and aggregate per value.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values (activation axis needs none)
        #[arg(long)]
        values: Option<String>,
        /// Seeds per axis value, starting at the scenario seed
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Also write the aggregate rows to this CSV file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    // Die quietly when a downstream pipe closes (`mixzone sweep … | head`),
    // like any other line-oriented tool, instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Wmap { scenario, ingress, egress, threshold } => {
            cmd_wmap(&scenario, ingress.as_deref(), egress.as_deref(), threshold)
        }
        Command::Simulate { scenario, out, seed, policy } => {
            cmd_simulate(&scenario, &out, seed, policy.map(PairingPolicy::from))
        }
        Command::Attack { scenario, obs, truth, epsilon, dwell, horizon, report, label, seed } => {
            cmd_attack(
                &scenario,
                &obs,
                &truth,
                &AttackOverrides { epsilon, dwell, horizon, report, label, seed },
            )
        }
        Command::Sweep { scenario, axis, values, seeds, out } => {
            cmd_sweep(&scenario, axis.into(), values.as_deref(), seeds, out.as_deref())
        }
    };
    if let Err(err) = result {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
