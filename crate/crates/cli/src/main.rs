//! `quadmimic`: synthesize reference motions, fit rhythmic DMPs, run
//! closed-loop rollouts, optimize swing heights and compare controllers.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 runtime divergence.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadmimic_core::motion::GaitKind;

use config::Overrides;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => f.write_str(m),
        }
    }
}

impl From<quadmimic_core::Error> for CliError {
    fn from(e: quadmimic_core::Error) -> Self {
        use quadmimic_core::Error as E;
        match e {
            E::Spec { .. } => CliError::Usage(e.to_string()),
            E::Diverged { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "quadmimic", version, about = "Quadruped motion imitation toolkit")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Robot description (TOML). Defaults to the built-in A1-class model.
    #[arg(long, global = true, value_name = "FILE")]
    robot: Option<PathBuf>,
    /// Output directory [default: $QUADMIC_OUT, else the current directory].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Episode length, s.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Std-dev of the initial CoM velocity perturbation, m/s.
    #[arg(long, global = true)]
    init_noise: Option<f64>,
    /// Evaluate candidates one at a time instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize one cycle of a gait and write it as a motion CSV.
    Synth(SynthArgs),
    /// Fit 24 rhythmic DMPs to a cyclic motion.
    Fit(FitArgs),
    /// Track a motion in closed loop and report the imitation reward.
    Rollout(RolloutArgs),
    /// Optimize the swing-height DMP parameters of a motion with CMA-ES.
    Optimize(OptimizeArgs),
    /// MBC vs MBC-DMP vs Raibert reward for each motion (CSV + SVG).
    Compare(CompareArgs),
    /// Concatenate motions seamlessly and jointly optimize their swing heights.
    Stitch(StitchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_gait)]
    pub gait: GaitKind,
    /// Forward speed (lateral for side-step), m/s.
    #[arg(long, allow_negative_numbers = true)]
    pub speed: Option<f64>,
    /// rad/s, turn only.
    #[arg(long, allow_negative_numbers = true)]
    pub yaw_rate: Option<f64>,
    /// m.
    #[arg(long, allow_negative_numbers = true)]
    pub stance_height: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub duty_factor: Option<f64>,
    /// Hz.
    #[arg(long, allow_negative_numbers = true)]
    pub step_frequency: Option<f64>,
    /// Swing apex height, m.
    #[arg(long, allow_negative_numbers = true)]
    pub clearance: Option<f64>,
    /// Frame spacing, s.
    #[arg(long, allow_negative_numbers = true)]
    pub frame_dt: Option<f64>,
    /// Output file [default: <out>/<gait>.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_gait(s: &str) -> Result<GaitKind, String> {
    s.parse().map_err(|e: quadmimic_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub motion: PathBuf,
    /// DMP parameter file [default: <out>/<stem>.dmp.toml].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Per-channel reconstruction report [default: <out>/<stem>.fit.csv].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Mbc,
    Raibert,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    pub motion: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., default_value = "mbc")]
    pub controller: Vec<ControllerKind>,
    /// Replay the reference as the robot state (perfect tracking).
    #[arg(long)]
    pub oracle_replay: bool,
    /// Write per-tick logs to <out>/<stem>.<controller>.log.csv.
    #[arg(long)]
    pub log: bool,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    pub motion: PathBuf,
    /// CMA-ES generations.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(required = true, num_args = 1..)]
    pub motions: Vec<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Report name inside the output directory.
    #[arg(long, default_value = "compare")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct StitchArgs {
    #[arg(required = true, num_args = 1..)]
    pub motions: Vec<PathBuf>,
    /// Cycles of each input, comma separated [default: 1 each].
    #[arg(long, value_delimiter = ',')]
    pub cycles: Vec<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Only stitch; skip the DMP fit and optimization.
    #[arg(long)]
    pub no_optimize: bool,
    /// Output file [default: <out>/stitched.csv].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let overrides = Overrides {
        config: cli.config,
        robot: cli.robot,
        output_dir: cli.out,
        seed: cli.seed,
        duration: cli.duration,
        init_noise: cli.init_noise,
        sequential: cli.sequential,
    };
    let result = config::RunConfig::load(&overrides).and_then(|cfg| match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Rollout(a) => commands::rollout(&cfg, a),
        Command::Optimize(a) => commands::optimize(&cfg, a),
        Command::Compare(a) => commands::compare(&cfg, a),
        Command::Stitch(a) => commands::stitch(&cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use quadmimic_core::Error as E;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let spec = E::Spec {
            name: "speed".into(),
            message: "bad".into(),
        };
        let diverged = E::Diverged {
            time: 1.0,
            what: "CoM position".into(),
        };
        assert_eq!(CliError::from(spec).exit_code(), 1);
        assert_eq!(CliError::from(E::NotCyclic("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(E::Schema("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(diverged).exit_code(), 3);
    }
}
