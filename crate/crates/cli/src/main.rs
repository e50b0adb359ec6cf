use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use poscon::scenario::RunMode;
use poscon_cli::{
    cmd_check, cmd_reproduce_paper, cmd_simulate, cmd_synthesize, load_scenario, read_gains, render_audit,
    render_synthesis, write_json, CliError, DisturbanceChoice, Overrides, ReproduceOptions, SimulateOptions,
    SynthesizeOptions, EXIT_FAILURE, EXIT_OK,
};

/// Cooperative output regulation of positive multi-agent systems.
#[derive(Parser)]
#[command(name = "poscon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    State,
    Output,
    Relaxed,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::State => RunMode::State,
            Mode::Output => RunMode::Output,
            Mode::Relaxed => RunMode::Relaxed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Disturbance {
    /// Signal from the scenario file.
    Scenario,
    Zero,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML). The built-in example is used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            horizon: self.horizon,
            step: self.step,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the scenario and solve the regulator equations.
    Check {
        #[command(flatten)]
        common: Common,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Search certificates and compute gains.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "output")]
        mode: Mode,
        #[arg(long)]
        gamma: Option<f64>,
        /// Report the smallest feasible gamma per agent.
        #[arg(long)]
        gamma_bisect: bool,
        /// Ignore Q/P entries pinned in the scenario.
        #[arg(long)]
        no_pins: bool,
        #[arg(long, short, default_value = "gains.json")]
        out: PathBuf,
    },
    /// Integrate the closed loop and audit the trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Gain file written by `synthesize`.
        #[arg(long, short)]
        gains: PathBuf,
        #[arg(long, value_enum, default_value = "scenario")]
        disturbance: Disturbance,
        /// Level for the L2 audit (defaults to the gain file's).
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild the eight-agent example end to end and compare with the published values.
    ReproducePaper {
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gamma_bisect: bool,
        /// Use the state-feedback controller instead of the observer-based one.
        #[arg(long)]
        state_feedback: bool,
        #[arg(long, short, default_value = "reproduce")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Check { common, json } => {
            let s = load_scenario(common.config.as_deref(), &common.overrides())?;
            let report = cmd_check(&s);
            print!("{}", report.render());
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Synthesize {
            common,
            mode,
            gamma,
            gamma_bisect,
            no_pins,
            out,
        } => {
            let s = load_scenario(common.config.as_deref(), &common.overrides())?;
            let report = cmd_synthesize(
                &s,
                &SynthesizeOptions {
                    mode: mode.into(),
                    gamma,
                    bisect: gamma_bisect,
                    use_pins: !no_pins,
                },
            );
            print!("{}", render_synthesis(&report));
            match &report.gains {
                Some(g) if report.succeeded() => {
                    write_json(&out, g)?;
                    println!("wrote {}", out.display());
                    Ok(EXIT_OK)
                }
                _ => Ok(EXIT_FAILURE),
            }
        }
        Command::Simulate {
            common,
            gains,
            disturbance,
            gamma,
            out,
        } => {
            let s = load_scenario(common.config.as_deref(), &common.overrides())?;
            let g = read_gains(&gains)?;
            let options = SimulateOptions {
                disturbance: match disturbance {
                    Disturbance::Scenario => DisturbanceChoice::Scenario,
                    Disturbance::Zero => DisturbanceChoice::Zero,
                },
                gamma,
            };
            let summary = cmd_simulate(&s, &g, &options, &out)?;
            print!("{}", render_audit(&summary));
            println!("wrote {}", out.display());
            Ok(if summary.passed { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::ReproducePaper {
            horizon,
            step,
            seed,
            gamma_bisect,
            state_feedback,
            out,
        } => {
            let options = ReproduceOptions {
                gamma_bisect,
                state_feedback,
                overrides: Overrides { horizon, step, seed },
            };
            let summary = cmd_reproduce_paper(&out, &options)?;
            println!(
                "largest delta vs published values: {:.2e}; nominal run {}; disturbed run {}",
                summary.max_delta,
                if summary.nominal.passed { "PASS" } else { "FAIL" },
                if summary.disturbed.passed { "PASS" } else { "FAIL" }
            );
            println!("wrote {}", out.join("summary.md").display());
            Ok(if summary.passed { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
