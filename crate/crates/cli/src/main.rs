//! Command-line front end of the laboratory.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage,
//! schema and input errors, 3 for numerical errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nse_lab::dns::InitialCondition;
use nse_lab::experiment::{configure_threads, run, ExperimentConfig, ResolutionChoice, Stage};
use nse_lab::LabError;

#[derive(Parser, Debug)]
#[command(name = "nse-lab", version, about = "Weak-strong uniqueness and epsilon-regularity laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `small`, `medium`, `default` or an inline JSON resolution object.
    #[arg(long, global = true)]
    resolution: Option<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Initial {
    Zero,
    TaylorGreen,
    Random,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the torus DNS and store its restriction to the unit ball.
    DnsGenerate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        initial: Option<Initial>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        k_max: Option<f64>,
        /// Rescale the data to meet this L4(Q_1) norm.
        #[arg(long)]
        target_l4: Option<f64>,
    },
    /// Select the slice radius and time and store the slice data.
    Slice {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Build the linear part from a field's slice data.
    Lift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        heat_band: Option<f64>,
    },
    /// Very weak Stokes solve with boundary (and optional initial) data.
    StokesSolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        boundary: Option<PathBuf>,
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Picard iteration for the perturbation of a linear part.
    MildSolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ubar: Option<PathBuf>,
        #[arg(long)]
        constants: Option<PathBuf>,
    },
    /// Epsilon-regularity pipeline over a batch of fields.
    EpsregRun {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        fields: Vec<PathBuf>,
        #[arg(long)]
        constants: Option<PathBuf>,
    },
    /// Estimate the constants table.
    ConstantsEstimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the acceptance suite.
    Accept {
        #[command(flatten)]
        common: Common,
    },
}

fn schema(m: impl Into<String>) -> LabError {
    LabError::Schema(m.into())
}

fn required<T>(v: Option<T>, flag: &str, cmd: &str) -> Result<T, LabError> {
    v.ok_or_else(|| schema(format!("{cmd} needs --{flag} or a --config providing it")))
}

/// Loads the configuration file (if any), checks that it configures this
/// subcommand, and applies flag overrides.
fn build_config(cmd: Command) -> Result<ExperimentConfig, LabError> {
    let (common, name) = match &cmd {
        Command::DnsGenerate { common, .. } => (common.clone(), "dns-generate"),
        Command::Slice { common, .. } => (common.clone(), "slice"),
        Command::Lift { common, .. } => (common.clone(), "lift"),
        Command::StokesSolve { common, .. } => (common.clone(), "stokes-solve"),
        Command::MildSolve { common, .. } => (common.clone(), "mild-solve"),
        Command::EpsregRun { common, .. } => (common.clone(), "epsreg-run"),
        Command::ConstantsEstimate { common, .. } => (common.clone(), "constants-estimate"),
        Command::Accept { common } => (common.clone(), "accept"),
    };
    let file = match &common.config {
        Some(p) => {
            let c = ExperimentConfig::from_file(p).map_err(|e| match e {
                LabError::Io(e) => schema(format!("{}: {e}", p.display())),
                e => e,
            })?;
            if c.stage.name() != name {
                return Err(schema(format!("config configures `{}`, not `{name}`", c.stage.name())));
            }
            Some(c)
        }
        None => None,
    };
    let base = file.as_ref().map(|c| c.stage.clone());
    let stage = match cmd {
        Command::DnsGenerate {
            initial,
            amplitude,
            k_max,
            target_l4,
            ..
        } => {
            let (mut init, mut target) = match base {
                Some(Stage::DnsGenerate { initial, target_l4 }) => (Some(initial), target_l4),
                _ => (None, None),
            };
            if let Some(kind) = initial {
                let amp = amplitude.unwrap_or(0.3);
                init = Some(match kind {
                    Initial::Zero => InitialCondition::Zero,
                    Initial::TaylorGreen => InitialCondition::TaylorGreen { amplitude: amp },
                    Initial::Random => InitialCondition::Random {
                        k_max: k_max.unwrap_or(2.5),
                        amplitude: amp,
                    },
                });
            } else if amplitude.is_some() || k_max.is_some() {
                init = match (init, amplitude) {
                    (Some(InitialCondition::TaylorGreen { amplitude: a }), x) => Some(InitialCondition::TaylorGreen {
                        amplitude: x.unwrap_or(a),
                    }),
                    (Some(InitialCondition::Random { k_max: k, amplitude: a }), x) => Some(InitialCondition::Random {
                        k_max: k_max.unwrap_or(k),
                        amplitude: x.unwrap_or(a),
                    }),
                    _ => return Err(schema("--amplitude and --k-max need --initial taylor-green or random")),
                };
            }
            if target_l4.is_some() {
                target = target_l4;
            }
            Stage::DnsGenerate {
                initial: required(init, "initial", name)?,
                target_l4: target,
            }
        }
        Command::Slice { field, .. } => {
            let old = match base {
                Some(Stage::Slice { field }) => Some(field),
                _ => None,
            };
            Stage::Slice {
                field: required(field.or(old), "field", name)?,
            }
        }
        Command::Lift { field, heat_band, .. } => {
            let (old, mut lift) = match base {
                Some(Stage::Lift { field, lift }) => (Some(field), lift),
                _ => (None, Default::default()),
            };
            if let Some(b) = heat_band {
                lift.heat_band = b;
            }
            Stage::Lift {
                field: required(field.or(old), "field", name)?,
                lift,
            }
        }
        Command::StokesSolve { boundary, initial, .. } => {
            let (old_b, old_i) = match base {
                Some(Stage::StokesSolve { boundary, initial }) => (Some(boundary), initial),
                _ => (None, None),
            };
            Stage::StokesSolve {
                boundary: required(boundary.or(old_b), "boundary", name)?,
                initial: initial.or(old_i),
            }
        }
        Command::MildSolve { ubar, constants, .. } => {
            let (old_u, old_c, it, tol) = match base {
                Some(Stage::MildSolve {
                    ubar,
                    constants,
                    max_iterations,
                    tolerance,
                }) => (Some(ubar), constants, max_iterations, tolerance),
                _ => (None, None, 50, 1e-8),
            };
            Stage::MildSolve {
                ubar: required(ubar.or(old_u), "ubar", name)?,
                constants: constants.or(old_c),
                max_iterations: it,
                tolerance: tol,
            }
        }
        Command::EpsregRun { fields, constants, .. } => {
            let (old_f, old_c, pipeline) = match base {
                Some(Stage::EpsregRun {
                    fields,
                    constants,
                    pipeline,
                }) => (fields, constants, pipeline),
                _ => (Vec::new(), None, Default::default()),
            };
            Stage::EpsregRun {
                fields: if fields.is_empty() { old_f } else { fields },
                constants: constants.or(old_c),
                pipeline,
            }
        }
        Command::ConstantsEstimate { samples, .. } => {
            let old = match base {
                Some(Stage::ConstantsEstimate { samples }) => samples,
                _ => 200,
            };
            Stage::ConstantsEstimate {
                samples: samples.unwrap_or(old),
            }
        }
        Command::Accept { .. } => match base {
            Some(s @ Stage::Accept { .. }) => s,
            _ => Stage::Accept { counts: Default::default() },
        },
    };
    let mut cfg = file.unwrap_or_else(|| ExperimentConfig::new(stage.clone()));
    cfg.stage = stage;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = common.out {
        cfg.out = o;
    }
    if let Some(r) = common.resolution {
        cfg.resolution = ResolutionChoice::parse(&r)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads()
        .and_then(|_| build_config(cli.command))
        .and_then(|cfg| Ok((run(&cfg)?, cfg.out)));
    match result {
        Ok((outcome, out)) => {
            for line in &outcome.log {
                println!("{line}");
            }
            let r = &outcome.report;
            let report = out.join("report.json");
            let failed: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            println!(
                "{}: {} of {} checks passed; report in {}",
                r.command,
                r.checks.len() - failed.len(),
                r.checks.len(),
                report.display()
            );
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", failed.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
