//! `annuity`: solve, simulate and check optimal annuitization models.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use annuity_core::case_study::{reproduce, CaseStudyOptions};
use annuity_core::model::presets::{single_shock, Scenario};
use annuity_core::model::{validate_config, ModelConfig};
use annuity_core::montecarlo::{evaluate_policy_at, optimality_probe_policy, SimConfig, SimModel, DEFAULT_PATHS};
use annuity_core::mortality::{calibrate, CalibrationMode};
use annuity_core::solver::{solve_all, GridSpec, Solution, SolveOptions, DEFAULT_GRID_POINTS};
use annuity_core::sweep::{run_sweep, SweepParameter, SweepSpec};
use annuity_core::verify::{run_checks, run_suite};

use output::{Format, Sink};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] annuity_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for an ill-posed model, 3 for solver failures.
    pub fn exit_code(&self) -> u8 {
        use annuity_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Core(E::IllPosed { .. }) => 2,
            CliError::Core(
                E::InvalidParam(_) | E::InvalidDistribution(_) | E::TreeTooLarge { .. } | E::UnknownStrategy { .. },
            ) => 1,
            CliError::Core(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "annuity",
    version,
    about = "Optimal annuitization thresholds under jumping mortality"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    PositiveFee,
    NegativeFee,
}

#[derive(Args)]
struct Common {
    /// Model configuration (JSON). Without it the built-in scenario is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in scenario used when no --config is given.
    #[arg(long, global = true, value_enum, default_value = "positive-fee")]
    scenario: ScenarioArg,
    #[arg(long, global = true, default_value_t = 20261016)]
    seed: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Lower end of the wealth grid (default 1e-2 times the wealth scale).
    #[arg(long, global = true)]
    x_lo: Option<f64>,
    /// Upper end of the wealth grid (default 1e3 times the wealth scale).
    #[arg(long, global = true)]
    x_hi: Option<f64>,
    /// Simulated paths (an antithetic pair counts as two).
    #[arg(long, global = true, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, global = true, default_value_t = annuity_core::montecarlo::DEFAULT_DT)]
    dt: f64,
    /// Write data here instead of stdout; the summary then goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Registered stage solver: auto, majorant or closed-form.
    #[arg(long, global = true, default_value = "auto")]
    stage_solver: String,
    /// Registered Monte Carlo estimator: killed, integrated or cox.
    #[arg(long, global = true, default_value = "killed")]
    estimator: String,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every mortality state and write value tables.
    Solve,
    /// Calibrate a mortality rate to a target life expectancy.
    Calibrate {
        #[arg(long)]
        target: f64,
        /// baseline (initial mortality of the tree) or objective (insurer's constant force).
        #[arg(long, default_value = "baseline")]
        mode: String,
    },
    /// Re-solve over a list of values of one parameter.
    Sweep {
        /// delta_mu_hat, p, lambda1, nu, K or sigma.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values (defaults depend on the parameter).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Monte Carlo value of the solver's policy at given start wealths.
    Simulate {
        /// Comma-separated start wealths (default: the suite's spot wealths).
        #[arg(long, value_delimiter = ',')]
        x0: Vec<f64>,
        /// Multiply every threshold of the policy before simulating.
        #[arg(long, default_value_t = 1.0)]
        threshold_scale: f64,
        /// Also run the shifted-threshold optimality probe.
        #[arg(long)]
        probe: bool,
        #[arg(long, default_value_t = 0.1)]
        perturbation: f64,
    },
    /// Run the invariant suite on the solution.
    Verify {
        /// Leave out the Monte Carlo check.
        #[arg(long)]
        no_mc: bool,
    },
    /// Both case-study scenarios against the published reference values.
    ReproducePaper {
        /// Skip the Monte Carlo arbitration of flagged rows.
        #[arg(long)]
        no_arbitration: bool,
    },
}

impl Common {
    fn model(&self) -> Result<ModelConfig, CliError> {
        let cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                ModelConfig::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => single_shock(match self.scenario {
                ScenarioArg::PositiveFee => Scenario::PositiveFee,
                ScenarioArg::NegativeFee => Scenario::NegativeFee,
            }),
        };
        Ok(validate_config(&cfg)?)
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            grid: GridSpec {
                n_points: self.grid_points,
                x_lo: self.x_lo,
                x_hi: self.x_hi,
            },
            stage_solver: self.stage_solver.clone(),
        }
    }

    fn sim(&self) -> SimConfig {
        SimConfig {
            n_paths: self.paths,
            dt: self.dt,
            seed: self.seed,
            estimator: self.estimator.clone(),
            ..SimConfig::default()
        }
    }

    fn sink(&self) -> Sink {
        Sink::new(self.out.clone())
    }
}

fn solve(common: &Common) -> Result<(ModelConfig, Solution), CliError> {
    let cfg = common.model()?;
    let sol = solve_all(&cfg, &common.solve_options())?;
    Ok((cfg, sol))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    let sink = common.sink();
    match cli.command {
        Command::Solve => {
            let (_, sol) = solve(common)?;
            sink.summary(&output::solution_table(&sol))?;
            match common.format {
                Format::Csv => sink.csv(|w| output::write_value_table(w, &sol))?,
                Format::Json => sink.json(&output::solution_json(&sol))?,
            }
        }
        Command::Calibrate { target, mode } => {
            let mode: CalibrationMode = mode.parse()?;
            let cfg = common.model()?;
            let mu = calibrate(target, mode, &cfg)?;
            sink.summary(&format!("{mode:?} mortality for life expectancy {target}: {mu:.9}\n"))?;
            match common.format {
                Format::Csv => sink.csv(|w| {
                    w.write_record(["mode", "target", "mu"])?;
                    w.write_record([format!("{mode:?}").to_lowercase(), output::num(target), output::num(mu)])
                })?,
                Format::Json => sink.json(
                    &serde_json::json!({ "mode": format!("{mode:?}").to_lowercase(), "target": target, "mu": mu }),
                )?,
            }
        }
        Command::Sweep { parameter, values } => {
            let cfg = common.model()?;
            let parameter: SweepParameter = parameter.parse()?;
            let spec = if values.is_empty() {
                SweepSpec::with_defaults(parameter)
            } else {
                SweepSpec::new(parameter, values)?
            };
            let rows = run_sweep(&cfg, &spec, &common.solve_options());
            sink.summary(&output::sweep_table(&rows))?;
            match common.format {
                Format::Csv => sink.csv(|w| output::write_sweep(w, &rows))?,
                Format::Json => sink.json(&rows)?,
            }
        }
        Command::Simulate {
            x0,
            threshold_scale,
            probe,
            perturbation,
        } => {
            let (cfg, sol) = solve(common)?;
            let sim = common.sim();
            let model = SimModel::new(&cfg)?;
            let policy = sol.policy().scaled(threshold_scale);
            let x0 = if x0.is_empty() {
                annuity_core::verify::spot_wealths(&policy.rule(0), cfg.market.wealth_scale())
            } else {
                x0
            };
            let runs = evaluate_policy_at(&model, &sim, &policy, &x0)?;
            let probe = if probe {
                Some(optimality_probe_policy(&model, &sim, &policy, perturbation, None)?)
            } else {
                None
            };
            sink.summary(&output::simulation_table(&sol, &runs, probe.as_ref()))?;
            match common.format {
                Format::Csv => sink.csv(|w| output::write_simulation(w, &sol, &runs))?,
                Format::Json => sink.json(&serde_json::json!({ "runs": runs, "probe": probe }))?,
            }
        }
        Command::Verify { no_mc } => {
            let (cfg, sol) = solve(common)?;
            let report = if no_mc {
                run_checks(&cfg, &sol, None)?
            } else {
                run_suite(&cfg, &sol, &common.sim())?
            };
            let passed = report.records.iter().filter(|r| r.pass).count();
            sink.summary(&format!(
                "{}{passed}/{} checks passed\n",
                report.table(),
                report.records.len()
            ))?;
            match common.format {
                Format::Csv => sink.csv(|w| output::write_verify(w, &report))?,
                Format::Json => sink.json(&report)?,
            }
        }
        Command::ReproducePaper { no_arbitration } => {
            let options = CaseStudyOptions {
                solve: common.solve_options(),
                sim: common.sim(),
                arbitrate: !no_arbitration,
                ..CaseStudyOptions::default()
            };
            let report = reproduce(&options)?;
            sink.summary(&report.table())?;
            match common.format {
                Format::Csv => sink.csv(|w| output::write_reference_rows(w, &report))?,
                Format::Json => sink.json(&report)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Downstream closed the pipe (e.g. `| head`); not worth reporting.
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
