//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 when an experiment's threshold checks fail
//! (or on runtime errors), 2 on configuration errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use pipe_core::baselines::{tps_eval, tps_fit};
use pipe_core::dynamics::{builtin_system, BuiltinSystem, Mode, SafeSet, SdeSystem};
use pipe_core::montecarlo::dataset::{read_dataset, write_dataset};
use pipe_core::montecarlo::{estimate_grid, GridSpec};
use pipe_core::netcore::checkpoint::{read_checkpoint, write_checkpoint};
use pipe_core::training::{
    config_io::parse_train_config, predict_grid, predict_gradient_grid, sample_collocation,
    train, Region,
};

use pipe_harness::experiments::{self, ExperimentId};
use pipe_harness::report::write_plot_csv;
use pipe_harness::{deterministic_mode, systems, HarnessError, RunContext};

#[derive(Parser)]
#[command(name = "pipe", about = "Risk-probability estimation toolkit", version)]
struct Cli {
    /// Flat key = value configuration file (overrides defaults, is
    /// overridden by explicit flags where both apply).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stream used by a run derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores). `PIPE_DETERMINISTIC=1` forces 1.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Emit per-figure long-format CSVs alongside reports.
    #[arg(long, global = true)]
    plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct LatticeArgs {
    /// Per-dimension lower state bounds, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x_lo: Vec<f64>,
    /// Per-dimension upper state bounds, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x_hi: Vec<f64>,
    /// Per-dimension lattice counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    x_steps: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    t_lo: f64,
    #[arg(long, default_value_t = 10.0)]
    t_hi: f64,
    #[arg(long, default_value_t = 21)]
    t_steps: usize,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lambda: f64,
}

impl LatticeArgs {
    fn spec(&self) -> Result<GridSpec, HarnessError> {
        let spec = GridSpec {
            state_lo: self.x_lo.clone(),
            state_hi: self.x_hi.clone(),
            state_steps: self.x_steps.clone(),
            t_lo: self.t_lo,
            t_hi: self.t_hi,
            t_steps: self.t_steps,
            lambda: self.lambda,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a Monte Carlo risk-probability grid and write it as a
    /// dataset CSV.
    McGrid {
        /// drift1d | closedloop1d | cartpendulum | pendulum3
        #[arg(long, default_value = "drift1d")]
        system: String,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[command(flatten)]
        lattice: LatticeArgs,
    },
    /// Train the predictor on dataset CSVs against a built-in PDE problem.
    Train {
        /// drift1d | drift1d-lambda | closedloop1d | pendulum3
        #[arg(long, default_value = "drift1d")]
        problem: String,
        /// Dataset CSVs (repeatable).
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Restrict data rows per dimension to `x in [lo, hi]`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        data_x_lo: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        data_x_hi: Vec<f64>,
    },
    /// Evaluate a checkpoint on a lattice; writes a dataset CSV of clamped
    /// predictions (or a plot CSV of raw derivatives with --gradient).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Spatial axis for derivative output.
        #[arg(long)]
        gradient: Option<usize>,
        /// safety | recovery (column value for the output dataset).
        #[arg(long, default_value = "recovery")]
        mode: String,
        #[command(flatten)]
        lattice: LatticeArgs,
    },
    /// Fit a thin-plate spline to a dataset and evaluate it on a lattice.
    Tps {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        lattice: LatticeArgs,
    },
    /// Write the closed-form recovery probability on a lattice.
    Oracle {
        #[command(flatten)]
        lattice: LatticeArgs,
    },
    /// Run one named experiment end to end.
    Experiment {
        /// generalization | efficiency | adaptation | gradient | pendulum |
        /// closedloop
        id: String,
    },
}

fn parse_overrides(path: &PathBuf) -> Result<Vec<(String, String)>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut overrides = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected `key = value`", index + 1))
        })?;
        overrides.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(overrides)
}

fn cli_system(name: &str) -> Result<(SdeSystem, SafeSet), HarnessError> {
    match name {
        "pendulum3" => Ok(systems::reduced_pendulum()),
        other => {
            let id = BuiltinSystem::from_str(other).map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(builtin_system(id))
        }
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::McGrid { system, n, dt, lattice } => {
            let (system, safe_set) = cli_system(&system)?;
            let spec = lattice.spec()?;
            let estimate = estimate_grid(&system, &safe_set, &spec, n, dt, cli.seed)?;
            for failure in &estimate.failures {
                eprintln!("cell {} failed: {}", failure.cell_index, failure.message);
            }
            let path = cli.out.join("dataset.csv");
            write_dataset(&estimate.grid, &path)?;
            println!("wrote {} ({} cells)", path.display(), estimate.grid.values.len());
            Ok(true)
        }
        Command::Train { problem, data, data_x_lo, data_x_hi } => {
            let spec = match problem.as_str() {
                "drift1d" => systems::drift1d_spec(1.0, None),
                "drift1d-lambda" => systems::drift1d_spec(1.0, Some((0.0, 2.0))),
                "closedloop1d" => systems::closedloop_spec(),
                "pendulum3" => systems::pendulum_spec(),
                other => {
                    return Err(HarnessError::Config(format!("unknown problem `{other}`")))
                }
            };
            let config_path = cli
                .config
                .as_ref()
                .ok_or_else(|| HarnessError::Config("train requires --config".into()))?;
            let (mut config, domain) = parse_train_config(&fs::read_to_string(config_path)?)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            if domain != spec.domain {
                return Err(HarnessError::Config(
                    "config domain does not match the chosen problem".into(),
                ));
            }
            config.init_seed = pipe_core::rng::derive_seed(cli.seed, 2);
            config.sample_seed = pipe_core::rng::derive_seed(cli.seed, 3);
            let datasets = data
                .iter()
                .map(|p| read_dataset(p))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&_> = datasets.iter().collect();
            let region = if data_x_lo.is_empty() {
                None
            } else {
                Some(Region {
                    state_lo: data_x_lo,
                    state_hi: data_x_hi,
                    t_lo: 0.0,
                    t_hi: spec.domain.t_hi,
                })
            };
            let sets =
                sample_collocation(&spec, config.counts, config.sample_seed, &refs, region.as_ref())?;
            let (params, report) = train(&config, &sets, &spec)?;
            write_checkpoint(&params, &cli.out.join("checkpoint.txt"))?;
            fs::write(
                cli.out.join("loss_history.csv"),
                pipe_core::training::config_io::render_loss_history(&report.history),
            )?;
            println!(
                "trained {} epochs, final loss {:.6e} (wall {:.1}s)",
                report.history.len(),
                report.history.last().map(|b| b.total).unwrap_or(f64::NAN),
                report.wall_seconds
            );
            Ok(true)
        }
        Command::Eval { checkpoint, gradient, mode, lattice } => {
            let params = read_checkpoint(&checkpoint)?;
            let spec = lattice.spec()?;
            match gradient {
                None => {
                    let mode =
                        Mode::from_str(&mode).map_err(HarnessError::Config)?;
                    let grid = predict_grid(&params, &spec, mode)?;
                    let path = cli.out.join("predictions.csv");
                    write_dataset(&grid, &path)?;
                    println!("wrote {}", path.display());
                }
                Some(axis) => {
                    let grad = predict_gradient_grid(&params, &spec, axis)?;
                    let path = cli.out.join(format!("gradient_axis{axis}.csv"));
                    let spec_ref = spec.clone();
                    write_plot_csv(
                        &path,
                        "series,x,T,value",
                        (0..spec_ref.cell_count()).map(move |cell| {
                            let (state, t) = spec_ref.point(cell);
                            ("gradient".to_string(), state[axis], t, grad.values[cell])
                        }),
                    )?;
                    println!("wrote {}", path.display());
                }
            }
            Ok(true)
        }
        Command::Tps { data, lattice } => {
            let dataset = read_dataset(&data)?;
            if dataset.spec.state_dim() != 1 {
                return Err(HarnessError::Config("tps needs a 1D-state dataset".into()));
            }
            let mut nodes = Vec::new();
            let mut values = Vec::new();
            for cell in 0..dataset.spec.cell_count() {
                let v = dataset.values[cell];
                if v.is_nan() {
                    continue;
                }
                let (state, t) = dataset.spec.point(cell);
                nodes.push([state[0], t]);
                values.push(v);
            }
            let model = tps_fit(&nodes, &values)?;
            if model.is_degenerate() {
                eprintln!("warning: degenerate node set, least-squares fallback used");
            }
            let spec = lattice.spec()?;
            let path = cli.out.join("tps.csv");
            let spec_ref = spec.clone();
            write_plot_csv(
                &path,
                "series,x,T,value",
                (0..spec_ref.cell_count()).map(move |cell| {
                    let (state, t) = spec_ref.point(cell);
                    ("tps".to_string(), state[0], t, tps_eval(&model, state[0], t))
                }),
            )?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Oracle { lattice } => {
            let spec = lattice.spec()?;
            if spec.state_dim() != 1 {
                return Err(HarnessError::Config("oracle lattice must be 1D".into()));
            }
            let grid = pipe_harness::oracle::oracle_grid(&spec)?;
            let path = cli.out.join("oracle.csv");
            write_dataset(&grid, &path)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Experiment { id } => {
            let id = ExperimentId::from_str(&id).map_err(HarnessError::Config)?;
            let overrides = match &cli.config {
                Some(path) => parse_overrides(path)?,
                None => Vec::new(),
            };
            let ctx = RunContext { out_dir: cli.out.clone(), plot_data: cli.plot_data };
            let report = experiments::run(id, cli.seed, &overrides, &ctx)?;
            print!("{}", report.render_checks());
            println!("report: {}", cli.out.join("report.csv").display());
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if deterministic_mode() {
        1
    } else if cli.threads > 0 {
        cli.threads
    } else {
        0
    };
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("thread pool setup failed: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(HarnessError::Config(message)) => {
            eprintln!("configuration error: {message}");
            ExitCode::from(2)
        }
        Err(other) => {
            eprintln!("error: {other}");
            ExitCode::from(1)
        }
    }
}
