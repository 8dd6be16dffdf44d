//! Cart-pendulum safety probability. No closed form exists here, so the
//! trained predictor is scored against a held-out Monte Carlo grid with a
//! larger sample count, plus a symmetry check: the closed-loop dynamics are
//! odd in `(xdot, theta, thetadot)`, so the safety probability must be even.

use pipe_core::montecarlo::{estimate_grid, GridSpec};
use pipe_core::physics::initial_condition;
use pipe_core::rng::derive_seed;
use pipe_core::training::{
    predict_grid, sample_collocation, train, LossWeights, SampleCounts, TrainConfig,
};

use super::parse_field;
use crate::metrics::{mae, symmetry_violation};
use crate::report::MetricsReport;
use crate::systems::pendulum_spec;
use crate::{HarnessError, RunContext};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    /// Lattice points per state axis (velocity, angle, angular velocity).
    pub grid_steps: usize,
    pub t_steps: usize,
    pub train_n: u64,
    pub eval_n: u64,
    pub mc_dt: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub physics_points: usize,
    pub initial_points: usize,
    pub boundary_points: usize,
}

impl Config {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            grid_steps: 7,
            t_steps: 10,
            train_n: 400,
            eval_n: 2000,
            mc_dt: 0.001,
            hidden: vec![32, 32, 32],
            epochs: 8000,
            physics_points: 3000,
            initial_points: 400,
            boundary_points: 400,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "seed" => self.seed = parse_field(key, value)?,
            "grid_steps" => self.grid_steps = parse_field(key, value)?,
            "t_steps" => self.t_steps = parse_field(key, value)?,
            "train_n" => self.train_n = parse_field(key, value)?,
            "eval_n" => self.eval_n = parse_field(key, value)?,
            "mc_dt" => self.mc_dt = parse_field(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|tok| parse_field::<usize>(key, tok.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "epochs" => self.epochs = parse_field(key, value)?,
            "physics_points" => self.physics_points = parse_field(key, value)?,
            "initial_points" => self.initial_points = parse_field(key, value)?,
            "boundary_points" => self.boundary_points = parse_field(key, value)?,
            other => {
                return Err(HarnessError::Config(format!("unknown pendulum key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut lines = vec![("experiment".to_string(), "pendulum".to_string())];
        let mut add = |k: &str, v: String| lines.push((k.to_string(), v));
        add("seed", self.seed.to_string());
        add("grid_steps", self.grid_steps.to_string());
        add("t_steps", self.t_steps.to_string());
        add("train_n", self.train_n.to_string());
        add("eval_n", self.eval_n.to_string());
        add("mc_dt", self.mc_dt.to_string());
        add(
            "hidden",
            self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        add("epochs", self.epochs.to_string());
        add("physics_points", self.physics_points.to_string());
        add("initial_points", self.initial_points.to_string());
        add("boundary_points", self.boundary_points.to_string());
        lines
    }

    fn lattice(&self) -> Result<GridSpec, HarnessError> {
        let spec = pendulum_spec();
        let grid = GridSpec {
            state_lo: spec.domain.state_lo.clone(),
            state_hi: spec.domain.state_hi.clone(),
            state_steps: vec![self.grid_steps; 3],
            t_lo: 0.0,
            t_hi: spec.domain.t_hi,
            t_steps: self.t_steps,
            lambda: 0.0,
        };
        grid.validate()?;
        Ok(grid)
    }
}

pub fn run(cfg: &Config, ctx: &RunContext) -> Result<MetricsReport, HarnessError> {
    let mut report = MetricsReport { config_lines: cfg.lines(), ..Default::default() };
    let spec = pendulum_spec();
    let lattice = cfg.lattice()?;

    let train_grid = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &lattice,
        cfg.train_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 1),
    )?
    .grid;
    pipe_core::montecarlo::dataset::write_dataset(
        &train_grid,
        &ctx.out_dir.join("dataset.csv"),
    )?;
    let eval_grid = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &lattice,
        cfg.eval_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 2),
    )?
    .grid;

    // Zero-horizon rows must equal the safe-set indicator exactly.
    let mut t0_exact = true;
    for cell in 0..lattice.cell_count() {
        let (state, t) = lattice.point(cell);
        if t == 0.0 && train_grid.values[cell] != initial_condition(&state, &spec.safe_set) {
            t0_exact = false;
        }
    }
    report.push_check("zero-horizon data equals indicator", t0_exact, String::new());

    let train_config = TrainConfig {
        hidden: cfg.hidden.clone(),
        weights: LossWeights::default(),
        epochs: cfg.epochs,
        counts: SampleCounts {
            physics: cfg.physics_points,
            initial: cfg.initial_points,
            boundary: cfg.boundary_points,
        },
        init_seed: derive_seed(cfg.seed, 3),
        sample_seed: derive_seed(cfg.seed, 4),
        lambda_conditioned: false,
        checkpoint_every: cfg.epochs,
        ..TrainConfig::default()
    };
    let sets =
        sample_collocation(&spec, train_config.counts, train_config.sample_seed, &[&train_grid], None)?;
    let (params, _) = train(&train_config, &sets, &spec)?;
    pipe_core::netcore::checkpoint::write_checkpoint(&params, &ctx.out_dir.join("checkpoint.txt"))?;

    let pipe = predict_grid(&params, &lattice, spec.mode())?;
    let (value_mae, cells) =
        mae(&lattice, &pipe.values, &eval_grid.values, &spec.safe_set, None);
    report.push_row("pipe", "full", cfg.train_n, 0.0, "value_mae_vs_mc", value_mae);
    report.push_row("mc-eval", "full", cfg.eval_n, 0.0, "cells", cells as f64);
    report.push_check(
        "pipe vs high-N mc mae <= 5e-2",
        value_mae <= 5e-2,
        format!("mae = {value_mae:.4e} over {cells} cells (eval N = {})", cfg.eval_n),
    );

    let symmetry = symmetry_violation(&pipe);
    report.push_row("pipe", "full", cfg.train_n, 0.0, "symmetry_violation", symmetry);
    report.push_check(
        "prediction symmetric under state negation <= 3e-2",
        symmetry <= 3e-2,
        format!("mean asymmetry = {symmetry:.4e}"),
    );
    // The raw data's own asymmetry, for scale.
    let data_symmetry = symmetry_violation(&train_grid);
    report.push_row("mc", "full", cfg.train_n, 0.0, "symmetry_violation", data_symmetry);

    if ctx.plot_data {
        let spec_ref = lattice.clone();
        let pipe_values = pipe.values.clone();
        let eval_values = eval_grid.values.clone();
        let rows = (0..lattice.cell_count()).flat_map(move |cell| {
            let (state, t) = spec_ref.point(cell);
            [
                ("pipe".to_string(), state[1], state[2] + 100.0 * t, pipe_values[cell]),
                ("mc-eval".to_string(), state[1], state[2] + 100.0 * t, eval_values[cell]),
            ]
        });
        crate::report::write_plot_csv(
            &ctx.out_dir.join("fig_pendulum.csv"),
            "series,theta,thetadot_plus_100T,value",
            rows,
        )?;
    }
    report.write_csv(&ctx.out_dir.join("report.csv"))?;
    Ok(report)
}
