//! Closed-loop 1D system under a proportional controller: safety probability
//! learned from a coarse low-sample grid, evaluated on a fine lattice
//! against a high-sample Monte Carlo reference.

use pipe_core::montecarlo::{estimate_grid, finite_diff_gradient, GridSpec};
use pipe_core::rng::derive_seed;
use pipe_core::training::{
    predict_grid, sample_collocation, train, LossWeights, SampleCounts, TrainConfig,
};

use super::parse_field;
use crate::metrics::mae;
use crate::report::MetricsReport;
use crate::systems::closedloop_spec;
use crate::{HarnessError, RunContext};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub train_n: u64,
    pub eval_n: u64,
    pub mc_dt: f64,
    pub train_x_steps: usize,
    pub train_t_steps: usize,
    pub eval_x_steps: usize,
    pub eval_t_steps: usize,
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
            train_n: 100,
            eval_n: 100_000,
            mc_dt: 0.1,
            train_x_steps: 19,
            train_t_steps: 21,
            eval_x_steps: 91,
            eval_t_steps: 101,
            hidden: vec![32, 32, 32],
            epochs: 8000,
            physics_points: 2000,
            initial_points: 300,
            boundary_points: 300,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "seed" => self.seed = parse_field(key, value)?,
            "train_n" => self.train_n = parse_field(key, value)?,
            "eval_n" => self.eval_n = parse_field(key, value)?,
            "mc_dt" => self.mc_dt = parse_field(key, value)?,
            "train_x_steps" => self.train_x_steps = parse_field(key, value)?,
            "train_t_steps" => self.train_t_steps = parse_field(key, value)?,
            "eval_x_steps" => self.eval_x_steps = parse_field(key, value)?,
            "eval_t_steps" => self.eval_t_steps = parse_field(key, value)?,
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
                return Err(HarnessError::Config(format!("unknown closedloop key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut lines = vec![("experiment".to_string(), "closedloop".to_string())];
        let mut add = |k: &str, v: String| lines.push((k.to_string(), v));
        add("seed", self.seed.to_string());
        add("train_n", self.train_n.to_string());
        add("eval_n", self.eval_n.to_string());
        add("mc_dt", self.mc_dt.to_string());
        add("train_x_steps", self.train_x_steps.to_string());
        add("train_t_steps", self.train_t_steps.to_string());
        add("eval_x_steps", self.eval_x_steps.to_string());
        add("eval_t_steps", self.eval_t_steps.to_string());
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
}

pub fn run(cfg: &Config, ctx: &RunContext) -> Result<MetricsReport, HarnessError> {
    let mut report = MetricsReport { config_lines: cfg.lines(), ..Default::default() };
    let spec = closedloop_spec();

    let train_spec =
        GridSpec::planar(1.0, 10.0, cfg.train_x_steps, 0.0, 10.0, cfg.train_t_steps, 0.0)?;
    let train_grid = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &train_spec,
        cfg.train_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 1),
    )?
    .grid;
    pipe_core::montecarlo::dataset::write_dataset(&train_grid, &ctx.out_dir.join("dataset.csv"))?;

    let train_config = TrainConfig {
        hidden: cfg.hidden.clone(),
        weights: LossWeights::default(),
        epochs: cfg.epochs,
        counts: SampleCounts {
            physics: cfg.physics_points,
            initial: cfg.initial_points,
            boundary: cfg.boundary_points,
        },
        init_seed: derive_seed(cfg.seed, 2),
        sample_seed: derive_seed(cfg.seed, 3),
        lambda_conditioned: false,
        checkpoint_every: cfg.epochs,
        ..TrainConfig::default()
    };
    let sets =
        sample_collocation(&spec, train_config.counts, train_config.sample_seed, &[&train_grid], None)?;
    let (params, _) = train(&train_config, &sets, &spec)?;
    pipe_core::netcore::checkpoint::write_checkpoint(&params, &ctx.out_dir.join("checkpoint.txt"))?;

    let eval_spec =
        GridSpec::planar(1.0, 10.0, cfg.eval_x_steps, 0.0, 10.0, cfg.eval_t_steps, 0.0)?;
    let eval_grid = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &eval_spec,
        cfg.eval_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 4),
    )?
    .grid;
    let pipe = predict_grid(&params, &eval_spec, spec.mode())?;

    let (value_mae, cells) =
        mae(&eval_spec, &pipe.values, &eval_grid.values, &spec.safe_set, None);
    report.push_row("pipe", "full", cfg.train_n, 0.0, "value_mae_vs_mc", value_mae);
    report.push_check(
        "pipe vs high-N mc mae <= 3e-2",
        value_mae <= 3e-2,
        format!("mae = {value_mae:.4e} over {cells} cells (eval N = {})", cfg.eval_n),
    );

    // Initial condition: predictions at T = 0 for x above the boundary.
    let mut ic_err = 0.0;
    let mut ic_count = 0usize;
    let mut bc_err = 0.0;
    let mut bc_count = 0usize;
    for cell in 0..eval_spec.cell_count() {
        let (state, t) = eval_spec.point(cell);
        if t == 0.0 && state[0] > 1.0 + eval_spec.state_spacing(0) {
            ic_err += (pipe.values[cell] - 1.0).abs();
            ic_count += 1;
        }
        if state[0] == 1.0 && t > 0.0 {
            bc_err += pipe.values[cell].abs();
            bc_count += 1;
        }
    }
    let ic_err = ic_err / ic_count as f64;
    let bc_err = bc_err / bc_count as f64;
    report.push_row("pipe", "initial", cfg.train_n, 0.0, "abs_error", ic_err);
    report.push_row("pipe", "boundary", cfg.train_n, 0.0, "abs_error", bc_err);
    report.push_check(
        "initial condition honored (mean |F - 1| at T=0, x > 1)",
        ic_err <= 5e-2,
        format!("error = {ic_err:.4e}"),
    );
    report.push_check(
        "boundary condition honored (mean |F| at x = 1)",
        bc_err <= 5e-2,
        format!("error = {bc_err:.4e}"),
    );

    // Gradient smoothness comparison (reported, not asserted: the Monte
    // Carlo reference gradient carries its own sampling noise).
    let pipe_fd = finite_diff_gradient(&pipe, 0)?;
    let mc_fd = finite_diff_gradient(&eval_grid, 0)?;
    let (grad_mae, _) = mae(&eval_spec, &pipe_fd.values, &mc_fd.values, &spec.safe_set, None);
    report.push_row("pipe-fd", "full", cfg.train_n, 0.0, "gradient_mae_vs_mc_fd", grad_mae);

    if ctx.plot_data {
        let spec_ref = eval_spec.clone();
        let pipe_values = pipe.values.clone();
        let eval_values = eval_grid.values.clone();
        let rows = (0..spec_ref.cell_count()).flat_map(move |cell| {
            let (state, t) = spec_ref.point(cell);
            [
                ("pipe".to_string(), state[0], t, pipe_values[cell]),
                ("mc-eval".to_string(), state[0], t, eval_values[cell]),
            ]
        });
        crate::report::write_plot_csv(
            &ctx.out_dir.join("fig_closedloop.csv"),
            "series,x,T,value",
            rows,
        )?;
    }
    report.write_csv(&ctx.out_dir.join("report.csv"))?;
    Ok(report)
}
