//! Generalization to unseen regions: train on Monte Carlo data restricted to
//! `[-10, -2] x [0, 10]`, evaluate on the full region `[-10, 2] x [0, 10]`
//! against the closed-form recovery probability, with thin-plate-spline
//! fitting as the non-physics baseline.

use std::path::Path;

use pipe_core::baselines::{tps_eval, tps_fit};
use pipe_core::montecarlo::{estimate_grid, GridSpec, ProbabilityGrid};
use pipe_core::netcore::checkpoint::write_checkpoint;
use pipe_core::netcore::MlpParams;
use pipe_core::physics::PdeSpec;
use pipe_core::rng::derive_seed;
use pipe_core::training::{
    config_io::render_loss_history, predict_grid, sample_collocation, total_loss, train,
    CollocationSets, LossWeights, Region, SampleCounts, TrainConfig, TrainReport,
};

use super::parse_field;
use crate::metrics::{mae, pearson, sup_error};
use crate::oracle::oracle_grid;
use crate::report::{write_plot_csv, MetricsReport};
use crate::systems::drift1d_spec;
use crate::{HarnessError, RunContext};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub mc_n: u64,
    pub mc_dt: f64,
    pub data_x_steps: usize,
    pub data_t_steps: usize,
    pub eval_x_steps: usize,
    pub eval_t_steps: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub physics_points: usize,
    pub initial_points: usize,
    pub boundary_points: usize,
    pub checkpoint_every: usize,
}

impl Config {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            mc_n: 1000,
            mc_dt: 0.01,
            data_x_steps: 21,
            data_t_steps: 21,
            eval_x_steps: 61,
            eval_t_steps: 101,
            hidden: vec![32, 32, 32],
            epochs: 20_000,
            physics_points: 4000,
            initial_points: 400,
            boundary_points: 400,
            checkpoint_every: 2500,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "seed" => self.seed = parse_field(key, value)?,
            "mc_n" => self.mc_n = parse_field(key, value)?,
            "mc_dt" => self.mc_dt = parse_field(key, value)?,
            "data_x_steps" => self.data_x_steps = parse_field(key, value)?,
            "data_t_steps" => self.data_t_steps = parse_field(key, value)?,
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
            "checkpoint_every" => self.checkpoint_every = parse_field(key, value)?,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown generalization key `{other}`"
                )));
            }
        }
        Ok(())
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut lines = vec![("experiment".to_string(), "generalization".to_string())];
        let mut add = |k: &str, v: String| lines.push((k.to_string(), v));
        add("seed", self.seed.to_string());
        add("mc_n", self.mc_n.to_string());
        add("mc_dt", self.mc_dt.to_string());
        add("data_x_steps", self.data_x_steps.to_string());
        add("data_t_steps", self.data_t_steps.to_string());
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
        add("checkpoint_every", self.checkpoint_every.to_string());
        lines
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            weights: LossWeights::default(),
            epochs: self.epochs,
            counts: SampleCounts {
                physics: self.physics_points,
                initial: self.initial_points,
                boundary: self.boundary_points,
            },
            init_seed: derive_seed(self.seed, 2),
            sample_seed: derive_seed(self.seed, 3),
            lambda_conditioned: false,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::default()
        }
    }
}

/// Everything downstream consumers (the gradient experiment, the acceptance
/// suite) need from a finished run.
pub struct Artifacts {
    pub spec: PdeSpec,
    pub dataset: ProbabilityGrid,
    pub params: MlpParams,
    pub train_report: TrainReport,
    pub sets: CollocationSets,
    pub eval_spec: GridSpec,
}

/// The sub-region that carries training data.
pub fn data_region() -> Region {
    Region { state_lo: vec![-10.0], state_hi: vec![-2.0], t_lo: 0.0, t_hi: 10.0 }
}

/// Generates the dataset, trains the predictor, and writes the run
/// artifacts (dataset, checkpoint, loss history) to `out_dir`.
pub fn prepare(cfg: &Config, out_dir: &Path) -> Result<Artifacts, HarnessError> {
    let spec = drift1d_spec(1.0, None);
    let data_spec =
        GridSpec::planar(-10.0, -2.0, cfg.data_x_steps, 0.0, 10.0, cfg.data_t_steps, 1.0)?;
    let dataset = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &data_spec,
        cfg.mc_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 1),
    )?
    .grid;
    pipe_core::montecarlo::dataset::write_dataset(&dataset, &out_dir.join("dataset.csv"))?;

    let train_config = cfg.train_config();
    let sets = sample_collocation(
        &spec,
        train_config.counts,
        train_config.sample_seed,
        &[&dataset],
        Some(&data_region()),
    )?;
    let (params, train_report) = train(&train_config, &sets, &spec)?;
    write_checkpoint(&params, &out_dir.join("checkpoint.txt"))?;
    std::fs::write(
        out_dir.join("loss_history.csv"),
        render_loss_history(&train_report.history),
    )?;

    let eval_spec =
        GridSpec::planar(-10.0, 2.0, cfg.eval_x_steps, 0.0, 10.0, cfg.eval_t_steps, 1.0)?;
    Ok(Artifacts { spec, dataset, params, train_report, sets, eval_spec })
}

/// Value-error rows and checks against the oracle and the TPS baseline.
pub fn evaluate(
    cfg: &Config,
    artifacts: &Artifacts,
    ctx: &RunContext,
) -> Result<MetricsReport, HarnessError> {
    let mut report = MetricsReport { config_lines: cfg.lines(), ..Default::default() };
    let spec = &artifacts.spec;
    let eval_spec = &artifacts.eval_spec;
    let truth = oracle_grid(eval_spec)?;
    let pipe = predict_grid(&artifacts.params, eval_spec, spec.mode())?;

    // Oracle against itself pins the metric plumbing.
    let (self_mae, _) = mae(eval_spec, &truth.values, &truth.values, &spec.safe_set, None);
    report.push_row("oracle", "full", 0, 1.0, "value_mae", self_mae);
    report.push_check("oracle self-check", self_mae == 0.0, format!("mae = {self_mae:.3e}"));

    let (pipe_mae, cells) = mae(eval_spec, &pipe.values, &truth.values, &spec.safe_set, None);
    report.push_row("pipe", "full", cfg.mc_n, 1.0, "value_mae", pipe_mae);
    report.push_check(
        "pipe value mae <= 1.5e-2",
        pipe_mae <= 1.5e-2,
        format!("mae = {pipe_mae:.4e} over {cells} cells"),
    );

    // TPS baseline fitted to the same training rows.
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for cell in 0..artifacts.dataset.spec.cell_count() {
        let v = artifacts.dataset.values[cell];
        if v.is_nan() {
            continue;
        }
        let (state, t) = artifacts.dataset.spec.point(cell);
        nodes.push([state[0], t]);
        values.push(v);
    }
    let tps = tps_fit(&nodes, &values)?;
    let node_sse: f64 = nodes
        .iter()
        .zip(&values)
        .map(|(p, v)| {
            let r = tps_eval(&tps, p[0], p[1]) - v;
            r * r
        })
        .sum();
    report.push_row("tps", "nodes", cfg.mc_n, 1.0, "sse", node_sse);
    report.push_check("tps node sse <= 1e-10", node_sse <= 1e-10, format!("sse = {node_sse:.3e}"));

    let tps_values: Vec<f64> = (0..eval_spec.cell_count())
        .map(|cell| {
            let (state, t) = eval_spec.point(cell);
            tps_eval(&tps, state[0], t)
        })
        .collect();
    let (tps_mae, _) = mae(eval_spec, &tps_values, &truth.values, &spec.safe_set, None);
    report.push_row("tps", "full", cfg.mc_n, 1.0, "value_mae", tps_mae);
    report.push_check("tps value mae >= 5e-2", tps_mae >= 5e-2, format!("mae = {tps_mae:.4e}"));
    report.push_check(
        "tps mae >= 3x pipe mae",
        tps_mae >= 3.0 * pipe_mae,
        format!("ratio = {:.2}", tps_mae / pipe_mae),
    );

    // Prediction error scales with training loss across checkpoints.
    let mut losses = Vec::new();
    let mut sups = Vec::new();
    for (epoch, params) in &artifacts.train_report.checkpoints {
        let grid = predict_grid(params, eval_spec, spec.mode())?;
        let sup = sup_error(eval_spec, &grid.values, &truth.values, &spec.safe_set);
        let loss = artifacts.train_report.history[epoch - 1].total;
        report.push_row("pipe", "full", cfg.mc_n, 1.0, &format!("sup_error_epoch_{epoch}"), sup);
        losses.push(loss);
        sups.push(sup);
    }
    let corr = pearson(&sups, &losses);
    report.push_row("pipe", "full", cfg.mc_n, 1.0, "error_loss_pearson", corr);
    report.push_check(
        "error-loss correlation positive",
        corr > 0.0,
        format!("pearson = {corr:.3} over {} checkpoints", sups.len()),
    );

    // 1000-epoch moving average of the total loss is nonincreasing.
    let history = &artifacts.train_report.history;
    let window = 1000.min(history.len());
    let ma = |end: usize| -> f64 {
        history[end - window..end].iter().map(|b| b.total).sum::<f64>() / window as f64
    };
    let mut max_uptick: f64 = 0.0;
    let mut prev = ma(window);
    let mut end = window + 500;
    while end <= history.len() {
        let current = ma(end);
        max_uptick = max_uptick.max(current / prev - 1.0);
        prev = current;
        end += 500;
    }
    report.push_row("pipe", "full", cfg.mc_n, 1.0, "loss_ma_max_uptick", max_uptick);
    report.push_check(
        "loss moving average nonincreasing",
        max_uptick <= 5e-3,
        format!("max relative uptick = {max_uptick:.2e}"),
    );

    if ctx.plot_data {
        let spec_ref = eval_spec.clone();
        let rows = (0..eval_spec.cell_count()).flat_map(move |cell| {
            let (state, t) = spec_ref.point(cell);
            [
                ("oracle".to_string(), state[0], t, truth.values[cell]),
                ("pipe".to_string(), state[0], t, pipe.values[cell]),
                ("tps".to_string(), state[0], t, tps_values[cell]),
            ]
        });
        write_plot_csv(&ctx.out_dir.join("fig_generalization.csv"), "series,x,T,value", rows)?;
    }
    Ok(report)
}

pub fn run(cfg: &Config, ctx: &RunContext) -> Result<MetricsReport, HarnessError> {
    let artifacts = prepare(cfg, &ctx.out_dir)?;
    let report = evaluate(cfg, &artifacts, ctx)?;
    report.write_csv(&ctx.out_dir.join("report.csv"))?;
    Ok(report)
}

/// Ablation helper: rerun with a different architecture and return the
/// full-domain value MAE (used by the层-count smoke test).
pub fn value_mae_for_architecture(
    base: &Config,
    hidden: Vec<usize>,
    out_dir: &Path,
) -> Result<f64, HarnessError> {
    let mut cfg = base.clone();
    cfg.hidden = hidden;
    let artifacts = prepare(&cfg, out_dir)?;
    let truth = oracle_grid(&artifacts.eval_spec)?;
    let pipe = predict_grid(&artifacts.params, &artifacts.eval_spec, artifacts.spec.mode())?;
    let (value, _) =
        mae(&artifacts.eval_spec, &pipe.values, &truth.values, &artifacts.spec.safe_set, None);
    Ok(value)
}

/// Regression hook used by tests: the composite loss of the sampled sets at
/// the deterministic initialization.
pub fn initial_loss(cfg: &Config) -> Result<f64, HarnessError> {
    let spec = drift1d_spec(1.0, None);
    let data_spec =
        GridSpec::planar(-10.0, -2.0, cfg.data_x_steps, 0.0, 10.0, cfg.data_t_steps, 1.0)?;
    let dataset = estimate_grid(
        &spec.system,
        &spec.safe_set,
        &data_spec,
        cfg.mc_n,
        cfg.mc_dt,
        derive_seed(cfg.seed, 1),
    )?
    .grid;
    let train_config = cfg.train_config();
    let sets = sample_collocation(
        &spec,
        train_config.counts,
        train_config.sample_seed,
        &[&dataset],
        Some(&data_region()),
    )?;
    let (lo, hi) = spec.domain.input_bounds();
    let mut layer_sizes = vec![2];
    layer_sizes.extend_from_slice(&cfg.hidden);
    layer_sizes.push(1);
    let params = pipe_core::netcore::init_glorot(&layer_sizes, train_config.init_seed)?
        .with_input_bounds(lo, hi)?
        .with_state_dim(1)?;
    let breakdown = total_loss(&params, &sets, &spec, &train_config.weights)?;
    Ok(breakdown.total)
}
