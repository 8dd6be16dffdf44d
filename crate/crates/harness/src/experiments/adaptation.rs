//! Adaptation over the drift parameter: one lambda-conditioned predictor is
//! trained on Monte Carlo datasets for a handful of training lambdas and
//! evaluated against the oracle at held-out lambdas, including one beyond
//! the training set.

use pipe_core::montecarlo::{estimate_grid, GridSpec};
use pipe_core::rng::derive_seed;
use pipe_core::training::{
    predict_grid, sample_collocation, train, LossWeights, SampleCounts, TrainConfig,
};

use super::parse_field;
use crate::metrics::mae;
use crate::oracle::oracle_grid;
use crate::report::MetricsReport;
use crate::systems::drift1d_spec;
use crate::{HarnessError, RunContext};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub train_lambdas: Vec<f64>,
    pub test_lambdas: Vec<f64>,
    pub mc_n: u64,
    pub mc_dt: f64,
    pub data_x_steps: usize,
    pub data_t_steps: usize,
    pub eval_x_steps: usize,
    pub eval_t_steps: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
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
            train_lambdas: vec![0.1, 0.5, 0.8, 1.0],
            test_lambdas: vec![0.3, 0.7, 1.0, 1.2, 1.5, 2.0],
            mc_n: 10_000,
            mc_dt: 0.01,
            data_x_steps: 31,
            data_t_steps: 21,
            eval_x_steps: 61,
            eval_t_steps: 101,
            lambda_lo: 0.0,
            lambda_hi: 2.0,
            hidden: vec![32, 32, 32],
            epochs: 12_000,
            physics_points: 4000,
            initial_points: 400,
            boundary_points: 400,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let parse_list = |value: &str| -> Result<Vec<f64>, HarnessError> {
            value.split(',').map(|tok| parse_field::<f64>("lambda list", tok.trim())).collect()
        };
        match key {
            "seed" => self.seed = parse_field(key, value)?,
            "train_lambdas" => self.train_lambdas = parse_list(value)?,
            "test_lambdas" => self.test_lambdas = parse_list(value)?,
            "mc_n" => self.mc_n = parse_field(key, value)?,
            "mc_dt" => self.mc_dt = parse_field(key, value)?,
            "data_x_steps" => self.data_x_steps = parse_field(key, value)?,
            "data_t_steps" => self.data_t_steps = parse_field(key, value)?,
            "eval_x_steps" => self.eval_x_steps = parse_field(key, value)?,
            "eval_t_steps" => self.eval_t_steps = parse_field(key, value)?,
            "lambda_lo" => self.lambda_lo = parse_field(key, value)?,
            "lambda_hi" => self.lambda_hi = parse_field(key, value)?,
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
                return Err(HarnessError::Config(format!("unknown adaptation key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut lines = vec![("experiment".to_string(), "adaptation".to_string())];
        let mut add = |k: &str, v: String| lines.push((k.to_string(), v));
        add("seed", self.seed.to_string());
        add("train_lambdas", join(&self.train_lambdas));
        add("test_lambdas", join(&self.test_lambdas));
        add("mc_n", self.mc_n.to_string());
        add("mc_dt", self.mc_dt.to_string());
        add("data_x_steps", self.data_x_steps.to_string());
        add("data_t_steps", self.data_t_steps.to_string());
        add("eval_x_steps", self.eval_x_steps.to_string());
        add("eval_t_steps", self.eval_t_steps.to_string());
        add("lambda_lo", self.lambda_lo.to_string());
        add("lambda_hi", self.lambda_hi.to_string());
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
    let spec = drift1d_spec(1.0, Some((cfg.lambda_lo, cfg.lambda_hi)));

    let mut datasets = Vec::new();
    for (i, &lambda) in cfg.train_lambdas.iter().enumerate() {
        let grid_spec = GridSpec::planar(
            -10.0,
            2.0,
            cfg.data_x_steps,
            0.0,
            10.0,
            cfg.data_t_steps,
            lambda,
        )?;
        let grid = estimate_grid(
            &spec.system,
            &spec.safe_set,
            &grid_spec,
            cfg.mc_n,
            cfg.mc_dt,
            derive_seed(cfg.seed, 10 + i as u64),
        )?
        .grid;
        pipe_core::montecarlo::dataset::write_dataset(
            &grid,
            &ctx.out_dir.join(format!("dataset_lambda_{lambda}.csv")),
        )?;
        datasets.push(grid);
    }
    let dataset_refs: Vec<&_> = datasets.iter().collect();

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
        lambda_conditioned: true,
        checkpoint_every: cfg.epochs,
        ..TrainConfig::default()
    };
    let sets =
        sample_collocation(&spec, train_config.counts, train_config.sample_seed, &dataset_refs, None)?;
    let (params, _) = train(&train_config, &sets, &spec)?;
    pipe_core::netcore::checkpoint::write_checkpoint(&params, &ctx.out_dir.join("checkpoint.txt"))?;

    for &lambda in &cfg.test_lambdas {
        let eval_spec = GridSpec::planar(
            -10.0,
            2.0,
            cfg.eval_x_steps,
            0.0,
            10.0,
            cfg.eval_t_steps,
            lambda,
        )?;
        let truth = oracle_grid(&eval_spec)?;
        let pipe = predict_grid(&params, &eval_spec, spec.mode())?;
        let (value, cells) = mae(&eval_spec, &pipe.values, &truth.values, &spec.safe_set, None);
        report.push_row("pipe", "full", cfg.mc_n, lambda, "value_mae", value);
        let in_train = cfg.train_lambdas.iter().any(|l| (l - lambda).abs() < 1e-12);
        let bound = if in_train {
            1.5e-2
        } else if lambda >= 1.9 {
            4e-2
        } else {
            2e-2
        };
        report.push_check(
            &format!("lambda {lambda} mae <= {bound:.1e}"),
            value <= bound,
            format!("mae = {value:.4e} over {cells} cells"),
        );
    }

    report.write_csv(&ctx.out_dir.join("report.csv"))?;
    Ok(report)
}
