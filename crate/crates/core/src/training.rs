//! Composite-loss training of the risk-probability predictor.
//!
//! The loss is `omega_p L_p + omega_d L_d + omega_ic L_ic + omega_bc L_bc`:
//! mean squared PDE residual over interior collocation points, mean squared
//! data mismatch over Monte Carlo targets, and mean squared initial/boundary
//! condition errors. Optimization is full-batch Adam; every point set is
//! sampled once per run, so training is a deterministic function of its
//! seeds.

use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::dynamics::Mode;
use crate::montecarlo::{GridSource, GridSpec, GradientGrid, ProbabilityGrid};
use crate::netcore::{
    self, FitPoint, JetCotangent, JetLoss, MlpParams, NetError, NetJet,
};
use crate::physics::{self, PdeSpec, PhysicsError};
use crate::rng;

pub mod config_io;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no data points available for training")]
    NoData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, salvage: Box<MlpParams> },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Axis-aligned state-time box used to restrict which dataset rows feed the
/// data loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Region {
    pub fn contains(&self, state: &[f64], t: f64) -> bool {
        t >= self.t_lo
            && t <= self.t_hi
            && state
                .iter()
                .zip(self.state_lo.iter().zip(&self.state_hi))
                .all(|(x, (lo, hi))| x >= lo && x <= hi)
    }
}

/// How many points to draw for each loss group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleCounts {
    pub physics: usize,
    pub initial: usize,
    pub boundary: usize,
}

/// The training point sets: interior physics points, data points with Monte
/// Carlo targets, and initial/boundary points with condition targets. Inputs
/// are full network inputs `(x.., T[, lambda])`.
#[derive(Debug, Clone, Default)]
pub struct CollocationSets {
    pub physics: Vec<Vec<f64>>,
    pub data: Vec<(Vec<f64>, f64)>,
    pub initial: Vec<(Vec<f64>, f64)>,
    pub boundary: Vec<(Vec<f64>, f64)>,
}

fn open_unit(stream: &mut rand_chacha::ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = stream.gen_range(0.0..1.0);
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws the collocation sets for a PDE problem. Physics points are uniform
/// over the open interior (fixed once per run); data points are taken
/// verbatim from the dataset lattices (restricted to `region` when given);
/// initial points sample the `T = 0` face against the safe-set indicator;
/// boundary points sample the declared faces against the mode's boundary
/// value. Deterministic per seed.
pub fn sample_collocation(
    spec: &PdeSpec,
    counts: SampleCounts,
    seed: u64,
    datasets: &[&ProbabilityGrid],
    region: Option<&Region>,
) -> Result<CollocationSets, TrainError> {
    let mut stream = rng::stream(seed);
    let domain = &spec.domain;
    let d = domain.state_dim();
    let conditioned = domain.lambda_range.is_some();
    let mut sets = CollocationSets::default();

    let sample_lambda = |stream: &mut rand_chacha::ChaCha8Rng| -> Option<f64> {
        domain.lambda_range.map(|(lo, hi)| lo + (hi - lo) * open_unit(stream))
    };

    for _ in 0..counts.physics {
        let mut input = Vec::with_capacity(domain.input_dim());
        for dim in 0..d {
            let u = open_unit(&mut stream);
            input.push(domain.state_lo[dim] + (domain.state_hi[dim] - domain.state_lo[dim]) * u);
        }
        input.push(domain.t_hi * open_unit(&mut stream));
        if let Some(lambda) = sample_lambda(&mut stream) {
            input.push(lambda);
        }
        sets.physics.push(input);
    }

    for grid in datasets {
        if grid.spec.state_dim() != d {
            return Err(TrainError::InvalidConfig(format!(
                "dataset has {} state dims, domain has {}",
                grid.spec.state_dim(),
                d
            )));
        }
        for cell in 0..grid.spec.cell_count() {
            let value = grid.values[cell];
            if value.is_nan() {
                continue;
            }
            let (state, t) = grid.spec.point(cell);
            if let Some(region) = region {
                if !region.contains(&state, t) {
                    continue;
                }
            }
            let mut input = state;
            input.push(t);
            if conditioned {
                input.push(grid.spec.lambda);
            }
            sets.data.push((input, value));
        }
    }
    if sets.data.is_empty() {
        return Err(TrainError::NoData);
    }

    for _ in 0..counts.initial {
        let mut state = Vec::with_capacity(d);
        for dim in 0..d {
            let u: f64 = stream.gen_range(0.0..=1.0);
            state.push(domain.state_lo[dim] + (domain.state_hi[dim] - domain.state_lo[dim]) * u);
        }
        let target = physics::initial_condition(&state, &spec.safe_set);
        let mut input = state;
        input.push(0.0);
        if let Some(lambda) = sample_lambda(&mut stream) {
            input.push(lambda);
        }
        sets.initial.push((input, target));
    }

    if counts.boundary > 0 {
        if spec.boundary_faces.is_empty() {
            return Err(TrainError::InvalidConfig(
                "boundary points requested but the spec declares no boundary faces".into(),
            ));
        }
        let target = physics::boundary_condition(spec.mode());
        for _ in 0..counts.boundary {
            let face = spec.boundary_faces[stream.gen_range(0..spec.boundary_faces.len())];
            let mut state = Vec::with_capacity(d);
            for dim in 0..d {
                let u: f64 = stream.gen_range(0.0..=1.0);
                state
                    .push(domain.state_lo[dim] + (domain.state_hi[dim] - domain.state_lo[dim]) * u);
            }
            let offset: f64 = stream.gen_range(0.0..=1.0);
            state[face.dim] = face.value + face.outward * face.thickness * offset;
            let mut input = state;
            input.push(domain.t_hi * open_unit(&mut stream));
            if let Some(lambda) = sample_lambda(&mut stream) {
                input.push(lambda);
            }
            sets.boundary.push((input, target));
        }
    }

    Ok(sets)
}

/// Squared PDE residual at one collocation point, with the drift and noise
/// magnitudes frozen at sampling time (they do not depend on the network).
#[derive(Debug, Clone)]
pub struct ResidualTerm {
    input: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl ResidualTerm {
    fn residual(&self, jet: &NetJet) -> f64 {
        physics::residual_from_parts(&jet.input_grad, &jet.input_hess_diag, &self.drift, &self.sigma)
    }
}

impl JetLoss for ResidualTerm {
    fn input(&self) -> &[f64] {
        &self.input
    }

    fn loss(&self, jet: &NetJet) -> f64 {
        let r = self.residual(jet);
        r * r
    }

    fn cotangent_into(&self, jet: &NetJet, cot: &mut JetCotangent) {
        let r = self.residual(jet);
        let d = self.drift.len();
        cot.grad[d] = 2.0 * r;
        for i in 0..d {
            cot.grad[i] = -2.0 * r * self.drift[i];
            cot.hess[i] = -r * self.sigma[i] * self.sigma[i];
        }
    }
}

/// Loss terms with drifts precomputed; built once per run since the point
/// sets are fixed.
struct PreparedSets {
    physics: Vec<ResidualTerm>,
    data: Vec<FitPoint>,
    initial: Vec<FitPoint>,
    boundary: Vec<FitPoint>,
}

impl PreparedSets {
    fn new(sets: &CollocationSets, spec: &PdeSpec) -> Self {
        let d = spec.system.state_dim();
        let conditioned = spec.domain.lambda_range.is_some();
        let physics = sets
            .physics
            .iter()
            .map(|input| {
                let lambda =
                    if conditioned { input[d + 1] } else { spec.system.lambda() };
                ResidualTerm {
                    input: input.clone(),
                    drift: spec.system.closed_loop_drift(&input[..d], lambda),
                    sigma: spec.system.noise_magnitudes().to_vec(),
                }
            })
            .collect();
        let to_fit = |points: &[(Vec<f64>, f64)]| {
            points
                .iter()
                .map(|(input, target)| FitPoint { input: input.clone(), target: *target })
                .collect::<Vec<_>>()
        };
        Self {
            physics,
            data: to_fit(&sets.data),
            initial: to_fit(&sets.initial),
            boundary: to_fit(&sets.boundary),
        }
    }
}

/// Weights of the four loss groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub physics: f64,
    pub data: f64,
    pub initial: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { physics: 1.0, data: 1.0, initial: 1.0, boundary: 1.0 }
    }
}

/// Per-group loss values for one parameter vector. `total` is exactly the
/// weighted sum of the components; groups with zero weight are skipped and
/// reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub physics: f64,
    pub data: f64,
    pub initial: f64,
    pub boundary: f64,
}

fn check_group(name: &str, weight: f64, len: usize) -> Result<(), TrainError> {
    if weight < 0.0 {
        return Err(TrainError::InvalidConfig(format!("{name} weight must be nonnegative")));
    }
    if weight > 0.0 && len == 0 {
        return Err(TrainError::InvalidConfig(format!(
            "{name} loss has positive weight but no points"
        )));
    }
    Ok(())
}

fn loss_and_gradient(
    params: &MlpParams,
    prepared: &PreparedSets,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), TrainError> {
    let mut grad = vec![0.0; params.param_count()];
    let add = |target: &mut Vec<f64>, part: &[f64], w: f64| {
        for (g, p) in target.iter_mut().zip(part) {
            *g += w * p;
        }
    };
    let mut breakdown =
        LossBreakdown { total: 0.0, physics: 0.0, data: 0.0, initial: 0.0, boundary: 0.0 };
    if weights.physics > 0.0 {
        let (loss, part) = netcore::loss_param_gradient(params, &prepared.physics)?;
        breakdown.physics = loss;
        add(&mut grad, &part, weights.physics);
    }
    if weights.data > 0.0 {
        let (loss, part) = netcore::squared_error_gradient(params, &prepared.data)?;
        breakdown.data = loss;
        add(&mut grad, &part, weights.data);
    }
    if weights.initial > 0.0 {
        let (loss, part) = netcore::squared_error_gradient(params, &prepared.initial)?;
        breakdown.initial = loss;
        add(&mut grad, &part, weights.initial);
    }
    if weights.boundary > 0.0 {
        let (loss, part) = netcore::squared_error_gradient(params, &prepared.boundary)?;
        breakdown.boundary = loss;
        add(&mut grad, &part, weights.boundary);
    }
    breakdown.total = weights.physics * breakdown.physics
        + weights.data * breakdown.data
        + weights.initial * breakdown.initial
        + weights.boundary * breakdown.boundary;
    Ok((breakdown, grad))
}

/// Evaluates the composite loss without updating anything.
pub fn total_loss(
    params: &MlpParams,
    sets: &CollocationSets,
    spec: &PdeSpec,
    weights: &LossWeights,
) -> Result<LossBreakdown, TrainError> {
    check_group("physics", weights.physics, sets.physics.len())?;
    check_group("data", weights.data, sets.data.len())?;
    check_group("initial", weights.initial, sets.initial.len())?;
    check_group("boundary", weights.boundary, sets.boundary.len())?;
    let prepared = PreparedSets::new(sets, spec);
    let (breakdown, _) = loss_and_gradient(params, &prepared, weights)?;
    Ok(breakdown)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self { m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, hyper: &AdamHyper) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub weights: LossWeights,
    pub adam: AdamHyper,
    pub epochs: usize,
    pub counts: SampleCounts,
    pub init_seed: u64,
    pub sample_seed: u64,
    pub lambda_conditioned: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32, 32],
            weights: LossWeights::default(),
            adam: AdamHyper::default(),
            epochs: 60_000,
            counts: SampleCounts { physics: 10_000, initial: 400, boundary: 400 },
            init_seed: 0,
            sample_seed: 1,
            lambda_conditioned: false,
            checkpoint_every: 5_000,
        }
    }
}

/// Loss history and checkpoints of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// One entry per epoch, recorded before that epoch's update.
    pub history: Vec<LossBreakdown>,
    /// `(epoch, parameters)` snapshots every `checkpoint_every` epochs plus
    /// the final epoch.
    pub checkpoints: Vec<(usize, MlpParams)>,
    pub wall_seconds: f64,
    pub init_seed: u64,
    pub sample_seed: u64,
}

/// Trains the predictor with full-batch Adam. Deterministic given the
/// config seeds and point sets.
pub fn train(
    config: &TrainConfig,
    sets: &CollocationSets,
    spec: &PdeSpec,
) -> Result<(MlpParams, TrainReport), TrainError> {
    if config.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
    }
    if config.checkpoint_every == 0 {
        return Err(TrainError::InvalidConfig("checkpoint_every must be >= 1".into()));
    }
    if config.lambda_conditioned != spec.domain.lambda_range.is_some() {
        return Err(TrainError::InvalidConfig(
            "lambda conditioning flag disagrees with the domain's lambda range".into(),
        ));
    }
    check_group("physics", config.weights.physics, sets.physics.len())?;
    check_group("data", config.weights.data, sets.data.len())?;
    check_group("initial", config.weights.initial, sets.initial.len())?;
    check_group("boundary", config.weights.boundary, sets.boundary.len())?;

    let start = Instant::now();
    let d_in = spec.domain.input_dim();
    let mut layer_sizes = Vec::with_capacity(config.hidden.len() + 2);
    layer_sizes.push(d_in);
    layer_sizes.extend_from_slice(&config.hidden);
    layer_sizes.push(1);
    let (lo, hi) = spec.domain.input_bounds();
    let mut params = netcore::init_glorot(&layer_sizes, config.init_seed)?
        .with_input_bounds(lo, hi)?
        .with_state_dim(spec.domain.state_dim())?;

    let prepared = PreparedSets::new(sets, spec);
    let mut adam = AdamState::new(params.param_count());
    let mut history = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 0..config.epochs {
        let step = loss_and_gradient(&params, &prepared, &config.weights);
        let (breakdown, grad) = match step {
            Ok(ok) => ok,
            Err(TrainError::Net(NetError::NonFiniteGradient { .. }))
            | Err(TrainError::Net(NetError::NonFiniteSum)) => {
                return Err(TrainError::NonFiniteLoss { epoch, salvage: Box::new(params) });
            }
            Err(other) => return Err(other),
        };
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, salvage: Box::new(params) });
        }
        history.push(breakdown);
        adam_step(params.theta_mut(), &grad, &mut adam, &config.adam);
        if (epoch + 1) % config.checkpoint_every == 0 {
            checkpoints.push((epoch + 1, params.clone()));
        }
    }
    if checkpoints.last().map(|(e, _)| *e) != Some(config.epochs) {
        checkpoints.push((config.epochs, params.clone()));
    }
    let report = TrainReport {
        history,
        checkpoints,
        wall_seconds: start.elapsed().as_secs_f64(),
        init_seed: config.init_seed,
        sample_seed: config.sample_seed,
    };
    Ok((params, report))
}

fn cell_input(params: &MlpParams, spec: &GridSpec, state: Vec<f64>, t: f64) -> Vec<f64> {
    let mut input = state;
    input.push(t);
    if params.d_in() == input.len() + 1 {
        input.push(spec.lambda);
    }
    input
}

/// Network predictions on a lattice, clamped to `[0, 1]` for reporting.
/// Lambda-conditioned networks read the lattice's `lambda`.
pub fn predict_grid(
    params: &MlpParams,
    spec: &GridSpec,
    mode: Mode,
) -> Result<ProbabilityGrid, TrainError> {
    let mut values = Vec::with_capacity(spec.cell_count());
    for cell in 0..spec.cell_count() {
        let (state, t) = spec.point(cell);
        let input = cell_input(params, spec, state, t);
        values.push(netcore::forward(params, &input)?.clamp(0.0, 1.0));
    }
    ProbabilityGrid::new(spec.clone(), values, 0, mode, GridSource::Pinn)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))
}

/// Raw (unclamped) spatial derivatives of the network on a lattice, read
/// directly from the jet.
pub fn predict_gradient_grid(
    params: &MlpParams,
    spec: &GridSpec,
    axis: usize,
) -> Result<GradientGrid, TrainError> {
    if axis >= spec.state_dim() {
        return Err(TrainError::InvalidConfig(format!(
            "axis {axis} out of range for {} state dims",
            spec.state_dim()
        )));
    }
    let mut values = Vec::with_capacity(spec.cell_count());
    for cell in 0..spec.cell_count() {
        let (state, t) = spec.point(cell);
        let input = cell_input(params, spec, state, t);
        values.push(netcore::forward_jet(params, &input)?.input_grad[axis]);
    }
    Ok(GradientGrid { spec: spec.clone(), values, axis })
}

/// True when every lattice point lies inside the network's normalization
/// bounds (predictions elsewhere are extrapolation and should be flagged).
pub fn lattice_within_bounds(params: &MlpParams, spec: &GridSpec) -> bool {
    (0..spec.cell_count()).all(|cell| {
        let (state, t) = spec.point(cell);
        let input = cell_input(params, spec, state, t);
        params.input_in_bounds(&input)
    })
}
