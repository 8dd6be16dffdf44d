//! Stochastic system definitions, safe sets, and trajectory simulation.
//!
//! Systems follow the controlled SDE form `dx = f(x, u) dt + sigma dw` with a
//! drift parameterized by a scalar `lambda` and a fixed feedback policy
//! `u = pi(x)`. Safety is encoded by a barrier function `phi`: the safe set is
//! its super-level set `{x | phi(x) >= 0}`. Trajectories are integrated with
//! explicit Euler–Maruyama and stop at the first safety event (entry into the
//! safe set in `Recovery` mode, exit from it in `Safety` mode).

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Drift field: writes `f(x, u, lambda)` into the output slice.
pub type DriftFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;
/// Feedback policy: writes `u = pi(x)` into the output slice.
pub type PolicyFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// Barrier function `phi(x)`.
pub type BarrierFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Debug, Error)]
pub enum DynamicsError {
    /// A state or drift component became NaN or infinite during integration.
    #[error("non-finite value in state dimension {dim} at time {time}")]
    NonFiniteState { dim: usize, time: f64 },
    #[error("unknown builtin system `{0}`")]
    UnknownSystem(String),
    #[error("invalid system definition: {0}")]
    InvalidSystem(String),
}

/// Whether the event of interest is leaving the safe set or reaching it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Event: first exit from the safe set. The risk probability is the
    /// chance of *no* event over the horizon.
    Safety,
    /// Event: first entry into the safe set. The risk probability is the
    /// chance of the event occurring within the horizon.
    Recovery,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Safety => "safety",
            Mode::Recovery => "recovery",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safety" => Ok(Mode::Safety),
            "recovery" => Ok(Mode::Recovery),
            other => Err(format!("unknown mode `{other}` (expected safety|recovery)")),
        }
    }
}

/// A controlled stochastic system `dx = f(x, u) dt + sigma dw` under a fixed
/// feedback policy. Immutable after construction; cheap to clone.
#[derive(Clone)]
pub struct SdeSystem {
    state_dim: usize,
    control_dim: usize,
    lambda: f64,
    noise_magnitudes: Vec<f64>,
    drift: Arc<DriftFn>,
    control_policy: Arc<PolicyFn>,
}

impl SdeSystem {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        lambda: f64,
        noise_magnitudes: Vec<f64>,
        drift: Arc<DriftFn>,
        control_policy: Arc<PolicyFn>,
    ) -> Result<Self, DynamicsError> {
        if state_dim == 0 {
            return Err(DynamicsError::InvalidSystem("state_dim must be positive".into()));
        }
        if noise_magnitudes.len() != state_dim {
            return Err(DynamicsError::InvalidSystem(format!(
                "noise_magnitudes has length {} but state_dim is {}",
                noise_magnitudes.len(),
                state_dim
            )));
        }
        if noise_magnitudes.iter().any(|s| !(*s >= 0.0)) {
            return Err(DynamicsError::InvalidSystem("noise magnitudes must be >= 0".into()));
        }
        Ok(Self { state_dim, control_dim, lambda, noise_magnitudes, drift, control_policy })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn noise_magnitudes(&self) -> &[f64] {
        &self.noise_magnitudes
    }

    /// Same system with a different drift parameter.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut sys = self.clone();
        sys.lambda = lambda;
        sys
    }

    /// Evaluates the drift at `(x, u)` with the system's own `lambda`.
    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(x, u, self.lambda, out);
    }

    /// Evaluates the drift at `(x, u)` with an explicit `lambda`.
    pub fn drift_into_with_lambda(&self, x: &[f64], u: &[f64], lambda: f64, out: &mut [f64]) {
        (self.drift)(x, u, lambda, out);
    }

    /// Evaluates the feedback policy.
    pub fn policy_into(&self, x: &[f64], out: &mut [f64]) {
        (self.control_policy)(x, out);
    }

    /// Closed-loop drift `f(x, pi(x))` with an explicit `lambda`.
    pub fn closed_loop_drift(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.control_dim];
        let mut f = vec![0.0; self.state_dim];
        self.policy_into(x, &mut u);
        self.drift_into_with_lambda(x, &u, lambda, &mut f);
        f
    }
}

/// Super-level set of a barrier function, tagged with the event mode.
#[derive(Clone)]
pub struct SafeSet {
    barrier: Arc<BarrierFn>,
    mode: Mode,
}

impl SafeSet {
    pub fn new(barrier: Arc<BarrierFn>, mode: Mode) -> Self {
        Self { barrier, mode }
    }

    pub fn barrier(&self, x: &[f64]) -> f64 {
        (self.barrier)(x)
    }

    /// Membership is exactly `phi(x) >= 0`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.barrier(x) >= 0.0
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// True when the mode's event has occurred at `x`.
    pub fn event_at(&self, x: &[f64]) -> bool {
        match self.mode {
            Mode::Recovery => self.contains(x),
            Mode::Safety => !self.contains(x),
        }
    }
}

/// One simulated sample path on a uniform time lattice.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<f64>,
    state_dim: usize,
    event_time: Option<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// First time the mode's safety event was detected, if any.
    pub fn event_time(&self) -> Option<f64> {
        self.event_time
    }
}

/// One explicit Euler–Maruyama step:
/// `x' = x + f(x, pi(x)) dt + sigma_i sqrt(dt) noise_i` per dimension.
pub fn step_euler_maruyama(
    system: &SdeSystem,
    x: &[f64],
    dt: f64,
    noise: &[f64],
) -> Result<Vec<f64>, DynamicsError> {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(noise.len(), system.state_dim(), "noise length must equal state_dim");
    assert_eq!(x.len(), system.state_dim(), "state length must equal state_dim");
    let mut u = vec![0.0; system.control_dim()];
    let mut f = vec![0.0; system.state_dim()];
    let mut out = x.to_vec();
    step_into(system, &mut out, dt, noise, &mut u, &mut f, 0.0)?;
    Ok(out)
}

/// In-place step on `x` using caller-provided scratch. `time` is only used in
/// error diagnostics.
fn step_into(
    system: &SdeSystem,
    x: &mut [f64],
    dt: f64,
    noise: &[f64],
    u: &mut [f64],
    f: &mut [f64],
    time: f64,
) -> Result<(), DynamicsError> {
    system.policy_into(x, u);
    system.drift_into(x, u, f);
    let sqrt_dt = dt.sqrt();
    for dim in 0..x.len() {
        let next = x[dim] + f[dim] * dt + system.noise_magnitudes[dim] * sqrt_dt * noise[dim];
        if !next.is_finite() {
            return Err(DynamicsError::NonFiniteState { dim, time });
        }
        x[dim] = next;
    }
    Ok(())
}

/// Scratch-reusing trajectory engine. One engine per worker; streams are
/// owned by the caller so simulation stays a pure function of its stream.
pub(crate) struct TrajectoryEngine {
    x: Vec<f64>,
    u: Vec<f64>,
    f: Vec<f64>,
    noise: Vec<f64>,
}

impl TrajectoryEngine {
    pub(crate) fn new(system: &SdeSystem) -> Self {
        Self {
            x: vec![0.0; system.state_dim()],
            u: vec![0.0; system.control_dim()],
            f: vec![0.0; system.state_dim()],
            noise: vec![0.0; system.state_dim()],
        }
    }

    /// Steps until the event or the horizon, invoking `record` after the
    /// initial state and after each accepted step. Returns the event time.
    pub(crate) fn run<F>(
        &mut self,
        system: &SdeSystem,
        safe_set: &SafeSet,
        x0: &[f64],
        horizon: f64,
        dt: f64,
        stream: &mut ChaCha8Rng,
        mut record: F,
    ) -> Result<Option<f64>, DynamicsError>
    where
        F: FnMut(f64, &[f64]),
    {
        assert!(dt > 0.0 && horizon >= dt, "require horizon >= dt > 0");
        self.x.copy_from_slice(x0);
        record(0.0, &self.x);
        if safe_set.event_at(&self.x) {
            return Ok(Some(0.0));
        }
        let steps = (horizon / dt).ceil() as usize;
        for k in 1..=steps {
            // One standard-normal draw per dimension, consumed in dimension
            // order; this is the reproducibility contract.
            for n in self.noise.iter_mut() {
                *n = stream.sample(StandardNormal);
            }
            let t = k as f64 * dt;
            step_into(system, &mut self.x, dt, &self.noise, &mut self.u, &mut self.f, t)?;
            record(t, &self.x);
            if safe_set.event_at(&self.x) {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

/// Simulates one trajectory, recording every visited state. Stops stepping at
/// the first safety event (the boundary is absorbing in both modes).
pub fn simulate_trajectory(
    system: &SdeSystem,
    safe_set: &SafeSet,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    stream: &mut ChaCha8Rng,
) -> Result<Trajectory, DynamicsError> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut engine = TrajectoryEngine::new(system);
    let event_time = engine.run(system, safe_set, x0, horizon, dt, stream, |t, x| {
        times.push(t);
        states.extend_from_slice(x);
    })?;
    Ok(Trajectory { times, states, state_dim: system.state_dim(), event_time })
}

/// First event time without recording states; used by Monte Carlo estimation.
pub fn first_event_time(
    system: &SdeSystem,
    safe_set: &SafeSet,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    stream: &mut ChaCha8Rng,
) -> Result<Option<f64>, DynamicsError> {
    TrajectoryEngine::new(system).run(system, safe_set, x0, horizon, dt, stream, |_, _| {})
}

/// Built-in systems used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinSystem {
    /// 1D `dx = lambda dt + dw`, recovery into `{x >= 2}`.
    DriftDiffusion1D,
    /// 1D `dx = (2x - 2.5x) dt + 2 dw`, safety within `{x >= 1}`.
    ClosedLoop1D,
    /// Cart-pole under a stabilizing proportional controller, safety within
    /// `{|theta| <= pi/3}`.
    CartPendulum,
}

impl FromStr for BuiltinSystem {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drift1d" => Ok(BuiltinSystem::DriftDiffusion1D),
            "closedloop1d" => Ok(BuiltinSystem::ClosedLoop1D),
            "cartpendulum" => Ok(BuiltinSystem::CartPendulum),
            other => Err(DynamicsError::UnknownSystem(other.to_string())),
        }
    }
}

/// Cart-pendulum physical parameters.
pub mod pendulum {
    /// Cart mass.
    pub const CART_MASS: f64 = 1.0;
    /// Pendulum mass.
    pub const POLE_MASS: f64 = 0.1;
    /// Gravity.
    pub const GRAVITY: f64 = 9.8;
    /// Pendulum length.
    pub const LENGTH: f64 = 0.5;
    /// Cart friction coefficient.
    pub const CART_FRICTION: f64 = 0.05;
    /// Pole friction coefficient.
    pub const POLE_FRICTION: f64 = 0.1;
    /// Proportional feedback gain over `[x, xdot, theta, thetadot]`.
    pub const GAIN: [f64; 4] = [0.0, -0.9148, -22.1636, -14.3992];
    /// Noise magnitude on the velocity dimensions.
    pub const NOISE: f64 = 1.0;
}

/// Cart-pendulum drift: solves the configuration-dependent mass matrix
/// against the force vector plus the control channel each call.
fn cart_pendulum_drift(x: &[f64], u: &[f64], out: &mut [f64]) {
    use pendulum::*;
    let (xdot, theta, thetadot) = (x[1], x[2], x[3]);
    let (m, big_m, g, l) = (POLE_MASS, CART_MASS, GRAVITY, LENGTH);
    let cos_t = theta.cos();
    let sin_t = theta.sin();
    let mass = Matrix4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, m + big_m, 0.0, m * l * cos_t, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, m * l * cos_t, 0.0, m * l * l,
    );
    let force = Vector4::new(
        xdot,
        m * l * thetadot * thetadot * sin_t - CART_FRICTION * xdot + u[0],
        thetadot,
        m * g * l * sin_t - POLE_FRICTION * l * thetadot,
    );
    let solved = mass.lu().solve(&force).expect("pendulum mass matrix is invertible");
    out.copy_from_slice(solved.as_slice());
}

/// Constructs a built-in system together with its safe set.
pub fn builtin_system(name: BuiltinSystem) -> (SdeSystem, SafeSet) {
    match name {
        BuiltinSystem::DriftDiffusion1D => {
            let system = SdeSystem::new(
                1,
                0,
                1.0,
                vec![1.0],
                Arc::new(|_x: &[f64], _u: &[f64], lambda: f64, out: &mut [f64]| out[0] = lambda),
                Arc::new(|_x: &[f64], _out: &mut [f64]| {}),
            )
            .expect("valid builtin");
            let safe_set = SafeSet::new(Arc::new(|x: &[f64]| x[0] - 2.0), Mode::Recovery);
            (system, safe_set)
        }
        BuiltinSystem::ClosedLoop1D => {
            let system = SdeSystem::new(
                1,
                1,
                0.0,
                vec![2.0],
                Arc::new(|x: &[f64], u: &[f64], _lambda: f64, out: &mut [f64]| {
                    out[0] = 2.0 * x[0] + u[0]
                }),
                Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -2.5 * x[0]),
            )
            .expect("valid builtin");
            let safe_set = SafeSet::new(Arc::new(|x: &[f64]| x[0] - 1.0), Mode::Safety);
            (system, safe_set)
        }
        BuiltinSystem::CartPendulum => {
            let system = SdeSystem::new(
                4,
                1,
                0.0,
                vec![0.0, pendulum::NOISE, 0.0, pendulum::NOISE],
                Arc::new(|x: &[f64], u: &[f64], _lambda: f64, out: &mut [f64]| {
                    cart_pendulum_drift(x, u, out)
                }),
                Arc::new(|x: &[f64], out: &mut [f64]| {
                    out[0] = -pendulum::GAIN.iter().zip(x).map(|(k, xi)| k * xi).sum::<f64>()
                }),
            )
            .expect("valid builtin");
            let safe_set = SafeSet::new(
                Arc::new(|x: &[f64]| {
                    let ratio = x[2] / (PI / 3.0);
                    1.0 - ratio * ratio
                }),
                Mode::Safety,
            );
            (system, safe_set)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn zero_noise_drift_step() {
        let (system, _) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let next = step_euler_maruyama(&system, &[0.0], 0.01, &[0.0]).unwrap();
        assert_relative_eq!(next[0], 0.01, max_relative = 1e-15);
    }

    #[test]
    fn unit_noise_step() {
        // sqrt(0.01) = 0.1 so the update is 0.01 + 0.1.
        let (system, _) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let next = step_euler_maruyama(&system, &[0.0], 0.01, &[1.0]).unwrap();
        assert_relative_eq!(next[0], 0.11, max_relative = 1e-15);
    }

    #[test]
    fn closed_loop_drift_step() {
        // 2x - 2.5x = -0.5x; from x=3 with dt=0.1: 3 - 0.15 = 2.85.
        let (system, _) = builtin_system(BuiltinSystem::ClosedLoop1D);
        let next = step_euler_maruyama(&system, &[3.0], 0.1, &[0.0]).unwrap();
        assert_relative_eq!(next[0], 2.85, max_relative = 1e-15);
    }

    #[test]
    fn non_finite_state_reports_dimension() {
        let system = SdeSystem::new(
            2,
            0,
            0.0,
            vec![0.0, 0.0],
            Arc::new(|_x: &[f64], _u: &[f64], _l: f64, out: &mut [f64]| {
                out[0] = 0.0;
                out[1] = f64::INFINITY;
            }),
            Arc::new(|_x: &[f64], _out: &mut [f64]| {}),
        )
        .unwrap();
        let err = step_euler_maruyama(&system, &[0.0, 0.0], 0.1, &[0.0, 0.0]).unwrap_err();
        match err {
            DynamicsError::NonFiniteState { dim, .. } => assert_eq!(dim, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn recovery_event_at_start() {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let mut stream = rng::stream(0);
        let traj =
            simulate_trajectory(&system, &safe_set, &[2.5], 1.0, 0.01, &mut stream).unwrap();
        assert_eq!(traj.event_time(), Some(0.0));
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn safety_event_at_start() {
        let (system, safe_set) = builtin_system(BuiltinSystem::ClosedLoop1D);
        let mut stream = rng::stream(0);
        let traj =
            simulate_trajectory(&system, &safe_set, &[0.5], 1.0, 0.01, &mut stream).unwrap();
        assert_eq!(traj.event_time(), Some(0.0));
    }

    #[test]
    fn trajectories_are_deterministic() {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let run = || {
            let mut stream = rng::stream(1234);
            simulate_trajectory(&system, &safe_set, &[-1.0], 2.0, 0.01, &mut stream).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.times(), b.times());
        assert_eq!(a.event_time(), b.event_time());
        for i in 0..a.len() {
            assert_eq!(a.state(i), b.state(i));
        }
    }

    #[test]
    fn drift_only_matches_explicit_euler() {
        // With all noise magnitudes zero the path is the Euler recurrence.
        let system = SdeSystem::new(
            1,
            0,
            0.0,
            vec![0.0],
            Arc::new(|x: &[f64], _u: &[f64], _l: f64, out: &mut [f64]| out[0] = -x[0]),
            Arc::new(|_x: &[f64], _out: &mut [f64]| {}),
        )
        .unwrap();
        let safe_set = SafeSet::new(Arc::new(|_x: &[f64]| 1.0), Mode::Safety);
        let mut stream = rng::stream(5);
        let traj = simulate_trajectory(&system, &safe_set, &[1.0], 1.0, 0.1, &mut stream).unwrap();
        let mut expect = 1.0;
        for i in 1..traj.len() {
            expect += -expect * 0.1;
            assert_relative_eq!(traj.state(i)[0], expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn recovery_event_monotonicity() {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        for seed in 0..32 {
            let mut stream = rng::stream(seed);
            let traj =
                simulate_trajectory(&system, &safe_set, &[-0.5], 5.0, 0.01, &mut stream).unwrap();
            if let Some(event) = traj.event_time() {
                for i in 0..traj.len() {
                    if traj.times()[i] < event {
                        assert!(safe_set.barrier(traj.state(i)) < 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_time_spacing() {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let mut stream = rng::stream(9);
        let traj =
            simulate_trajectory(&system, &safe_set, &[-8.0], 1.0, 0.01, &mut stream).unwrap();
        assert_eq!(traj.times()[0], 0.0);
        for w in traj.times().windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.01, max_relative = 1e-9);
        }
    }

    #[test]
    fn builtin_barriers() {
        let (_, dd) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        assert_eq!(dd.barrier(&[2.0]), 0.0);
        assert!(dd.contains(&[2.0]));
        let (_, cp) = builtin_system(BuiltinSystem::CartPendulum);
        assert_eq!(cp.barrier(&[0.3, -2.0, 0.0, 5.0]), 1.0);
        assert!(cp.barrier(&[0.0, 0.0, PI / 2.0, 0.0]) < 0.0);
    }

    #[test]
    fn pendulum_equilibrium() {
        let (system, _) = builtin_system(BuiltinSystem::CartPendulum);
        let mut out = vec![0.0; 4];
        system.drift_into(&[0.0, 0.0, 0.0, 0.0], &[0.0], &mut out);
        for v in &out {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pendulum_drift_is_odd() {
        // Negating (xdot, theta, thetadot) negates the closed-loop drift.
        let (system, _) = builtin_system(BuiltinSystem::CartPendulum);
        let states = [
            [0.0, 1.0, 0.4, -0.7],
            [0.0, -3.0, -0.9, 2.0],
            [0.0, 0.2, 1.0, 0.5],
        ];
        for x in &states {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let f_pos = system.closed_loop_drift(x, 0.0);
            let f_neg = system.closed_loop_drift(&neg, 0.0);
            for dim in 0..4 {
                assert_relative_eq!(f_neg[dim], -f_pos[dim], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unknown_system_name() {
        let err = "pendulum-on-mars".parse::<BuiltinSystem>().unwrap_err();
        assert!(matches!(err, DynamicsError::UnknownSystem(_)));
    }
}
