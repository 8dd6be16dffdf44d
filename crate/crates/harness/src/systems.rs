//! PDE problem builders for the built-in systems.

use std::f64::consts::PI;
use std::sync::Arc;

use pipe_core::dynamics::{builtin_system, BuiltinSystem, Mode, SafeSet, SdeSystem};
use pipe_core::physics::{BoundaryFace, Domain, PdeSpec};

/// 1D drift-diffusion recovery problem on `[-10, 2] x [0, 10]`.
/// `lambda_range` switches on lambda conditioning (adaptation experiment).
pub fn drift1d_spec(lambda: f64, lambda_range: Option<(f64, f64)>) -> PdeSpec {
    let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
    let mut domain = Domain::new(vec![-10.0], vec![2.0], 10.0);
    if let Some((lo, hi)) = lambda_range {
        domain = domain.with_lambda_range(lo, hi);
    }
    PdeSpec::new(
        system.with_lambda(lambda),
        safe_set,
        domain,
        vec![BoundaryFace { dim: 0, value: 2.0, outward: 1.0, thickness: 0.0 }],
    )
    .expect("valid drift1d spec")
}

/// Closed-loop 1D safety problem on `[1, 10] x [0, 10]`. The boundary
/// condition holds for all `x <= 1`, so boundary samples extend slightly
/// below the face.
pub fn closedloop_spec() -> PdeSpec {
    let (system, safe_set) = builtin_system(BuiltinSystem::ClosedLoop1D);
    PdeSpec::new(
        system,
        safe_set,
        Domain::new(vec![1.0], vec![10.0], 10.0),
        vec![BoundaryFace { dim: 0, value: 1.0, outward: -1.0, thickness: 0.2 }],
    )
    .expect("valid closedloop spec")
}

/// Cart-pendulum safety probability is invariant to the cart position (the
/// dynamics and the barrier depend only on velocity, angle, and angular
/// velocity), so the learning problem uses the exact 3D marginal system over
/// `(xdot, theta, thetadot)`. The drift delegates to the full 4D model with
/// the position pinned at zero, which keeps the two in lockstep.
pub fn reduced_pendulum() -> (SdeSystem, SafeSet) {
    let (full, _) = builtin_system(BuiltinSystem::CartPendulum);
    let sigma = full.noise_magnitudes()[1];
    let policy_full = full.clone();
    let drift_full = full.clone();
    let system = SdeSystem::new(
        3,
        1,
        0.0,
        vec![sigma, 0.0, sigma],
        Arc::new(move |x: &[f64], u: &[f64], _lambda: f64, out: &mut [f64]| {
            let lifted = [0.0, x[0], x[1], x[2]];
            let mut full_out = [0.0; 4];
            drift_full.drift_into(&lifted, u, &mut full_out);
            out.copy_from_slice(&full_out[1..4]);
        }),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let lifted = [0.0, x[0], x[1], x[2]];
            policy_full.policy_into(&lifted, out);
        }),
    )
    .expect("valid reduced pendulum");
    let safe_set = SafeSet::new(
        Arc::new(|x: &[f64]| {
            let ratio = x[1] / (PI / 3.0);
            1.0 - ratio * ratio
        }),
        Mode::Safety,
    );
    (system, safe_set)
}

/// PDE problem for the reduced pendulum on
/// `[-10, 10] x [-pi/3, pi/3] x [-pi, pi] x [0, 1]`.
pub fn pendulum_spec() -> PdeSpec {
    let (system, safe_set) = reduced_pendulum();
    let theta_max = PI / 3.0;
    let thickness = 0.02 * 2.0 * theta_max;
    PdeSpec::new(
        system,
        safe_set,
        Domain::new(vec![-10.0, -theta_max, -PI], vec![10.0, theta_max, PI], 1.0),
        vec![
            BoundaryFace { dim: 1, value: -theta_max, outward: -1.0, thickness },
            BoundaryFace { dim: 1, value: theta_max, outward: 1.0, thickness },
        ],
    )
    .expect("valid pendulum spec")
}
