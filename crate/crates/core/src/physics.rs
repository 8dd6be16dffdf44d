//! Convection-diffusion characterization of risk probabilities.
//!
//! The risk probability `F(x, T)` of a system `dx = f dt + sigma dw` solves
//!
//! ```text
//! dF/dT - f(x, u) . dF/dx - 1/2 sum_i sigma_i^2 d2F/dx_i^2 = 0
//! ```
//!
//! with initial condition `F(x, 0) = 1(x in C)` and a mode-dependent boundary
//! condition (1 on the safe-set boundary for recovery, 0 outside the safe set
//! for safety). This module evaluates that residual for network jets and
//! provides closed-form ground truth for the 1D drift-diffusion system, whose
//! recovery probability is the first-passage law of Brownian motion with
//! drift.

use std::f64::consts::PI;

use thiserror::Error;

use crate::dynamics::{Mode, SafeSet, SdeSystem};
use crate::netcore::NetJet;

/// Recovery boundary of the 1D drift-diffusion system (`phi(x) = x - 2`).
pub const DRIFT1D_BOUNDARY: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("shape mismatch: {0}")]
    BadShape(String),
    #[error("domain error: {0}")]
    DomainError(String),
}

/// Space-time box over which a PDE problem is posed. States live in
/// `[state_lo, state_hi]`, time in `[0, t_hi]`; `lambda_range` is present
/// only when the drift parameter is a network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub t_hi: f64,
    pub lambda_range: Option<(f64, f64)>,
}

impl Domain {
    pub fn new(state_lo: Vec<f64>, state_hi: Vec<f64>, t_hi: f64) -> Self {
        assert_eq!(state_lo.len(), state_hi.len());
        assert!(state_lo.iter().zip(&state_hi).all(|(lo, hi)| lo < hi), "state bounds must be ordered");
        assert!(t_hi > 0.0);
        Self { state_lo, state_hi, t_hi, lambda_range: None }
    }

    pub fn with_lambda_range(mut self, lo: f64, hi: f64) -> Self {
        assert!(lo < hi);
        self.lambda_range = Some((lo, hi));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_lo.len()
    }

    /// Number of network inputs for this domain: states, time, and lambda
    /// when conditioned.
    pub fn input_dim(&self) -> usize {
        self.state_dim() + 1 + usize::from(self.lambda_range.is_some())
    }

    /// Per-input normalization bounds in input order (states, T, lambda).
    pub fn input_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.state_lo.clone();
        let mut hi = self.state_hi.clone();
        lo.push(0.0);
        hi.push(self.t_hi);
        if let Some((llo, lhi)) = self.lambda_range {
            lo.push(llo);
            hi.push(lhi);
        }
        (lo, hi)
    }
}

/// One axis-aligned face of the domain where the boundary condition is
/// imposed. Sampled points sit on the face and, for positive `thickness`,
/// up to `thickness` beyond it in the `outward` direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub dim: usize,
    pub value: f64,
    pub outward: f64,
    pub thickness: f64,
}

/// The PDE problem a predictor is trained against: the system (drift under
/// its fixed policy plus diffusion magnitudes), the safe set with its event
/// mode, and the space-time domain.
#[derive(Clone)]
pub struct PdeSpec {
    pub system: SdeSystem,
    pub safe_set: SafeSet,
    pub domain: Domain,
    pub boundary_faces: Vec<BoundaryFace>,
}

impl PdeSpec {
    pub fn new(
        system: SdeSystem,
        safe_set: SafeSet,
        domain: Domain,
        boundary_faces: Vec<BoundaryFace>,
    ) -> Result<Self, PhysicsError> {
        if domain.state_dim() != system.state_dim() {
            return Err(PhysicsError::BadShape(format!(
                "domain has {} state dims, system has {}",
                domain.state_dim(),
                system.state_dim()
            )));
        }
        if let Some(face) = boundary_faces.iter().find(|f| f.dim >= system.state_dim()) {
            return Err(PhysicsError::BadShape(format!(
                "boundary face dimension {} out of range",
                face.dim
            )));
        }
        Ok(Self { system, safe_set, domain, boundary_faces })
    }

    pub fn mode(&self) -> Mode {
        self.safe_set.mode()
    }
}

/// Residual evaluated from precomputed drift and diffusion coefficients.
/// `grad` is (dF/dx_1.., dF/dT[, dF/dlambda]); `hess_diag` covers the state
/// dimensions. The time derivative sits at index `state_dim`.
pub fn residual_from_parts(grad: &[f64], hess_diag: &[f64], drift: &[f64], sigma: &[f64]) -> f64 {
    let d = drift.len();
    let mut value = grad[d];
    for i in 0..d {
        value -= drift[i] * grad[i];
        value -= 0.5 * sigma[i] * sigma[i] * hess_diag[i];
    }
    value
}

/// PDE residual of a jet at `(x, T)`, using the spec system's own lambda.
/// Zero for the true risk probability.
pub fn residual(jet: &NetJet, x: &[f64], t: f64, spec: &PdeSpec) -> Result<f64, PhysicsError> {
    residual_with_lambda(jet, x, t, spec.system.lambda(), spec)
}

/// PDE residual with an explicit drift parameter; used for
/// lambda-conditioned predictors where lambda is a network input.
pub fn residual_with_lambda(
    jet: &NetJet,
    x: &[f64],
    _t: f64,
    lambda: f64,
    spec: &PdeSpec,
) -> Result<f64, PhysicsError> {
    let d = spec.system.state_dim();
    if x.len() != d {
        return Err(PhysicsError::BadShape(format!("state has length {}, expected {}", x.len(), d)));
    }
    if jet.input_grad.len() < d + 1 || jet.input_hess_diag.len() != d {
        return Err(PhysicsError::BadShape(format!(
            "jet has {} gradient / {} hessian entries, expected >= {} / {}",
            jet.input_grad.len(),
            jet.input_hess_diag.len(),
            d + 1,
            d
        )));
    }
    let drift = spec.system.closed_loop_drift(x, lambda);
    Ok(residual_from_parts(
        &jet.input_grad,
        &jet.input_hess_diag,
        &drift,
        spec.system.noise_magnitudes(),
    ))
}

/// Initial condition `F(x, 0) = 1(x in C)` for both modes.
pub fn initial_condition(x: &[f64], safe_set: &SafeSet) -> f64 {
    if safe_set.contains(x) {
        1.0
    } else {
        0.0
    }
}

/// Boundary condition value: 1 on the safe-set boundary in recovery mode,
/// 0 outside the safe set in safety mode. Independent of `(x, T)`.
pub fn boundary_condition(mode: Mode) -> f64 {
    match mode {
        Mode::Recovery => 1.0,
        Mode::Safety => 0.0,
    }
}

/// Scaled complementary error function `exp(u^2) erfc(u)` for `u >= 0`.
/// Stable where `erfc` underflows.
fn erfcx(u: f64) -> f64 {
    if u < 25.0 {
        libm::erfc(u) * (u * u).exp()
    } else {
        // Asymptotic expansion; the u = 25 crossover keeps the truncation
        // error below 1e-15.
        let inv2u2 = 1.0 / (2.0 * u * u);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=8 {
            term *= -((2 * n - 1) as f64) * inv2u2;
            sum += term;
        }
        sum / (u * PI.sqrt())
    }
}

/// Standard normal CDF via the complementary error function; relative
/// accuracy around 1e-13 including deep tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Recovery probability of the 1D drift-diffusion system: the probability
/// that Brownian motion with drift `lambda` started at `x < 2` reaches the
/// boundary `x = 2` within horizon `T`.
///
/// The closed form is `Phi((lambda T - b)/sqrt(T)) +
/// exp(2 lambda b) Phi((-b - lambda T)/sqrt(T))` with `b = 2 - x`, evaluated
/// through the scaled complementary error function so the second term stays
/// accurate when `exp(2 lambda b)` overflows the naive factorization.
pub fn oracle_recovery_probability(x: f64, t: f64, lambda: f64) -> Result<f64, PhysicsError> {
    if !(x < DRIFT1D_BOUNDARY) {
        return Err(PhysicsError::DomainError(format!("x = {x} must be below the boundary 2")));
    }
    if !(t >= 0.0) {
        return Err(PhysicsError::DomainError(format!("T = {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let b = DRIFT1D_BOUNDARY - x;
    let sqrt_2t = (2.0 * t).sqrt();
    let first = 0.5 * libm::erfc((b - lambda * t) / sqrt_2t);
    let z = b - lambda * t;
    let second = 0.5 * erfcx((b + lambda * t) / sqrt_2t) * (-z * z / (2.0 * t)).exp();
    Ok((first + second).clamp(0.0, 1.0))
}

/// First-passage time density of the same system: the inverse-Gaussian law
/// `b exp(-(b - lambda T)^2 / (2T)) / sqrt(2 pi T^3)` with `b = 2 - x`. Its
/// time integral over `[0, T]` is [`oracle_recovery_probability`].
pub fn oracle_recovery_density(x: f64, t: f64, lambda: f64) -> Result<f64, PhysicsError> {
    if !(x < DRIFT1D_BOUNDARY) {
        return Err(PhysicsError::DomainError(format!("x = {x} must be below the boundary 2")));
    }
    if !(t > 0.0) {
        return Err(PhysicsError::DomainError(format!("T = {t} must be positive")));
    }
    let b = DRIFT1D_BOUNDARY - x;
    let z = b - lambda * t;
    Ok(b * (-z * z / (2.0 * t)).exp() / (2.0 * PI * t * t * t).sqrt())
}

/// Spatial derivative `dF/dx` of [`oracle_recovery_probability`].
pub fn oracle_recovery_gradient(x: f64, t: f64, lambda: f64) -> Result<f64, PhysicsError> {
    if !(x < DRIFT1D_BOUNDARY) {
        return Err(PhysicsError::DomainError(format!("x = {x} must be below the boundary 2")));
    }
    if !(t >= 0.0) {
        return Err(PhysicsError::DomainError(format!("T = {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let b = DRIFT1D_BOUNDARY - x;
    let sqrt_t = t.sqrt();
    let z1 = (lambda * t - b) / sqrt_t;
    let z = b - lambda * t;
    // exp(2 lambda b) Phi(-(b + lambda T)/sqrt(T)) in stable form.
    let tail = 0.5 * erfcx((b + lambda * t) / (2.0 * t).sqrt()) * (-z * z / (2.0 * t)).exp();
    Ok(2.0 * normal_pdf(z1) / sqrt_t - 2.0 * lambda * tail)
}

/// Adaptive Simpson quadrature with an absolute tolerance.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_system, BuiltinSystem};
    use crate::netcore::NetJet;
    use approx::assert_relative_eq;

    fn drift1d_spec() -> PdeSpec {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        PdeSpec::new(
            system,
            safe_set,
            Domain::new(vec![-10.0], vec![2.0], 10.0),
            vec![BoundaryFace { dim: 0, value: 2.0, outward: 1.0, thickness: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn constant_jet_has_zero_residual() {
        let spec = drift1d_spec();
        let jet = NetJet { value: 0.7, input_grad: vec![0.0, 0.0], input_hess_diag: vec![0.0] };
        assert_eq!(residual(&jet, &[-3.0], 1.0, &spec).unwrap(), 0.0);
    }

    #[test]
    fn defining_identity_of_recovery_pde() {
        // dF/dT = lambda dF/dx + 1/2 d2F/dx2 makes the residual vanish.
        let spec = drift1d_spec();
        let (gx, hxx) = (0.31, -0.12);
        let lambda = 1.0;
        let jet = NetJet {
            value: 0.4,
            input_grad: vec![gx, lambda * gx + 0.5 * hxx],
            input_hess_diag: vec![hxx],
        };
        assert_relative_eq!(residual(&jet, &[-3.0], 1.0, &spec).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn residual_is_linear_in_jet_fields() {
        let spec = drift1d_spec();
        let a = NetJet { value: 0.1, input_grad: vec![0.3, -0.2], input_hess_diag: vec![0.5] };
        let b = NetJet { value: -0.6, input_grad: vec![-1.1, 0.9], input_hess_diag: vec![0.2] };
        let sum = NetJet {
            value: a.value + b.value,
            input_grad: vec![a.input_grad[0] + b.input_grad[0], a.input_grad[1] + b.input_grad[1]],
            input_hess_diag: vec![a.input_hess_diag[0] + b.input_hess_diag[0]],
        };
        let x = [-2.5];
        let ra = residual(&a, &x, 2.0, &spec).unwrap();
        let rb = residual(&b, &x, 2.0, &spec).unwrap();
        let rsum = residual(&sum, &x, 2.0, &spec).unwrap();
        assert_relative_eq!(rsum, ra + rb, max_relative = 1e-12);
    }

    #[test]
    fn residual_rejects_bad_shapes() {
        let spec = drift1d_spec();
        let jet = NetJet { value: 0.0, input_grad: vec![0.0], input_hess_diag: vec![] };
        assert!(residual(&jet, &[-3.0], 1.0, &spec).is_err());
        let jet = NetJet { value: 0.0, input_grad: vec![0.0, 0.0], input_hess_diag: vec![0.0] };
        assert!(residual(&jet, &[-3.0, 0.0], 1.0, &spec).is_err());
    }

    #[test]
    fn initial_condition_is_indicator() {
        let (_, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        assert_eq!(initial_condition(&[3.0], &safe_set), 1.0);
        assert_eq!(initial_condition(&[1.0], &safe_set), 0.0);
        // phi(2) = 0 and the safe set is closed, so the boundary is inside.
        assert_eq!(initial_condition(&[2.0], &safe_set), 1.0);
    }

    #[test]
    fn boundary_condition_values() {
        assert_eq!(boundary_condition(Mode::Recovery), 1.0);
        assert_eq!(boundary_condition(Mode::Safety), 0.0);
    }

    #[test]
    fn oracle_limits() {
        assert_eq!(oracle_recovery_probability(-4.0, 0.0, 1.0).unwrap(), 0.0);
        let near = oracle_recovery_probability(2.0 - 1e-9, 1.0, 1.0).unwrap();
        assert!(near > 1.0 - 1e-6, "boundary limit should approach 1, got {near}");
        assert!(oracle_recovery_probability(2.0, 1.0, 1.0).is_err());
        assert!(oracle_recovery_density(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn oracle_monotonicity() {
        // Nondecreasing in T and in x toward the boundary for lambda >= 0.
        for &lambda in &[0.0, 0.5, 1.0, 2.0] {
            let mut prev = 0.0;
            for i in 0..60 {
                let t = 0.05 + 10.0 * i as f64 / 59.0;
                let v = oracle_recovery_probability(-1.0, t, lambda).unwrap();
                assert!(v + 1e-12 >= prev, "not monotone in T at lambda={lambda}");
                prev = v;
            }
            let mut prev = 0.0;
            for i in 0..60 {
                let x = -10.0 + 11.9 * i as f64 / 59.0;
                let v = oracle_recovery_probability(x, 4.0, lambda).unwrap();
                assert!(v + 1e-12 >= prev, "not monotone in x at lambda={lambda}");
                prev = v;
            }
        }
    }

    #[test]
    fn driftless_density_value() {
        // lambda=0, b=1, T=1: the printed law reduces to exp(-1/2)/sqrt(2 pi).
        let v = oracle_recovery_density(1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp() / (2.0 * PI).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn density_nonnegative() {
        for &lambda in &[0.0, 1.0, 2.0] {
            for i in 1..40 {
                let t = 10.0 * i as f64 / 40.0;
                for j in 0..40 {
                    let x = -10.0 + 11.5 * j as f64 / 39.0;
                    assert!(oracle_recovery_density(x, t, lambda).unwrap() >= 0.0);
                }
            }
        }
    }

    #[test]
    fn density_integrates_to_probability() {
        for &(x, t, lambda) in
            &[(-1.0, 4.0, 1.0), (-4.0, 8.0, 0.5), (0.5, 2.0, 0.0), (-8.0, 10.0, 2.0)]
        {
            let cdf = oracle_recovery_probability(x, t, lambda).unwrap();
            let quad = integrate_adaptive(
                |s| if s <= 0.0 { 0.0 } else { oracle_recovery_density(x, s, lambda).unwrap() },
                0.0,
                t,
                1e-10,
            );
            assert_relative_eq!(quad, cdf, epsilon = 1e-7);
        }
    }

    #[test]
    fn driftless_probability_closed_form() {
        // lambda=0 reduces to the reflection principle: 2 Phi(-b/sqrt(T)).
        for &(x, t) in &[(-2.0f64, 3.0f64), (0.0, 1.0), (-7.0, 9.0)] {
            let b = 2.0 - x;
            let expect = 2.0 * normal_cdf(-b / t.sqrt());
            let got = oracle_recovery_probability(x, t, 0.0).unwrap();
            assert_relative_eq!(got, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(x, t, lambda) in &[(-1.0, 4.0, 1.0), (-5.0, 9.0, 0.7), (-0.5, 1.5, 0.0)] {
            let fd = (oracle_recovery_probability(x + h, t, lambda).unwrap()
                - oracle_recovery_probability(x - h, t, lambda).unwrap())
                / (2.0 * h);
            let exact = oracle_recovery_gradient(x, t, lambda).unwrap();
            assert_relative_eq!(exact, fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn oracle_satisfies_pde_via_finite_differences() {
        // Central-difference jets of the closed form have small residual.
        let spec = drift1d_spec();
        let (hx, ht) = (1e-4, 1e-4);
        let lambda = 1.0;
        let mut worst: f64 = 0.0;
        for i in 0..12 {
            let x = -9.5 + 7.0 * i as f64 / 11.0;
            for j in 0..12 {
                let t = 0.5 + 9.0 * j as f64 / 11.0;
                let f = |x: f64, t: f64| oracle_recovery_probability(x, t, lambda).unwrap();
                let grad_x = (f(x + hx, t) - f(x - hx, t)) / (2.0 * hx);
                let grad_t = (f(x, t + ht) - f(x, t - ht)) / (2.0 * ht);
                let hess = (f(x + hx, t) - 2.0 * f(x, t) + f(x - hx, t)) / (hx * hx);
                let jet = NetJet {
                    value: f(x, t),
                    input_grad: vec![grad_x, grad_t],
                    input_hess_diag: vec![hess],
                };
                worst = worst.max(residual(&jet, &[x], t, &spec).unwrap().abs());
            }
        }
        assert!(worst <= 1e-3, "max |residual| = {worst}");
    }

    #[test]
    fn erfcx_branches_agree() {
        // The asymptotic branch (u >= 25) must match the direct product
        // where the latter is still representable.
        for &u in &[25.2f64, 25.8, 26.2] {
            let direct = libm::erfc(u) * (u * u).exp();
            assert_relative_eq!(erfcx(u), direct, max_relative = 1e-11);
        }
    }

    #[test]
    fn adaptive_simpson_on_polynomial() {
        let v = integrate_adaptive(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12);
        assert_relative_eq!(v, 16.0, epsilon = 1e-10);
    }
}
