//! Estimation of long-term risk probabilities and their gradients for
//! stochastic control systems.
//!
//! The toolkit combines three routes to the same quantity: Monte Carlo
//! simulation of system trajectories ([`montecarlo`]), the convection-
//! diffusion equation the probability satisfies ([`physics`]), and a small
//! tanh network trained against both ([`netcore`], [`training`]). A
//! thin-plate-spline baseline ([`baselines`]) provides the non-physics
//! comparison. Everything is deterministic given its seeds.

pub mod baselines;
pub mod dynamics;
pub mod montecarlo;
pub mod netcore;
pub mod physics;
pub mod rng;
pub mod training;
