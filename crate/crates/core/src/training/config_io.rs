//! Flat key-value text format for training configurations, plus the loss
//! history CSV.
//!
//! Config lines are `key = value`; `#` starts a comment. Vector values are
//! comma-separated. Keys mirror [`TrainConfig`] and the domain bounds:
//!
//! ```text
//! hidden = 32,32,32
//! omega_p = 1
//! omega_d = 1
//! omega_ic = 1
//! omega_bc = 1
//! learning_rate = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//! epochs = 60000
//! physics_points = 10000
//! initial_points = 400
//! boundary_points = 400
//! init_seed = 0
//! sample_seed = 1
//! lambda_conditioned = false
//! checkpoint_every = 5000
//! state_lo = -10
//! state_hi = 2
//! t_hi = 10
//! lambda_lo = 0     # only with lambda_conditioned = true
//! lambda_hi = 2
//! ```

use thiserror::Error;

use super::{LossBreakdown, SampleCounts, TrainConfig};
use crate::physics::Domain;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    NotKeyValue { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Serializes a config and its domain to the flat key-value format.
pub fn render_train_config(config: &TrainConfig, domain: &Domain) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    out.push_str(&format!(
        "hidden = {}\n",
        config.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    ));
    out.push_str(&format!("omega_p = {}\n", config.weights.physics));
    out.push_str(&format!("omega_d = {}\n", config.weights.data));
    out.push_str(&format!("omega_ic = {}\n", config.weights.initial));
    out.push_str(&format!("omega_bc = {}\n", config.weights.boundary));
    out.push_str(&format!("learning_rate = {}\n", config.adam.learning_rate));
    out.push_str(&format!("beta1 = {}\n", config.adam.beta1));
    out.push_str(&format!("beta2 = {}\n", config.adam.beta2));
    out.push_str(&format!("epsilon = {}\n", config.adam.epsilon));
    out.push_str(&format!("epochs = {}\n", config.epochs));
    out.push_str(&format!("physics_points = {}\n", config.counts.physics));
    out.push_str(&format!("initial_points = {}\n", config.counts.initial));
    out.push_str(&format!("boundary_points = {}\n", config.counts.boundary));
    out.push_str(&format!("init_seed = {}\n", config.init_seed));
    out.push_str(&format!("sample_seed = {}\n", config.sample_seed));
    out.push_str(&format!("lambda_conditioned = {}\n", config.lambda_conditioned));
    out.push_str(&format!("checkpoint_every = {}\n", config.checkpoint_every));
    out.push_str(&format!("state_lo = {}\n", join(&domain.state_lo)));
    out.push_str(&format!("state_hi = {}\n", join(&domain.state_hi)));
    out.push_str(&format!("t_hi = {}\n", domain.t_hi));
    if let Some((lo, hi)) = domain.lambda_range {
        out.push_str(&format!("lambda_lo = {lo}\nlambda_hi = {hi}\n"));
    }
    out
}

/// Parses the flat key-value format into a config and domain. Unlisted keys
/// take their defaults; the domain bounds are required.
pub fn parse_train_config(text: &str) -> Result<(TrainConfig, Domain), ConfigError> {
    let mut config = TrainConfig::default();
    let mut state_lo: Option<Vec<f64>> = None;
    let mut state_hi: Option<Vec<f64>> = None;
    let mut t_hi: Option<f64> = None;
    let mut lambda_lo: Option<f64> = None;
    let mut lambda_hi: Option<f64> = None;

    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(ConfigError::NotKeyValue { line })?;
        let bad = |reason: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let parse_f64 =
            |v: &str| v.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| bad(&e.to_string()));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(&e.to_string()));
        let parse_f64_list = |v: &str| -> Result<Vec<f64>, ConfigError> {
            v.split(',').map(|tok| tok.trim().parse::<f64>().map_err(|e| bad(&e.to_string()))).collect()
        };
        match key {
            "hidden" => {
                config.hidden = value
                    .split(',')
                    .map(|tok| tok.trim().parse::<usize>().map_err(|e| bad(&e.to_string())))
                    .collect::<Result<_, _>>()?;
            }
            "omega_p" => config.weights.physics = parse_f64(value)?,
            "omega_d" => config.weights.data = parse_f64(value)?,
            "omega_ic" => config.weights.initial = parse_f64(value)?,
            "omega_bc" => config.weights.boundary = parse_f64(value)?,
            "learning_rate" => config.adam.learning_rate = parse_f64(value)?,
            "beta1" => config.adam.beta1 = parse_f64(value)?,
            "beta2" => config.adam.beta2 = parse_f64(value)?,
            "epsilon" => config.adam.epsilon = parse_f64(value)?,
            "epochs" => config.epochs = parse_usize(value)?,
            "physics_points" => config.counts.physics = parse_usize(value)?,
            "initial_points" => config.counts.initial = parse_usize(value)?,
            "boundary_points" => config.counts.boundary = parse_usize(value)?,
            "init_seed" => config.init_seed = parse_u64(value)?,
            "sample_seed" => config.sample_seed = parse_u64(value)?,
            "lambda_conditioned" => {
                config.lambda_conditioned =
                    value.parse::<bool>().map_err(|e| bad(&e.to_string()))?;
            }
            "checkpoint_every" => config.checkpoint_every = parse_usize(value)?,
            "state_lo" => state_lo = Some(parse_f64_list(value)?),
            "state_hi" => state_hi = Some(parse_f64_list(value)?),
            "t_hi" => t_hi = Some(parse_f64(value)?),
            "lambda_lo" => lambda_lo = Some(parse_f64(value)?),
            "lambda_hi" => lambda_hi = Some(parse_f64(value)?),
            other => {
                return Err(ConfigError::UnknownKey { line, key: other.to_string() });
            }
        }
    }

    let state_lo = state_lo.ok_or(ConfigError::MissingKey("state_lo"))?;
    let state_hi = state_hi.ok_or(ConfigError::MissingKey("state_hi"))?;
    let t_hi = t_hi.ok_or(ConfigError::MissingKey("t_hi"))?;
    if state_lo.len() != state_hi.len() {
        return Err(ConfigError::Invalid("state_lo and state_hi lengths differ".into()));
    }
    if state_lo.iter().zip(&state_hi).any(|(lo, hi)| !(lo < hi)) {
        return Err(ConfigError::Invalid("state bounds must be ordered".into()));
    }
    if !(t_hi > 0.0) {
        return Err(ConfigError::Invalid("t_hi must be positive".into()));
    }
    let mut domain = Domain::new(state_lo, state_hi, t_hi);
    match (config.lambda_conditioned, lambda_lo, lambda_hi) {
        (true, Some(lo), Some(hi)) if lo < hi => domain = domain.with_lambda_range(lo, hi),
        (true, _, _) => {
            return Err(ConfigError::Invalid(
                "lambda_conditioned = true requires ordered lambda_lo/lambda_hi".into(),
            ));
        }
        (false, None, None) => {}
        (false, _, _) => {
            return Err(ConfigError::Invalid(
                "lambda_lo/lambda_hi given but lambda_conditioned = false".into(),
            ));
        }
    }
    Ok((config, domain))
}

/// Renders a loss history as `epoch,L,L_p,L_d,L_ic,L_bc` CSV.
pub fn render_loss_history(history: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch,L,L_p,L_d,L_ic,L_bc\n");
    for (epoch, b) in history.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            epoch + 1,
            b.total,
            b.physics,
            b.data,
            b.initial,
            b.boundary
        ));
    }
    out
}

/// Convenience: a default config whose counts match a quick desk run.
pub fn desk_defaults() -> (TrainConfig, SampleCounts) {
    let config = TrainConfig::default();
    let counts = config.counts;
    (config, counts)
}
