//! The six reproduction experiments.

pub mod adaptation;
pub mod closedloop;
pub mod efficiency;
pub mod generalization;
pub mod gradient;
pub mod pendulum;

use std::fmt;
use std::str::FromStr;

use crate::report::MetricsReport;
use crate::{HarnessError, RunContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    Generalization,
    Efficiency,
    Adaptation,
    Gradient,
    Pendulum,
    Closedloop,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Generalization,
        ExperimentId::Efficiency,
        ExperimentId::Adaptation,
        ExperimentId::Gradient,
        ExperimentId::Pendulum,
        ExperimentId::Closedloop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Generalization => "generalization",
            ExperimentId::Efficiency => "efficiency",
            ExperimentId::Adaptation => "adaptation",
            ExperimentId::Gradient => "gradient",
            ExperimentId::Pendulum => "pendulum",
            ExperimentId::Closedloop => "closedloop",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| HarnessError::Config(format!("bad value for `{key}`: {e}")))
}

/// Runs one experiment with `key = value` overrides applied to its default
/// configuration.
pub fn run(
    id: ExperimentId,
    seed: u64,
    overrides: &[(String, String)],
    ctx: &RunContext,
) -> Result<MetricsReport, HarnessError> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    match id {
        ExperimentId::Generalization => {
            let mut cfg = generalization::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            generalization::run(&cfg, ctx)
        }
        ExperimentId::Gradient => {
            let mut cfg = generalization::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            gradient::run(&cfg, ctx)
        }
        ExperimentId::Efficiency => {
            let mut cfg = efficiency::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            efficiency::run(&cfg, ctx)
        }
        ExperimentId::Adaptation => {
            let mut cfg = adaptation::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            adaptation::run(&cfg, ctx)
        }
        ExperimentId::Pendulum => {
            let mut cfg = pendulum::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            pendulum::run(&cfg, ctx)
        }
        ExperimentId::Closedloop => {
            let mut cfg = closedloop::Config::new(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            closedloop::run(&cfg, ctx)
        }
    }
}
