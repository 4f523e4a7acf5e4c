//! One-parameter sensitivity sweeps of the root threshold.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::solver::{solve_all, Regime, SolveOptions, StageValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Relative change of the insurer's mortality: `mu_hat (1 + value)`.
    DeltaMuHat,
    /// Probability of the first target of every two-point kernel (the
    /// second gets `1 - p`).
    P,
    /// Intensity of the first jump.
    Lambda1,
    Nu,
    K,
    Sigma,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 6] = [
        SweepParameter::DeltaMuHat,
        SweepParameter::P,
        SweepParameter::Lambda1,
        SweepParameter::Nu,
        SweepParameter::K,
        SweepParameter::Sigma,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::DeltaMuHat => "delta_mu_hat",
            SweepParameter::P => "p",
            SweepParameter::Lambda1 => "lambda1",
            SweepParameter::Nu => "nu",
            SweepParameter::K => "K",
            SweepParameter::Sigma => "sigma",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            SweepParameter::DeltaMuHat => vec![-0.2, -0.1, 0.0, 0.1, 0.2],
            SweepParameter::P => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            SweepParameter::Lambda1 => vec![0.02, 0.05, 0.1, 0.3, 0.6, 1.0],
            SweepParameter::Nu => vec![0.1, 0.2, 0.35, 0.5, 0.7],
            SweepParameter::K => vec![500.0, 1000.0, 1500.0, 2000.0, 3000.0],
            SweepParameter::Sigma => vec![0.1, 0.125, 0.152952, 0.2, 0.25],
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &ModelConfig, value: f64) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParameter::DeltaMuHat => cfg.market.mu_hat = base.market.mu_hat * (1.0 + value),
            SweepParameter::P => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::InvalidParam(format!("p must lie in [0, 1], got {value}")));
                }
                let mut touched = false;
                for rule in cfg.pdmp.kernel.iter_mut().filter(|r| r.targets.len() == 2) {
                    rule.targets[0].prob = value;
                    rule.targets[1].prob = 1.0 - value;
                    rule.targets.retain(|t| t.prob > 0.0);
                    touched = true;
                }
                if !touched {
                    return Err(Error::InvalidParam("no two-point kernel rule to sweep p over".into()));
                }
            }
            SweepParameter::Lambda1 => {
                if cfg.pdmp.lambdas.is_empty() {
                    return Err(Error::InvalidParam("configuration has no jumps".into()));
                }
                cfg.pdmp.lambdas[0] = value;
            }
            SweepParameter::Nu => cfg.market.nu = value,
            SweepParameter::K => cfg.market.k = value,
            SweepParameter::Sigma => cfg.market.sigma = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidParam(format!(
                    "unknown sweep parameter '{s}' (available: {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn new(parameter: SweepParameter, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParam("sweep needs at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("sweep value {v} is not finite")));
        }
        Ok(Self { parameter, values })
    }

    pub fn with_defaults(parameter: SweepParameter) -> Self {
        Self {
            parameter,
            values: parameter.default_values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub regime: Option<Regime>,
    /// Boundary of the root stopping set, see `root_threshold`.
    pub threshold: Option<f64>,
    pub thresholds: Vec<f64>,
    /// Error text when this value could not be solved.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// The root threshold as one number: the threshold itself for one-sided
/// regimes, the lower end of an inner interval, and for the degenerate
/// regimes the limit it would take in the fee's direction (`+inf` when
/// continuing forever under a positive fee, `0` when stopping at once).
pub fn root_threshold(sv: &StageValue) -> f64 {
    let positive = sv.k >= 0.0;
    match sv.regime {
        Regime::Case2 | Regime::Case3 | Regime::Case4 => sv.thresholds[0],
        Regime::Case1 | Regime::K0Continue => {
            if positive {
                f64::INFINITY
            } else {
                0.0
            }
        }
        Regime::Case5 | Regime::K0Stop => {
            if positive {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Re-solve the model once per value. Failures become rows with an error.
pub fn run_sweep(base: &ModelConfig, spec: &SweepSpec, options: &SolveOptions) -> Vec<SweepRow> {
    spec.values
        .par_iter()
        .map(|&value| {
            let solved = spec
                .parameter
                .apply(base, value)
                .and_then(|cfg| solve_all(&cfg, options));
            match solved {
                Ok(sol) => SweepRow {
                    parameter: spec.parameter,
                    value,
                    regime: Some(sol.root().regime),
                    threshold: Some(root_threshold(sol.root())),
                    thresholds: sol.root().thresholds.clone(),
                    error: None,
                },
                Err(e) => SweepRow {
                    parameter: spec.parameter,
                    value,
                    regime: None,
                    threshold: None,
                    thresholds: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
