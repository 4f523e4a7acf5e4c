//! Named payoff estimators. All three estimate the same value; they differ
//! in how mortality enters the payoff.

use crate::error::{Error, Result};

use super::path::{Arm, Engine, Weighting};

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Payoff of every arm for sample `index`.
    fn sample(&self, engine: &Engine<'_>, index: u64, arms: &[Arm<'_>]) -> Vec<f64>;
}

/// Mortality integrated out: deterministic discount `exp(-int (rho + mu))`, paths run to the horizon.
pub struct IntegratedEstimator;

impl Estimator for IntegratedEstimator {
    fn name(&self) -> &'static str {
        "integrated"
    }
    fn description(&self) -> &'static str {
        "mortality-integrated discount, paths truncated at the horizon"
    }
    fn sample(&self, engine: &Engine<'_>, index: u64, arms: &[Arm<'_>]) -> Vec<f64> {
        engine.sample(Weighting::Integrated, index, arms)
    }
}

/// Path killed at rate `rho + mu_t`; undiscounted payoffs up to the kill.
pub struct KilledEstimator;

impl Estimator for KilledEstimator {
    fn name(&self) -> &'static str {
        "killed"
    }
    fn description(&self) -> &'static str {
        "killed at rate rho + mu, exact clock inversion"
    }
    fn sample(&self, engine: &Engine<'_>, index: u64, arms: &[Arm<'_>]) -> Vec<f64> {
        engine.sample(Weighting::Killed, index, arms)
    }
}

/// Simulated death time: consumption until death, bequest at death, or an
/// annuity paid from the stopping time until death.
pub struct RawDeathEstimator;

impl Estimator for RawDeathEstimator {
    fn name(&self) -> &'static str {
        "cox"
    }
    fn description(&self) -> &'static str {
        "raw payoff with a simulated death time"
    }
    fn sample(&self, engine: &Engine<'_>, index: u64, arms: &[Arm<'_>]) -> Vec<f64> {
        engine.sample(Weighting::Raw, index, arms)
    }
}

pub struct EstimatorRegistry {
    estimators: Vec<Box<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self { estimators: Vec::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(KilledEstimator));
        r.register(Box::new(IntegratedEstimator));
        r.register(Box::new(RawDeathEstimator));
        r
    }

    pub fn register(&mut self, estimator: Box<dyn Estimator>) {
        self.estimators.retain(|e| e.name() != estimator.name());
        self.estimators.push(estimator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Estimator> {
        self.estimators
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "estimator",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.estimators.iter().map(|e| e.name()).collect()
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
