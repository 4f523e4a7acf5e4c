//! Brute-force Monte Carlo evaluation of threshold policies.
//!
//! Independent of the solver: it only needs the state tree, the money's
//! worth at each node and a stopping rule per node. Samples are independent
//! ChaCha substreams of one master seed, so results do not depend on the
//! number of worker threads.

mod estimator;
mod path;

pub use estimator::{Estimator, EstimatorRegistry, IntegratedEstimator, KilledEstimator, RawDeathEstimator};
pub use path::{Arm, Engine, MortalityPath, Weighting};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_config, ModelConfig};
use crate::mortality::{enumerate_states, moneys_worths, StateTree};
use crate::policy::{Policy, StoppingRule};
use crate::solver::Solution;

use path::{mortality_path, Clock};

/// Default payoff-grid step (one trading day).
pub const DEFAULT_DT: f64 = 1.0 / 252.0;
/// Default number of simulated paths.
pub const DEFAULT_PATHS: usize = 100_000;
/// The horizon is set so the discount factor at it is below this.
pub const HORIZON_DISCOUNT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulated paths (with antithetics, two paths form one sample).
    pub n_paths: usize,
    pub dt: f64,
    /// Truncation time; `None` picks `ln(1e8) / (rho + mu_min)`.
    pub horizon: Option<f64>,
    pub seed: u64,
    pub antithetic: bool,
    /// Stopping rules are checked every `monitor_stride` grid steps (and at jumps).
    pub monitor_stride: usize,
    /// Registered estimator name.
    pub estimator: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: DEFAULT_PATHS,
            dt: DEFAULT_DT,
            horizon: None,
            seed: 0,
            antithetic: true,
            monitor_stride: 1,
            estimator: "killed".into(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParam("n_paths must be >= 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParam(format!("dt must be > 0, got {}", self.dt)));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParam(format!("horizon must be > 0, got {h}")));
            }
        }
        if self.monitor_stride == 0 {
            return Err(Error::InvalidParam("monitor_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Independent samples drawn (pairs when antithetic).
    pub fn n_samples(&self) -> usize {
        if self.antithetic {
            self.n_paths.div_ceil(2)
        } else {
            self.n_paths
        }
    }

    pub fn horizon_for(&self, cfg: &ModelConfig, tree: &StateTree) -> f64 {
        self.horizon
            .unwrap_or_else(|| (1.0 / HORIZON_DISCOUNT).ln() / (cfg.market.rho + tree.mu_min()))
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: impl Iterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in xs {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            stderr: (var / n.max(1) as f64).sqrt(),
            n,
        }
    }

    /// `|mean - target|` in units of stderr (0 when both are exact and equal).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

/// Result of evaluating one policy from one start wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalResult {
    pub mean: f64,
    pub stderr: f64,
    /// Simulated paths.
    pub n_paths: usize,
    /// Independent samples behind `stderr`.
    pub n_samples: usize,
    pub x0: f64,
    pub estimator: String,
}

/// Per-sample payoffs of several arms driven by the same random numbers.
#[derive(Debug, Clone)]
pub struct ArmSamples {
    /// `samples[i][a]`: payoff of arm `a` in sample `i`.
    pub samples: Vec<Vec<f64>>,
}

impl ArmSamples {
    pub fn estimate(&self, arm: usize) -> Estimate {
        Estimate::from_samples(self.samples.iter().map(|s| s[arm]))
    }

    /// Estimate of `arm_a - arm_b` from paired samples.
    pub fn difference(&self, a: usize, b: usize) -> Estimate {
        Estimate::from_samples(self.samples.iter().map(|s| s[a] - s[b]))
    }
}

/// Validated model pieces the oracle needs.
pub struct SimModel {
    pub cfg: ModelConfig,
    pub tree: StateTree,
    pub f_hat: Vec<f64>,
}

impl SimModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let cfg = validate_config(cfg)?;
        let tree = enumerate_states(&cfg)?;
        let f_hat = moneys_worths(&tree, &cfg);
        Ok(Self { cfg, tree, f_hat })
    }
}

/// Simulate all arms on common random numbers with the configured estimator.
pub fn simulate_arms(model: &SimModel, sim: &SimConfig, arms: &[Arm<'_>]) -> Result<ArmSamples> {
    simulate_arms_with(model, sim, 0, arms, &EstimatorRegistry::with_defaults())
}

/// Simulate all arms with paths starting in node `start`.
pub fn simulate_arms_with(
    model: &SimModel,
    sim: &SimConfig,
    start: usize,
    arms: &[Arm<'_>],
    registry: &EstimatorRegistry,
) -> Result<ArmSamples> {
    sim.validate()?;
    if start >= model.tree.len() {
        return Err(Error::InvalidParam(format!("start node {start} is not in the tree")));
    }
    let estimator = registry.get(&sim.estimator)?;
    for arm in arms {
        if arm.policy.rules.len() != model.tree.len() {
            return Err(Error::InvalidParam(format!(
                "policy has {} rules but the tree has {} nodes",
                arm.policy.rules.len(),
                model.tree.len()
            )));
        }
    }
    let engine = Engine {
        cfg: &model.cfg,
        tree: &model.tree,
        f_hat: &model.f_hat,
        dt: sim.dt,
        horizon: sim.horizon_for(&model.cfg, &model.tree),
        monitor_stride: sim.monitor_stride,
        antithetic: sim.antithetic,
        seed: sim.seed,
        start,
    };
    let samples: Vec<Vec<f64>> = (0..sim.n_samples() as u64)
        .into_par_iter()
        .map(|i| estimator.sample(&engine, i, arms))
        .collect();
    Ok(ArmSamples { samples })
}

/// Expected payoff of `policy` from wealth `x0` at the root.
pub fn evaluate_policy(cfg: &ModelConfig, sim: &SimConfig, policy: &Policy, x0: f64) -> Result<PolicyEvalResult> {
    let model = SimModel::new(cfg)?;
    let out = evaluate_policy_at(&model, sim, policy, &[x0])?;
    Ok(out.into_iter().next().unwrap())
}

/// One policy from several start wealths on common random numbers.
pub fn evaluate_policy_at(
    model: &SimModel,
    sim: &SimConfig,
    policy: &Policy,
    x0s: &[f64],
) -> Result<Vec<PolicyEvalResult>> {
    evaluate_policy_from(model, sim, policy, 0, x0s)
}

/// As `evaluate_policy_at`, with paths starting in node `start`.
pub fn evaluate_policy_from(
    model: &SimModel,
    sim: &SimConfig,
    policy: &Policy,
    start: usize,
    x0s: &[f64],
) -> Result<Vec<PolicyEvalResult>> {
    let arms: Vec<Arm<'_>> = x0s.iter().map(|&x0| Arm { x0, policy }).collect();
    let s = simulate_arms_with(model, sim, start, &arms, &EstimatorRegistry::with_defaults())?;
    Ok((0..arms.len())
        .map(|a| {
            let e = s.estimate(a);
            PolicyEvalResult {
                mean: e.mean,
                stderr: e.stderr,
                n_paths: sim.n_paths,
                n_samples: e.n,
                x0: x0s[a],
                estimator: sim.estimator.clone(),
            }
        })
        .collect())
}

/// One perturbed variant in an optimality probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeVariant {
    pub label: String,
    pub node: usize,
    pub threshold_index: usize,
    pub factor: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `variant - base`, from paired samples.
    pub difference: f64,
    pub difference_stderr: f64,
    /// The variant is better by more than two standard errors.
    pub beats_base: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub x0: f64,
    pub perturbation: f64,
    pub base: PolicyEvalResult,
    pub variants: Vec<ProbeVariant>,
    pub pass: bool,
}

/// Default start wealth for probing a policy: on the continuation side of
/// the root threshold, halfway to its shifted value, so one shifted variant
/// decides differently at time zero and the other as soon as wealth reaches
/// the threshold.
pub fn probe_start_wealth(policy: &Policy, perturbation: f64, scale: f64) -> f64 {
    match policy.rule(0) {
        StoppingRule::StopAbove(b) => b * (1.0 - 0.5 * perturbation),
        StoppingRule::StopBelow(b) => b * (1.0 + 0.5 * perturbation),
        StoppingRule::StopInside(b1, _) => b1 * (1.0 - 0.5 * perturbation),
        StoppingRule::Never | StoppingRule::Immediately => 10.0 * scale,
    }
}

/// Compare `policy` with copies whose thresholds are shifted one at a time
/// by `1 +- perturbation`. Passes when no copy is better by more than two
/// standard errors of the paired difference.
pub fn optimality_probe_policy(
    model: &SimModel,
    sim: &SimConfig,
    policy: &Policy,
    perturbation: f64,
    x0: Option<f64>,
) -> Result<ProbeReport> {
    let x0 = x0.unwrap_or_else(|| probe_start_wealth(policy, perturbation, model.cfg.market.wealth_scale()));
    let mut variants = Vec::new();
    let mut meta = Vec::new();
    for (node, k) in policy.threshold_slots() {
        for factor in [1.0 - perturbation, 1.0 + perturbation] {
            variants.push(policy.perturbed(node, k, factor));
            meta.push((node, k, factor));
        }
    }
    let mut arms = vec![Arm { x0, policy }];
    arms.extend(variants.iter().map(|p| Arm { x0, policy: p }));
    let s = simulate_arms(model, sim, &arms)?;
    let base = s.estimate(0);
    let variants: Vec<ProbeVariant> = meta
        .iter()
        .enumerate()
        .map(|(i, &(node, k, factor))| {
            let e = s.estimate(i + 1);
            let d = s.difference(i + 1, 0);
            ProbeVariant {
                label: format!("node {node} threshold {k} x{factor}"),
                node,
                threshold_index: k,
                factor,
                mean: e.mean,
                stderr: e.stderr,
                difference: d.mean,
                difference_stderr: d.stderr,
                beats_base: d.mean > 2.0 * d.stderr,
            }
        })
        .collect();
    let pass = variants.iter().all(|v| !v.beats_base);
    Ok(ProbeReport {
        x0,
        perturbation,
        base: PolicyEvalResult {
            mean: base.mean,
            stderr: base.stderr,
            n_paths: sim.n_paths,
            n_samples: base.n,
            x0,
            estimator: sim.estimator.clone(),
        },
        variants,
        pass,
    })
}

/// Probe the solver's policy.
pub fn optimality_probe(cfg: &ModelConfig, sim: &SimConfig, sol: &Solution, perturbation: f64) -> Result<ProbeReport> {
    let model = SimModel::new(cfg)?;
    optimality_probe_policy(&model, sim, &sol.policy(), perturbation, None)
}

/// Paired comparison of two policies from the same start wealth: returns
/// estimates of both and of `b - a`.
pub fn compare_policies(
    model: &SimModel,
    sim: &SimConfig,
    a: &Policy,
    b: &Policy,
    x0: f64,
) -> Result<(Estimate, Estimate, Estimate)> {
    let s = simulate_arms(model, sim, &[Arm { x0, policy: a }, Arm { x0, policy: b }])?;
    Ok((s.estimate(0), s.estimate(1), s.difference(1, 0)))
}

fn mortality_estimate(model: &SimModel, sim: &SimConfig, f: impl Fn(&MortalityPath) -> f64 + Sync) -> Result<Estimate> {
    sim.validate()?;
    let values: Vec<f64> = (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
            rng.set_stream(2 * i + 1);
            f(&mortality_path(&model.cfg, &model.tree, Clock::Death, 0, &mut rng))
        })
        .collect();
    Ok(Estimate::from_samples(values.into_iter()))
}

/// Monte Carlo life expectancy from the root (exact death-time inversion).
pub fn mc_life_expectancy(cfg: &ModelConfig, sim: &SimConfig) -> Result<Estimate> {
    let model = SimModel::new(cfg)?;
    mortality_estimate(&model, sim, |p| p.end)
}

/// Monte Carlo annuity factor `E[int_0^{tau_d} e^{-rho t} dt]` from the root.
pub fn mc_annuity_factor(cfg: &ModelConfig, sim: &SimConfig) -> Result<Estimate> {
    let model = SimModel::new(cfg)?;
    let rho = model.cfg.market.rho;
    mortality_estimate(&model, sim, move |p| (1.0 - (-rho * p.end).exp()) / rho)
}
