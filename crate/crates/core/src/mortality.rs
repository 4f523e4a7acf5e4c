//! Reachable mortality states, annuity factors, money's worth, life
//! expectancy and calibration of the mortality level.
//!
//! The mortality force is constant between jumps, jumps arrive at rate
//! `lambda_{n+1}` and the post-jump value is drawn from a finite kernel, so the
//! reachable set is a finite layered graph. Exponential interarrival times
//! make every quantity below a closed backward recursion over that graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{same_mu, validate_config, ModelConfig};

/// Default cap on the number of enumerated states.
pub const DEFAULT_TREE_CAP: usize = 100_000;

/// One reachable mortality state `(n, mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub id: usize,
    /// Stage index (number of jumps so far).
    pub n: usize,
    /// Mortality force.
    pub mu: f64,
    /// Intensity of the next jump (zero at the last stage).
    pub lambda_next: f64,
    /// `(child id, probability)` pairs; empty at the last stage.
    pub children: Vec<(usize, f64)>,
}

impl StateNode {
    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }
}

/// All reachable states in stage order; node 0 is the root `(0, mu0)`.
///
/// Children always have larger ids than their parents, so iterating the
/// nodes in reverse visits every child before its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTree {
    pub nodes: Vec<StateNode>,
    pub depth: usize,
}

impl StateTree {
    pub fn root(&self) -> &StateNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &StateNode {
        &self.nodes[id]
    }

    pub fn mu_min(&self) -> f64 {
        self.nodes.iter().map(|n| n.mu).fold(f64::INFINITY, f64::min)
    }

    pub fn mu_max(&self) -> f64 {
        self.nodes.iter().map(|n| n.mu).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Node ids of stage `n`.
    pub fn stage(&self, n: usize) -> impl Iterator<Item = &StateNode> {
        self.nodes.iter().filter(move |node| node.n == n)
    }

    /// Find the node with the given stage and mortality value.
    pub fn find(&self, n: usize, mu: f64) -> Option<usize> {
        self.stage(n).find(|node| same_mu(node.mu, mu)).map(|node| node.id)
    }
}

/// Enumerate reachable states of a validated configuration.
pub fn enumerate_states(cfg: &ModelConfig) -> Result<StateTree> {
    enumerate_states_with_cap(cfg, DEFAULT_TREE_CAP)
}

pub fn enumerate_states_with_cap(cfg: &ModelConfig, cap: usize) -> Result<StateTree> {
    validate_config(cfg)?;
    enumerate_unchecked(cfg, cap)
}

/// Breadth-first enumeration without the well-posedness check (used by validation itself).
pub(crate) fn enumerate_unchecked(cfg: &ModelConfig, cap: usize) -> Result<StateTree> {
    let pdmp = &cfg.pdmp;
    let mut nodes = vec![StateNode {
        id: 0,
        n: 0,
        mu: pdmp.mu0,
        lambda_next: pdmp.lambda_next(0),
        children: Vec::new(),
    }];
    let mut stage_start = 0;
    for n in 0..pdmp.n_jumps {
        let stage_end = nodes.len();
        for parent in stage_start..stage_end {
            let mu = nodes[parent].mu;
            let rule = pdmp
                .rule_for(n, mu)
                .ok_or_else(|| Error::InvalidDistribution(format!("no kernel rule for stage {n} at mu = {mu}")))?;
            let mut children: Vec<(usize, f64)> = Vec::with_capacity(rule.targets.len());
            for target in &rule.targets {
                let existing = (stage_end..nodes.len()).find(|&i| same_mu(nodes[i].mu, target.mu));
                let child = match existing {
                    Some(i) => i,
                    None => {
                        if nodes.len() >= cap {
                            return Err(Error::TreeTooLarge { cap });
                        }
                        let id = nodes.len();
                        nodes.push(StateNode {
                            id,
                            n: n + 1,
                            mu: target.mu,
                            lambda_next: pdmp.lambda_next(n + 1),
                            children: Vec::new(),
                        });
                        id
                    }
                };
                match children.iter_mut().find(|(c, _)| *c == child) {
                    Some(entry) => entry.1 += target.prob,
                    None => children.push((child, target.prob)),
                }
            }
            nodes[parent].children = children;
        }
        stage_start = stage_end;
    }
    Ok(StateTree {
        nodes,
        depth: pdmp.n_jumps,
    })
}

/// Backward recursion `v(N) = a / (c + mu)` and
/// `v(n) = (a + lambda * sum p v(child)) / (c + mu + lambda)`, with mortality scaled by `scale`.
fn backward(tree: &StateTree, numer: f64, shift: f64, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; tree.len()];
    for node in tree.nodes.iter().rev() {
        let mu = node.mu * scale;
        let expected: f64 = node.children.iter().map(|&(c, p)| p * out[c]).sum();
        out[node.id] = (numer + node.lambda_next * expected) / (shift + mu + node.lambda_next);
    }
    out
}

/// Subjective value `f(n, mu)` of a unit annuity stream for every node.
pub fn annuity_factors(tree: &StateTree, cfg: &ModelConfig) -> Vec<f64> {
    backward(tree, 1.0, cfg.market.rho, 1.0)
}

pub fn annuity_factor(tree: &StateTree, id: usize, cfg: &ModelConfig) -> f64 {
    annuity_factors(tree, cfg)[id]
}

/// Money's worth `f_hat(n, mu) = (rho_hat + mu_hat) f(n, mu)` for every node.
pub fn moneys_worths(tree: &StateTree, cfg: &ModelConfig) -> Vec<f64> {
    let c = cfg.market.payout_rate();
    annuity_factors(tree, cfg).into_iter().map(|f| c * f).collect()
}

pub fn moneys_worth(tree: &StateTree, id: usize, cfg: &ModelConfig) -> f64 {
    moneys_worths(tree, cfg)[id]
}

/// Expected remaining lifetime from every node.
pub fn life_expectancies(tree: &StateTree) -> Vec<f64> {
    backward(tree, 1.0, 0.0, 1.0)
}

pub fn life_expectancy(tree: &StateTree, id: usize) -> f64 {
    life_expectancies(tree)[id]
}

/// Slack in the money's-worth inequality at a non-terminal node:
/// `(rho + mu) f_hat(n,mu) - lambda (sum p f_hat(child) - f_hat(n,mu))`, which is strictly positive.
pub fn moneys_worth_margin(tree: &StateTree, cfg: &ModelConfig, fhat: &[f64], id: usize) -> f64 {
    let node = tree.node(id);
    let expected: f64 = node.children.iter().map(|&(c, p)| p * fhat[c]).sum();
    (cfg.market.rho + node.mu) * fhat[id] - node.lambda_next * (expected - fhat[id])
}

/// What `calibrate` solves for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Initial mortality `mu0` giving the target root life expectancy. Kernel
    /// targets move proportionally with `mu0`.
    Baseline,
    /// Constant pricing mortality matching the target expectancy, `1 / target`.
    Objective,
}

impl std::str::FromStr for CalibrationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "objective" => Ok(Self::Objective),
            other => Err(Error::InvalidParam(format!("calibration mode '{other}'"))),
        }
    }
}

const CALIBRATION_BRACKET: (f64, f64) = (1e-6, 1.0);
const CALIBRATION_TOL: f64 = 1e-10;

/// Calibrate a mortality rate to a target life expectancy (years).
pub fn calibrate(target: f64, mode: CalibrationMode, cfg: &ModelConfig) -> Result<f64> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidParam(format!(
            "target life expectancy must be > 0, got {target}"
        )));
    }
    match mode {
        CalibrationMode::Objective => Ok(1.0 / target),
        CalibrationMode::Baseline => {
            let tree = enumerate_unchecked(cfg, DEFAULT_TREE_CAP)?;
            let mu0 = cfg.pdmp.mu0;
            let root_le = |m: f64| backward(&tree, 1.0, 0.0, m / mu0)[0];
            let (mut lo, mut hi) = CALIBRATION_BRACKET;
            let (le_lo, le_hi) = (root_le(lo), root_le(hi));
            if !(le_lo >= target && le_hi <= target) {
                return Err(Error::NoRoot {
                    lo,
                    hi,
                    what: format!("life expectancy spans [{le_hi}, {le_lo}], target {target}"),
                });
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let resid = root_le(mid) - target;
                if resid.abs() <= CALIBRATION_TOL {
                    return Ok(mid);
                }
                // Life expectancy decreases in the mortality level.
                if resid > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= f64::EPSILON * hi {
                    return Ok(mid);
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}
