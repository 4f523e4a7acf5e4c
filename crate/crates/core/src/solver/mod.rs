//! Backward recursion over the state tree.
//!
//! Each node is an optimal stopping problem for the wealth diffusion with
//! discount `r_n(mu)`, running reward `(alpha + nu mu) x + lambda V_hat(x)` and
//! obstacle `f_hat (x - K)`, where `V_hat` is the kernel-weighted value of the
//! children. Subtracting the obstacle leaves the problem
//! `W = sup E[int_0^tau e^{-rt} M(X_t) dt]` with
//! `M(x) = r f_hat K + (f_hat - beta)(theta - alpha - r) x + lambda V_hat(x)`.
//! Writing `W = w + phi U(F)` with `w = R M`, `F = psi / phi` and `U` the least
//! concave majorant of `-w / phi` in the `F` coordinate solves it.

mod grid;
mod stage;
mod strategy;

pub use grid::{GridSpec, WealthGrid, DEFAULT_GRID_POINTS, MIN_GRID_POINTS};
pub use stage::{
    classify_regime, continuation_value, solve_closed_form, solve_majorant, DkTransform, StageContext, MAX_WIDENINGS,
    P_ZERO_TOL,
};
pub use strategy::{AutoSolver, ClosedFormSolver, MajorantSolver, StageSolver, StageSolverRegistry};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::model::{beta, effective_rate, validate_config, ModelConfig};
use crate::mortality::{enumerate_states, moneys_worths, StateNode, StateTree};
use crate::policy::{Policy, StoppingRule};
use crate::terminal::{value_terminal, TerminalSolution};

/// Shape of the stopping set at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Never stop.
    Case1,
    /// Stop on `[b, inf)`.
    Case2,
    /// Stop on `[b1, b2]`.
    Case3,
    /// Stop on `[0, b]`.
    Case4,
    /// Stop everywhere.
    Case5,
    /// `K = 0` and continuing is strictly better.
    K0Continue,
    /// `K = 0` and stopping is (weakly) better.
    K0Stop,
}

impl Regime {
    pub fn rule(&self, thresholds: &[f64]) -> StoppingRule {
        match self {
            Regime::Case1 | Regime::K0Continue => StoppingRule::Never,
            Regime::Case2 => StoppingRule::StopAbove(thresholds[0]),
            Regime::Case3 => StoppingRule::StopInside(thresholds[0], thresholds[1]),
            Regime::Case4 => StoppingRule::StopBelow(thresholds[0]),
            Regime::Case5 | Regime::K0Stop => StoppingRule::Immediately,
        }
    }

    pub fn stops_at_zero(&self) -> bool {
        matches!(self, Regime::Case4 | Regime::Case5 | Regime::K0Stop)
    }
}

/// How `value` is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Representation {
    /// Last-stage closed form.
    Terminal,
    /// `V = c x` (zero fee).
    Linear(f64),
    /// Interpolated grid table.
    Table,
}

/// On a continuation interval `(lo, hi)` the excess value is
/// `W(x) = w(x) + coef (x / scale)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPiece {
    pub lo: f64,
    pub hi: f64,
    pub exponent: f64,
    pub coef: f64,
    pub scale: f64,
}

impl PowerPiece {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.coef == 0.0 {
            0.0
        } else {
            self.coef * (x / self.scale).powf(self.exponent)
        }
    }
}

/// Solution at one node.
#[derive(Debug, Clone, Serialize)]
pub struct StageValue {
    pub node: StateNode,
    pub regime: Regime,
    pub rule: StoppingRule,
    pub thresholds: Vec<f64>,
    pub grid: WealthGrid,
    /// `V` on the grid.
    pub values: Vec<f64>,
    /// `W = V - f_hat (x - K)` on the grid.
    pub excess: Vec<f64>,
    /// `M` on the grid.
    pub running_reward: Vec<f64>,
    pub asymptotic_slope: f64,
    pub value_at_zero: f64,
    pub closed_form: Option<TerminalSolution>,
    pub representation: Representation,
    pub pieces: Vec<PowerPiece>,
    pub f_hat: f64,
    pub beta: f64,
    pub rate: f64,
    pub k: f64,
    /// `P(n, mu)`, the slope of `M` at infinity.
    pub asymptote_coefficient: f64,
    /// `P` was numerically zero and the regime came from the far-field sign of `M`.
    pub ambiguous: bool,
    pub widenings: usize,
    pub method: String,
    #[serde(skip)]
    pub(crate) interp: Option<Pchip>,
}

impl StageValue {
    pub fn obstacle(&self, x: f64) -> f64 {
        self.f_hat * (x - self.k)
    }

    /// Value at wealth `x >= 0`.
    pub fn value(&self, x: f64) -> f64 {
        match (&self.representation, &self.closed_form) {
            (Representation::Terminal, Some(cf)) => return value_terminal(cf, x.max(0.0)),
            (Representation::Linear(c), _) => return if self.rule.stops(x) { self.obstacle(x) } else { c * x },
            _ => {}
        }
        if x <= 0.0 {
            return self.value_at_zero;
        }
        if self.rule.stops(x) {
            return self.obstacle(x);
        }
        let (lo, hi) = (self.grid.lo(), self.grid.hi());
        let v_lo = self.values[0];
        let v_hi = *self.values.last().unwrap();
        if x < lo {
            return self.value_at_zero + (v_lo - self.value_at_zero) * x / lo;
        }
        if x > hi {
            return v_hi + self.asymptotic_slope * (x - hi);
        }
        match &self.interp {
            Some(p) => p.eval(x),
            None => Pchip::new(self.grid.points.clone(), self.values.clone()).eval(x),
        }
    }

    /// Points where `value` is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        let mut out = self.thresholds.clone();
        if self.representation == Representation::Table {
            out.push(self.grid.lo());
            out.push(self.grid.hi());
        }
        out
    }

    pub(crate) fn build_interp(&mut self) {
        if self.representation == Representation::Table {
            self.interp = Some(Pchip::new(self.grid.points.clone(), self.values.clone()));
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub grid: GridSpec,
    /// Name of the registered stage solver.
    pub stage_solver: String,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            stage_solver: "auto".into(),
        }
    }
}

/// Every node solved.
#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub config: ModelConfig,
    pub tree: StateTree,
    pub options: SolveOptions,
    pub stages: Vec<StageValue>,
}

impl Solution {
    pub fn stage(&self, id: usize) -> &StageValue {
        &self.stages[id]
    }

    pub fn root(&self) -> &StageValue {
        &self.stages[0]
    }

    pub fn policy(&self) -> Policy {
        Policy::new(self.stages.iter().map(|s| s.rule).collect())
    }

    pub fn value_at(&self, node: usize, x: f64) -> f64 {
        self.stages[node].value(x)
    }
}

/// `value_at` as a free function.
pub fn value_at(sol: &Solution, node: usize, x: f64) -> f64 {
    sol.value_at(node, x)
}

/// `lim V(x)/x` for every node:
/// `max(f_hat, (alpha + nu mu + lambda sum p V_inf(child)) / (r + alpha - theta))`.
pub fn asymptotic_slopes(tree: &StateTree, cfg: &ModelConfig) -> Vec<f64> {
    let fhat = moneys_worths(tree, cfg);
    let m = &cfg.market;
    let mut out = vec![0.0; tree.len()];
    for node in tree.nodes.iter().rev() {
        let rate = effective_rate(cfg, node.n, node.mu);
        let expected: f64 = node.children.iter().map(|&(c, p)| p * out[c]).sum();
        let cont = (m.alpha + m.nu * node.mu + node.lambda_next * expected) / (rate - m.net_drift());
        out[node.id] = fhat[node.id].max(cont);
    }
    out
}

pub fn asymptotic_slope(tree: &StateTree, cfg: &ModelConfig, id: usize) -> f64 {
    asymptotic_slopes(tree, cfg)[id]
}

/// `P(n, mu) = (f_hat - beta)(theta - alpha - r) + lambda sum p V_inf(child)` for every node.
pub fn asymptote_coefficients(tree: &StateTree, cfg: &ModelConfig) -> Vec<f64> {
    let fhat = moneys_worths(tree, cfg);
    let slopes = asymptotic_slopes(tree, cfg);
    tree.nodes
        .iter()
        .map(|node| {
            let rate = effective_rate(cfg, node.n, node.mu);
            let b = beta(cfg, node.n, node.mu);
            let expected: f64 = node.children.iter().map(|&(c, p)| p * slopes[c]).sum();
            (fhat[node.id] - b) * (cfg.market.net_drift() - rate) + node.lambda_next * expected
        })
        .collect()
}

/// Solve every node with the default registry.
pub fn solve_all(cfg: &ModelConfig, options: &SolveOptions) -> Result<Solution> {
    solve_all_with(cfg, options, &StageSolverRegistry::with_defaults())
}

/// Solve every node, children before parents, with the named stage solver.
pub fn solve_all_with(cfg: &ModelConfig, options: &SolveOptions, registry: &StageSolverRegistry) -> Result<Solution> {
    let cfg = validate_config(cfg)?;
    let solver = registry.get(&options.stage_solver)?;
    let tree = enumerate_states(&cfg)?;
    let fhat = moneys_worths(&tree, &cfg);
    let slopes = asymptotic_slopes(&tree, &cfg);
    let coefficients = asymptote_coefficients(&tree, &cfg);
    let mut solved: Vec<Option<StageValue>> = vec![None; tree.len()];
    for node in tree.nodes.iter().rev() {
        let mut children = Vec::with_capacity(node.children.len());
        for &(c, p) in &node.children {
            let child = solved[c].as_ref().ok_or(Error::ChildrenUnsolved(c))?;
            children.push((child, p));
        }
        let ctx = StageContext {
            cfg: &cfg,
            node,
            children,
            f_hat: fhat[node.id],
            beta: beta(&cfg, node.n, node.mu),
            rate: effective_rate(&cfg, node.n, node.mu),
            asymptotic_slope: slopes[node.id],
            asymptote_coefficient: coefficients[node.id],
            grid: &options.grid,
        };
        let mut sv = solver.solve(&ctx)?;
        sv.build_interp();
        solved[node.id] = Some(sv);
    }
    let stages = solved.into_iter().map(|s| s.expect("every node solved")).collect();
    Ok(Solution {
        config: cfg,
        tree,
        options: options.clone(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;

    #[test]
    fn terminal_slope_is_max_of_beta_and_fhat() {
        let cfg = single_shock(Scenario::PositiveFee);
        let tree = enumerate_states(&cfg).unwrap();
        let slopes = asymptotic_slopes(&tree, &cfg);
        let id = tree.find(1, MU0).unwrap();
        assert!((slopes[id] - 1.4381).abs() < 1e-4, "{}", slopes[id]);
        let fhat = moneys_worths(&tree, &cfg);
        assert!(slopes[0] >= fhat[0]);
    }

    #[test]
    fn no_jumps_collapses_slope_recursion() {
        let mut cfg = single_shock(Scenario::NegativeFee);
        cfg.pdmp.lambdas = vec![0.0];
        let tree = enumerate_states(&cfg).unwrap();
        let slopes = asymptotic_slopes(&tree, &cfg);
        let fhat = moneys_worths(&tree, &cfg);
        for node in &tree.nodes {
            let b = beta(&cfg, node.n, node.mu);
            assert!((slopes[node.id] - b.max(fhat[node.id])).abs() < 1e-14);
        }
    }

    #[test]
    fn no_jump_config_is_a_single_closed_form() {
        let cfg = constant_mortality(Scenario::PositiveFee);
        let sol = solve_all(&cfg, &SolveOptions::default()).unwrap();
        assert_eq!(sol.stages.len(), 1);
        assert_eq!(sol.root().representation, Representation::Terminal);
        assert!(sol.root().closed_form.is_some());
    }

    #[test]
    fn unknown_stage_solver_is_reported() {
        let cfg = single_shock(Scenario::PositiveFee);
        let opts = SolveOptions {
            stage_solver: "simplex".into(),
            ..SolveOptions::default()
        };
        assert!(matches!(solve_all(&cfg, &opts), Err(Error::UnknownStrategy { .. })));
    }
}
