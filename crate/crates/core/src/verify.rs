//! Invariant suite over a solved tree.
//!
//! Every check runs per node and produces a record with the largest
//! violation found and the tolerance it was held to. Failures are report
//! entries, never errors.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelConfig;
use crate::montecarlo::{evaluate_policy_from, SimConfig, SimModel};
use crate::mortality::{moneys_worth_margin, moneys_worths};
use crate::policy::StoppingRule;
use crate::solver::{continuation_value, Regime, Solution, StageContext, P_ZERO_TOL};

pub const OBSTACLE_TOL: f64 = 1e-8;
pub const SMOOTH_FIT_TOL: f64 = 1e-4;
/// Stencil half-width for the smooth-fit derivative, relative to the threshold.
pub const SMOOTH_FIT_STEP: f64 = 1e-3;
pub const ODE_TOL: f64 = 1e-3;
pub const CONVEXITY_TOL: f64 = 1e-9;
pub const ASYMPTOTE_TOL: f64 = 1e-2;
pub const MC_Z_TOL: f64 = 2.0;
/// Grid points this close (in index) to a threshold are left out of stencil checks.
pub const THRESHOLD_EXCLUSION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    ObstacleDomination,
    SmoothFit,
    OdeResidual,
    Convexity,
    AsymptoticSlope,
    MoneysWorth,
    LinearGrowth,
    MonteCarlo,
    RegimePattern,
    RewardAtZero,
}

impl Check {
    pub const ALL: [Check; 10] = [
        Check::ObstacleDomination,
        Check::SmoothFit,
        Check::OdeResidual,
        Check::Convexity,
        Check::AsymptoticSlope,
        Check::MoneysWorth,
        Check::LinearGrowth,
        Check::MonteCarlo,
        Check::RegimePattern,
        Check::RewardAtZero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::ObstacleDomination => "obstacle_domination",
            Check::SmoothFit => "smooth_fit",
            Check::OdeResidual => "ode_residual",
            Check::Convexity => "convexity",
            Check::AsymptoticSlope => "asymptotic_slope",
            Check::MoneysWorth => "moneys_worth",
            Check::LinearGrowth => "linear_growth",
            Check::MonteCarlo => "monte_carlo",
            Check::RegimePattern => "regime_pattern",
            Check::RewardAtZero => "reward_at_zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: Check,
    pub node: usize,
    pub n: usize,
    pub mu: f64,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub records: Vec<CheckRecord>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn check_passes(&self, check: Check) -> bool {
        self.records.iter().filter(|r| r.check == check).all(|r| r.pass)
    }

    pub fn failed_checks(&self) -> Vec<Check> {
        let mut out: Vec<Check> = Vec::new();
        for r in self.records.iter().filter(|r| !r.pass) {
            if !out.contains(&r.check) {
                out.push(r.check);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>4} {:>2} {:>10} {:>12} {:>12} {:>5}  {}\n",
            "check", "node", "n", "mu", "violation", "tolerance", "pass", "detail"
        );
        for r in &self.records {
            out.push_str(&format!(
                "{:<20} {:>4} {:>2} {:>10.6} {:>12.4e} {:>12.4e} {:>5}  {}\n",
                r.check.name(),
                r.node,
                r.n,
                r.mu,
                r.max_violation,
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" },
                r.detail
            ));
        }
        out
    }
}

/// Start wealths for the Monte Carlo check, placed on both sides of the thresholds.
pub fn spot_wealths(rule: &StoppingRule, scale: f64) -> Vec<f64> {
    match *rule {
        StoppingRule::StopAbove(b) => [0.25, 0.5, 0.9, 1.5, 3.0].iter().map(|f| f * b).collect(),
        StoppingRule::StopBelow(b) => [0.5, 0.9, 1.2, 2.0, 4.0].iter().map(|f| f * b).collect(),
        StoppingRule::StopInside(b1, b2) => vec![0.5 * b1, 0.9 * b1, 0.5 * (b1 + b2), 1.1 * b2, 2.0 * b2],
        StoppingRule::Never | StoppingRule::Immediately => {
            [0.1, 0.5, 1.0, 5.0, 20.0].iter().map(|f| f * scale).collect()
        }
    }
}

/// Copy of `sol` whose stopping thresholds are multiplied by `factor` while
/// the tabulated values are left untouched. Used as a negative control.
pub fn corrupt_thresholds(sol: &Solution, factor: f64) -> Solution {
    let mut out = sol.clone();
    for sv in &mut out.stages {
        for b in &mut sv.thresholds {
            *b *= factor;
        }
        sv.rule = sv.regime.rule(&sv.thresholds);
    }
    out
}

/// All ten checks, the Monte Carlo one with `sim`.
pub fn run_suite(cfg: &ModelConfig, sol: &Solution, sim: &SimConfig) -> Result<VerifyReport> {
    run_checks(cfg, sol, Some(sim))
}

/// The suite; without `sim` the Monte Carlo check is left out of the report.
pub fn run_checks(cfg: &ModelConfig, sol: &Solution, sim: Option<&SimConfig>) -> Result<VerifyReport> {
    let scale = sol.config.market.wealth_scale();
    let growth = growth_constant(sol);
    let fhat = moneys_worths(&sol.tree, &sol.config);
    let model = match sim {
        Some(_) => Some(SimModel::new(cfg)?),
        None => None,
    };
    let policy = sol.policy();
    let mut records = Vec::new();
    for id in 0..sol.stages.len() {
        let node = &sol.tree.nodes[id];
        let rec = |check: Check, max_violation: f64, tolerance: f64, pass: bool, detail: String| CheckRecord {
            check,
            node: id,
            n: node.n,
            mu: node.mu,
            max_violation,
            tolerance,
            pass,
            detail,
        };
        let (v, t, d) = obstacle_domination(sol, id, scale);
        records.push(rec(Check::ObstacleDomination, v, t, v <= t, d));
        let (v, t, d) = smooth_fit(sol, id)?;
        records.push(rec(Check::SmoothFit, v, t, v <= t, d));
        let (v, t, d) = ode_residual(sol, id);
        records.push(rec(Check::OdeResidual, v, t, v <= t, d));
        let (v, t, d) = convexity(sol, id, scale);
        records.push(rec(Check::Convexity, v, t, v <= t, d));
        let (v, t, d) = asymptote(sol, id);
        records.push(rec(Check::AsymptoticSlope, v, t, v <= t, d));
        let margin = moneys_worth_margin(&sol.tree, &sol.config, &fhat, id);
        records.push(rec(
            Check::MoneysWorth,
            (-margin).max(0.0),
            0.0,
            margin > 0.0,
            format!("margin {margin:.6e}"),
        ));
        let (v, d) = linear_growth(sol, id, growth);
        records.push(rec(Check::LinearGrowth, v, 0.0, v <= 0.0, d));
        if let (Some(sim), Some(model)) = (sim, &model) {
            let spots = spot_wealths(&sol.stages[id].rule, scale);
            let runs = evaluate_policy_from(model, sim, &policy, id, &spots)?;
            let mut worst: f64 = 0.0;
            let mut parts = Vec::new();
            for r in &runs {
                let target = sol.value_at(id, r.x0);
                let diff = (r.mean - target).abs();
                let z = if r.stderr > 0.0 {
                    diff / r.stderr
                } else if diff <= 1e-9 * target.abs().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
                parts.push(format!("x={:.1} z={z:.2}", r.x0));
            }
            records.push(rec(
                Check::MonteCarlo,
                worst,
                MC_Z_TOL,
                worst <= MC_Z_TOL,
                parts.join(", "),
            ));
        }
        let (v, d) = regime_pattern(sol, id, scale);
        records.push(rec(Check::RegimePattern, v, 0.0, v <= 0.0, d));
        let (v, d) = reward_at_zero(sol, id);
        records.push(rec(Check::RewardAtZero, v, 0.0, v <= 0.0, d));
    }
    Ok(VerifyReport { records })
}

/// Grid indices within `THRESHOLD_EXCLUSION` of any threshold.
fn near_threshold(xs: &[f64], thresholds: &[f64], i: usize) -> bool {
    thresholds.iter().any(|&b| {
        let j = xs.partition_point(|&x| x < b);
        i + THRESHOLD_EXCLUSION + 1 >= j && i <= j + THRESHOLD_EXCLUSION
    })
}

fn obstacle_domination(sol: &Solution, id: usize, scale: f64) -> (f64, f64, String) {
    let sv = &sol.stages[id];
    let tol = OBSTACLE_TOL * scale;
    let mut worst = (-sv.value_at_zero + sv.obstacle(0.0)).max(0.0);
    let mut at = 0.0;
    for (&x, &w) in sv.grid.points.iter().zip(&sv.excess) {
        if -w > worst {
            worst = -w;
            at = x;
        }
    }
    (worst, tol, format!("min W at x={at:.4e}"))
}

/// One-sided second-order derivative of the continuation branch at each
/// threshold, compared with the obstacle slope; value matching is folded in.
fn smooth_fit(sol: &Solution, id: usize) -> Result<(f64, f64, String)> {
    let sv = &sol.stages[id];
    let sides: Vec<(f64, usize, f64)> = match sv.regime {
        Regime::Case2 => vec![(sv.thresholds[0], 0, -1.0)],
        Regime::Case3 => vec![(sv.thresholds[0], 0, -1.0), (sv.thresholds[1], 1, 1.0)],
        Regime::Case4 => vec![(sv.thresholds[0], 0, 1.0)],
        _ => return Ok((0.0, SMOOTH_FIT_TOL, "no interior threshold".into())),
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (b, piece, dir) in sides {
        let h = SMOOTH_FIT_STEP * b;
        let v = |x: f64| continuation_value(sol, id, piece, x);
        let (v0, v1, v2) = (v(b)?, v(b + dir * h)?, v(b + 2.0 * dir * h)?);
        let slope = dir * (-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * h);
        let slope_err = (slope - sv.f_hat).abs() / sv.f_hat.abs();
        let value_err = (v0 - sv.obstacle(b)).abs() / sv.obstacle(b).abs().max(1.0);
        worst = worst.max(slope_err).max(value_err);
        parts.push(format!("b={b:.4} slope {slope:.8} vs {:.8}", sv.f_hat));
    }
    Ok((worst, SMOOTH_FIT_TOL, parts.join("; ")))
}

/// `(L - r) V + (alpha + nu mu) x + lambda V_hat` on the grid, relative to the
/// size of its terms, at continuation points away from the thresholds.
fn ode_residual(sol: &Solution, id: usize) -> (f64, f64, String) {
    let sv = &sol.stages[id];
    let ctx = StageContext::from_solution(sol, id);
    let m = &sol.config.market;
    let xs = &sv.grid.points;
    let vs = &sv.values;
    let mut worst: f64 = 0.0;
    let mut at = f64::NAN;
    let mut count = 0usize;
    for i in 1..xs.len() - 1 {
        if near_threshold(xs, &sv.thresholds, i) || (i - 1..=i + 1).any(|k| sv.rule.stops(xs[k])) {
            continue;
        }
        let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
        let (h0, h1) = (x1 - x0, x2 - x1);
        let d1 = (vs[i + 1] * h0 * h0 - vs[i - 1] * h1 * h1 + vs[i] * (h1 * h1 - h0 * h0)) / (h0 * h1 * (h0 + h1));
        let d2 = 2.0 * (vs[i + 1] * h0 - vs[i] * (h0 + h1) + vs[i - 1] * h1) / (h0 * h1 * (h0 + h1));
        let reward = (m.alpha + m.nu * sv.node.mu) * x1;
        let jump = ctx.lambda() * ctx.child_value(x1);
        let lhs = 0.5 * m.sigma * m.sigma * x1 * x1 * d2 + m.net_drift() * x1 * d1 - sv.rate * vs[i];
        let resid = (lhs + reward + jump).abs() / ((sv.rate * vs[i]).abs() + reward.abs() + jump.abs());
        count += 1;
        if resid > worst {
            worst = resid;
            at = x1;
        }
    }
    (worst, ODE_TOL, format!("{count} interior points, worst at x={at:.4e}"))
}

/// Convexity (chord excess), monotonicity and the slope bound `V' <= V_inf`,
/// including the point `x = 0`.
fn convexity(sol: &Solution, id: usize, scale: f64) -> (f64, f64, String) {
    let sv = &sol.stages[id];
    let tol = CONVEXITY_TOL * scale;
    let mut xs = vec![0.0];
    xs.extend_from_slice(&sv.grid.points);
    let mut vs = vec![sv.value_at_zero];
    vs.extend_from_slice(&sv.values);
    let mut chord: f64 = 0.0;
    let mut drop: f64 = 0.0;
    let mut steep: f64 = 0.0;
    for i in 0..xs.len() - 1 {
        let slope = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i]);
        drop = drop.max(vs[i] - vs[i + 1]);
        steep = steep.max((slope - sv.asymptotic_slope) * (xs[i + 1] - xs[i]));
        if i > 0 {
            let t = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            chord = chord.max(vs[i] - ((1.0 - t) * vs[i - 1] + t * vs[i + 1]));
        }
    }
    let worst = chord.max(drop).max(steep);
    (
        worst,
        tol,
        format!("chord excess {chord:.3e}, decrease {drop:.3e}, slope excess {steep:.3e}"),
    )
}

fn asymptote(sol: &Solution, id: usize) -> (f64, f64, String) {
    let sv = &sol.stages[id];
    let x = sv.grid.hi();
    let ratio = sol.value_at(id, x) / x;
    let err = (ratio - sv.asymptotic_slope).abs() / sv.asymptotic_slope.abs();
    (
        err,
        ASYMPTOTE_TOL,
        format!("V(x_hi)/x_hi {ratio:.6} vs {:.6}", sv.asymptotic_slope),
    )
}

/// `L` with `V <= L (1 + x)` at every node: children first,
/// `V <= f_hat (x + |K|) + (alpha + nu mu + lambda A_c) x / (r + alpha - theta) + lambda B_c / r`.
pub fn growth_constant(sol: &Solution) -> f64 {
    let m = &sol.config.market;
    let n = sol.stages.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for node in sol.tree.nodes.iter().rev() {
        let sv = &sol.stages[node.id];
        let ac: f64 = node.children.iter().map(|&(c, p)| p * a[c]).sum();
        let bc: f64 = node.children.iter().map(|&(c, p)| p * b[c]).sum();
        a[node.id] = sv.f_hat + (m.alpha + m.nu * node.mu + node.lambda_next * ac) / (sv.rate - m.net_drift());
        b[node.id] = sv.f_hat * m.k.abs() + node.lambda_next * bc / sv.rate;
    }
    a.iter().chain(&b).fold(0.0, |acc: f64, &v| acc.max(v))
}

fn linear_growth(sol: &Solution, id: usize, l: f64) -> (f64, String) {
    let sv = &sol.stages[id];
    let mut worst = (sv.value_at_zero - l) / l;
    for (&x, &v) in sv.grid.points.iter().zip(&sv.values) {
        worst = worst.max((v - l * (1.0 + x)) / (l * (1.0 + x)));
    }
    (
        worst.max(0.0),
        format!("L = {l:.6}, tightest V/(L(1+x)) - 1 = {worst:.4}"),
    )
}

/// `W > 0` exactly off the stopping set, `W = 0` and `M <= 0` on it, and the
/// stopping set unbounded above exactly when `M` falls to minus infinity.
fn regime_pattern(sol: &Solution, id: usize, scale: f64) -> (f64, String) {
    let sv = &sol.stages[id];
    let ctx = StageContext::from_solution(sol, id);
    let tol = OBSTACLE_TOL * scale;
    let xs = &sv.grid.points;
    let mut w_bad = 0usize;
    let mut m_bad = 0usize;
    for i in 0..xs.len() {
        if near_threshold(xs, &sv.thresholds, i) {
            continue;
        }
        let w = sv.excess[i];
        if sv.rule.stops(xs[i]) {
            if w.abs() > tol {
                w_bad += 1;
            }
            if ctx.running_reward(xs[i]) > tol {
                m_bad += 1;
            }
        } else if w <= 0.0 {
            w_bad += 1;
        }
    }
    let stops_far = matches!(sv.regime, Regime::Case2 | Regime::Case5 | Regime::K0Stop);
    let p = sv.asymptote_coefficient;
    let far_bad = !sv.ambiguous && ((stops_far && p > P_ZERO_TOL) || (!stops_far && p < -P_ZERO_TOL));
    let total = (w_bad + m_bad + far_bad as usize) as f64;
    (
        total,
        format!(
            "{:?}: {w_bad} W mismatches, {m_bad} points stopping with M > 0, asymptote {}",
            sv.regime,
            if far_bad { "inconsistent" } else { "consistent" }
        ),
    )
}

fn reward_at_zero(sol: &Solution, id: usize) -> (f64, String) {
    let k = sol.config.market.k;
    let m0 = StageContext::from_solution(sol, id).running_reward(0.0);
    if k == 0.0 {
        return (0.0, format!("zero fee, M(0) = {m0:.3e}"));
    }
    let ok = m0.signum() == k.signum() && m0 != 0.0;
    ((!ok) as u8 as f64, format!("M(0) = {m0:.6e}, K = {k}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::solver::{solve_all, SolveOptions};

    fn solved(scenario: Scenario) -> Solution {
        solve_all(&single_shock(scenario), &SolveOptions::default()).unwrap()
    }

    #[test]
    fn deterministic_checks_pass_on_both_scenarios() {
        for scenario in [Scenario::PositiveFee, Scenario::NegativeFee] {
            let sol = solved(scenario);
            let report = run_checks(&sol.config, &sol, None).unwrap();
            assert!(report.pass(), "{}", report.table());
            assert_eq!(report.records.len(), 9 * sol.stages.len());
        }
    }

    #[test]
    fn corrupted_thresholds_break_smooth_fit_and_pattern() {
        let sol = solved(Scenario::PositiveFee);
        let bad = corrupt_thresholds(&sol, 1.05);
        let report = run_checks(&bad.config, &bad, None).unwrap();
        assert!(!report.check_passes(Check::SmoothFit), "{}", report.table());
        assert!(!report.check_passes(Check::RegimePattern), "{}", report.table());
    }

    #[test]
    fn zero_fee_passes_via_closed_form() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.k = 0.0;
        let sol = solve_all(&cfg, &SolveOptions::default()).unwrap();
        let report = run_checks(&cfg, &sol, None).unwrap();
        for check in [
            Check::ObstacleDomination,
            Check::Convexity,
            Check::AsymptoticSlope,
            Check::MoneysWorth,
            Check::RewardAtZero,
        ] {
            assert!(report.check_passes(check), "{}", report.table());
        }
    }

    #[test]
    fn report_round_trips_and_is_pure() {
        let sol = solved(Scenario::NegativeFee);
        let a = run_checks(&sol.config, &sol, None).unwrap();
        let b = run_checks(&sol.config, &sol, None).unwrap();
        assert_eq!(a, b);
        let back: VerifyReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back.records.len(), a.records.len());
        assert!(a.table().lines().count() == a.records.len() + 1);
    }

    #[test]
    fn growth_constant_bounds_terminal_closed_form() {
        let sol = solved(Scenario::PositiveFee);
        let l = growth_constant(&sol);
        for sv in &sol.stages {
            for x in [0.0, 1.0, 1e4, 1e7] {
                assert!(sv.value(x) <= l * (1.0 + x));
            }
        }
    }
}
