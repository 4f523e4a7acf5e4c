//! Closed-form solution of the last-stage problem (constant mortality).
//!
//! With mortality frozen at `mu` the value is either the obstacle
//! `f_hat (x - K)`, the never-stop value `beta x`, or a smooth-fit combination
//! `beta x + zeta x^g` with `g = g+` (stop above a threshold, `K > 0`) or
//! `g = g-` (stop below a threshold, `K < 0`).

use serde::{Deserialize, Serialize};

use crate::diffusion::characteristic_roots;
use crate::model::{beta, effective_rate, ModelConfig};

/// Geometry of the last-stage stopping set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalRegime {
    /// `K > 0`, `f_hat <= beta`: keep the fund forever.
    NeverStop,
    /// `K > 0`, `f_hat > beta`: annuitize once wealth reaches `x*`.
    StopAbove,
    /// `K < 0`, `f_hat < beta`: annuitize while wealth is at most `x**`.
    StopBelow,
    /// `K < 0`, `f_hat >= beta`: annuitize immediately.
    StopEverywhere,
    /// `K = 0`, `f_hat < beta`.
    K0NeverStop,
    /// `K = 0`, `f_hat >= beta`.
    K0StopEverywhere,
}

/// Last-stage solution at mortality `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSolution {
    pub mu: f64,
    pub regime: TerminalRegime,
    /// Upper threshold (present iff `StopAbove`).
    pub x_star: Option<f64>,
    /// Lower threshold (present iff `StopBelow`).
    pub x_star_star: Option<f64>,
    /// Natural log of the power-term coefficient, present with a threshold.
    pub ln_zeta: Option<f64>,
    pub k: f64,
    pub rate: f64,
    pub f_hat: f64,
    pub beta: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl TerminalSolution {
    /// Power-term coefficient `zeta` (may overflow for extreme parameters; use `ln_zeta`).
    pub fn zeta(&self) -> Option<f64> {
        self.ln_zeta.map(f64::exp)
    }

    /// `L(N, mu) = (f_hat - beta)(theta - alpha - r)`, the slope of the running reward when `K = 0`.
    pub fn k0_slope(&self, net_drift: f64) -> f64 {
        (self.f_hat - self.beta) * (net_drift - self.rate)
    }

    /// The threshold, if any.
    pub fn threshold(&self) -> Option<f64> {
        self.x_star.or(self.x_star_star)
    }

    /// Whether wealth `x` lies in the stopping set.
    pub fn stops_at(&self, x: f64) -> bool {
        match self.regime {
            TerminalRegime::NeverStop | TerminalRegime::K0NeverStop => false,
            TerminalRegime::StopEverywhere | TerminalRegime::K0StopEverywhere => true,
            TerminalRegime::StopAbove => x >= self.x_star.unwrap(),
            TerminalRegime::StopBelow => x <= self.x_star_star.unwrap(),
        }
    }

    /// Continuation branch `beta x + zeta x^g`, defined for every `x > 0`.
    pub fn continuation_value(&self, x: f64) -> f64 {
        match (self.regime, self.ln_zeta) {
            (TerminalRegime::StopAbove, Some(lz)) => self.beta * x + (lz + self.gamma_plus * x.ln()).exp(),
            (TerminalRegime::StopBelow, Some(lz)) => self.beta * x + (lz + self.gamma_minus * x.ln()).exp(),
            _ => self.beta * x,
        }
    }

    /// Derivative of the continuation branch.
    pub fn continuation_slope(&self, x: f64) -> f64 {
        match (self.regime, self.ln_zeta) {
            (TerminalRegime::StopAbove, Some(lz)) => {
                self.beta + self.gamma_plus * (lz + (self.gamma_plus - 1.0) * x.ln()).exp()
            }
            (TerminalRegime::StopBelow, Some(lz)) => {
                self.beta + self.gamma_minus * (lz + (self.gamma_minus - 1.0) * x.ln()).exp()
            }
            _ => self.beta,
        }
    }

    /// Obstacle `f_hat (x - K)`.
    pub fn obstacle(&self, x: f64) -> f64 {
        self.f_hat * (x - self.k)
    }

    /// `lim V(x)/x = max(beta, f_hat)`.
    pub fn asymptotic_slope(&self) -> f64 {
        self.beta.max(self.f_hat)
    }
}

/// Solve the last-stage problem at mortality `mu`.
pub fn solve_terminal(cfg: &ModelConfig, mu: f64) -> TerminalSolution {
    let m = &cfg.market;
    let n = cfg.pdmp.n_jumps;
    let rate = effective_rate(cfg, n, mu);
    let f_hat = m.payout_rate() / rate;
    let b = beta(cfg, n, mu);
    let roots = characteristic_roots(m, rate);
    let (gp, gm) = (roots.gamma_plus, roots.gamma_minus);
    let k = m.k;
    let mut sol = TerminalSolution {
        mu,
        regime: TerminalRegime::NeverStop,
        x_star: None,
        x_star_star: None,
        ln_zeta: None,
        k,
        rate,
        f_hat,
        beta: b,
        gamma_plus: gp,
        gamma_minus: gm,
    };
    if k > 0.0 {
        if f_hat > b {
            let x = f_hat * k * gp / ((gp - 1.0) * (f_hat - b));
            sol.regime = TerminalRegime::StopAbove;
            sol.x_star = Some(x);
            // zeta* = (f_hat K / (g+ - 1))^{1-g+} ((f_hat - beta)/g+)^{g+}
            sol.ln_zeta = Some((1.0 - gp) * (f_hat * k / (gp - 1.0)).ln() + gp * ((f_hat - b) / gp).ln());
        } else {
            sol.regime = TerminalRegime::NeverStop;
        }
    } else if k < 0.0 {
        if f_hat < b {
            let x = gm * f_hat * k / ((gm - 1.0) * (f_hat - b));
            sol.regime = TerminalRegime::StopBelow;
            sol.x_star_star = Some(x);
            // zeta** = (f_hat K / (g- - 1))^{1-g-} ((f_hat - beta)/g-)^{g-}, both bases positive.
            sol.ln_zeta = Some((1.0 - gm) * (f_hat * k / (gm - 1.0)).ln() + gm * ((f_hat - b) / gm).ln());
        } else {
            sol.regime = TerminalRegime::StopEverywhere;
        }
    } else if f_hat < b {
        sol.regime = TerminalRegime::K0NeverStop;
    } else {
        sol.regime = TerminalRegime::K0StopEverywhere;
    }
    sol
}

/// Value of the last-stage problem at wealth `x >= 0`.
pub fn value_terminal(sol: &TerminalSolution, x: f64) -> f64 {
    match sol.regime {
        TerminalRegime::NeverStop | TerminalRegime::K0NeverStop => sol.beta * x,
        TerminalRegime::StopEverywhere | TerminalRegime::K0StopEverywhere => sol.obstacle(x),
        TerminalRegime::StopAbove | TerminalRegime::StopBelow => {
            if sol.stops_at(x) {
                sol.obstacle(x)
            } else {
                sol.continuation_value(x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;

    fn solve(scenario: Scenario, mu: f64) -> TerminalSolution {
        solve_terminal(&single_shock(scenario), mu)
    }

    #[test]
    fn stop_above_thresholds_match_case_study() {
        let s = solve(Scenario::PositiveFee, MU0);
        assert_eq!(s.regime, TerminalRegime::StopAbove);
        let x = s.x_star.unwrap();
        assert!((x - 32772.84).abs() / 32772.84 < 5e-3, "{x}");
        let s = solve(Scenario::PositiveFee, 2.0 * MU0);
        let x = s.x_star.unwrap();
        assert!((x - 49028.47).abs() / 49028.47 < 5e-3, "{x}");
    }

    #[test]
    fn negative_fee_regimes() {
        let s = solve(Scenario::NegativeFee, MU0);
        assert_eq!(s.regime, TerminalRegime::StopBelow);
        assert!(s.f_hat < s.beta);
        let s2 = solve(Scenario::NegativeFee, 2.0 * MU0);
        assert_eq!(s2.regime, TerminalRegime::StopBelow);
        assert!((s2.beta - 1.1139).abs() < 1e-4);
    }

    fn check_fit(s: &TerminalSolution) {
        let b = s.threshold().unwrap();
        let cont = s.continuation_value(b);
        let obst = s.obstacle(b);
        assert!((cont - obst).abs() <= 1e-10 * obst.abs(), "{cont} vs {obst}");
        let slope = s.continuation_slope(b);
        assert!((slope - s.f_hat).abs() <= 1e-9 * s.f_hat, "{slope} vs {}", s.f_hat);
    }

    #[test]
    fn continuous_and_smooth_fit() {
        check_fit(&solve(Scenario::PositiveFee, MU0));
        check_fit(&solve(Scenario::PositiveFee, 2.0 * MU0));
        check_fit(&solve(Scenario::NegativeFee, MU0));
        check_fit(&solve(Scenario::NegativeFee, 2.0 * MU0));
    }

    #[test]
    fn obstacle_at_zero_for_negative_fee() {
        let s = solve(Scenario::NegativeFee, 2.0 * MU0);
        assert_eq!(value_terminal(&s, 0.0), s.f_hat * 1500.0);
    }

    #[test]
    fn ties_follow_the_weak_inequalities() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        // Choose nu so that beta equals f_hat exactly at mu0.
        let rate = cfg.market.rho + MU0;
        let f_hat = cfg.market.payout_rate() / rate;
        cfg.market.nu = (f_hat * (rate - cfg.market.net_drift()) - cfg.market.alpha) / MU0;
        let s = solve_terminal(&cfg, MU0);
        assert!((s.f_hat - s.beta).abs() < 1e-12);
        let expected_pos = if s.f_hat > s.beta {
            TerminalRegime::StopAbove
        } else {
            TerminalRegime::NeverStop
        };
        assert_eq!(s.regime, expected_pos);
        cfg.market.k = -1500.0;
        let s = solve_terminal(&cfg, MU0);
        let expected_neg = if s.f_hat < s.beta {
            TerminalRegime::StopBelow
        } else {
            TerminalRegime::StopEverywhere
        };
        assert_eq!(s.regime, expected_neg);
    }

    #[test]
    fn zero_fee_uses_slope_sign() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.k = 0.0;
        let s = solve_terminal(&cfg, MU0);
        assert_eq!(s.regime, TerminalRegime::K0StopEverywhere);
        assert_eq!(value_terminal(&s, 100.0), s.f_hat * 100.0);
        cfg.market.nu = 1.0;
        cfg.market.mu_hat = 0.02;
        let s = solve_terminal(&cfg, MU0);
        assert_eq!(s.regime, TerminalRegime::K0NeverStop);
        assert!(s.k0_slope(cfg.market.net_drift()) > 0.0);
        assert!((value_terminal(&s, 100.0) - s.beta * 100.0).abs() < 1e-12);
    }

    #[test]
    fn value_at_stop_above_threshold_exceeds_obstacle_below() {
        let s = solve(Scenario::PositiveFee, MU0);
        let x = 20383.66;
        assert!(value_terminal(&s, x) > s.obstacle(x));
    }
}
