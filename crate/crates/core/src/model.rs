//! Model parameters, validation and the scalar quantities derived from them.
//!
//! A [`ModelConfig`] bundles the market/insurer parameters with the
//! piecewise-deterministic mortality process. It deserializes from a flat
//! JSON object with the fields `theta, alpha, sigma, rho, rho_hat, mu_hat, K,
//! nu, N, lambdas, mu0, kernel`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mortality::enumerate_unchecked;

/// Relative tolerance used to identify two mortality values.
pub const MU_MATCH_RTOL: f64 = 1e-12;

/// Tolerance on the total mass of a kernel distribution.
const PROB_SUM_TOL: f64 = 1e-9;

/// Market, preference, fee and insurer parameters. All rates are annual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Drift of the fund.
    pub theta: f64,
    /// Dividend (consumption) rate.
    pub alpha: f64,
    /// Volatility of the fund.
    pub sigma: f64,
    /// Subjective discount rate.
    pub rho: f64,
    /// Rate guaranteed by the insurer.
    pub rho_hat: f64,
    /// Mortality force used by the insurer for pricing.
    pub mu_hat: f64,
    /// Signed annuitization fee.
    #[serde(rename = "K")]
    pub k: f64,
    /// Bequest weight.
    pub nu: f64,
}

impl MarketParams {
    /// Net drift of wealth, `theta - alpha`.
    pub fn net_drift(&self) -> f64 {
        self.theta - self.alpha
    }

    /// Insurer price of a unit annuity stream, inverted: `rho_hat + mu_hat`.
    pub fn payout_rate(&self) -> f64 {
        self.rho_hat + self.mu_hat
    }

    /// Wealth scale `max(|K|, 1)` used to size grids and tolerances.
    pub fn wealth_scale(&self) -> f64 {
        self.k.abs().max(1.0)
    }
}

/// One target of a post-jump distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTarget {
    pub mu: f64,
    pub prob: f64,
}

/// Post-jump distribution used from stage `from_stage`.
///
/// When `from_mu` is set the rule applies only to nodes with that mortality
/// value; such rules take precedence over stage-wide rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRule {
    pub from_stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_mu: Option<f64>,
    pub targets: Vec<KernelTarget>,
}

/// Piecewise-deterministic mortality specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmpSpec {
    /// Maximum number of jumps.
    #[serde(rename = "N")]
    pub n_jumps: usize,
    /// Jump intensities `lambda_1..lambda_N`.
    pub lambdas: Vec<f64>,
    /// Initial mortality force.
    pub mu0: f64,
    #[serde(default)]
    pub kernel: Vec<KernelRule>,
}

impl PdmpSpec {
    /// Intensity of the jump leaving stage `n`, i.e. `lambda_{n+1}` (zero at stage N).
    pub fn lambda_next(&self, n: usize) -> f64 {
        if n < self.n_jumps {
            self.lambdas[n]
        } else {
            0.0
        }
    }

    /// Kernel rule used at node `(n, mu)`, preferring mortality-specific rules.
    pub fn rule_for(&self, n: usize, mu: f64) -> Option<&KernelRule> {
        let mut generic = None;
        for rule in self.kernel.iter().filter(|r| r.from_stage == n) {
            match rule.from_mu {
                Some(m) if same_mu(m, mu) => return Some(rule),
                Some(_) => {}
                None => {
                    if generic.is_none() {
                        generic = Some(rule);
                    }
                }
            }
        }
        generic
    }
}

/// Full model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub market: MarketParams,
    #[serde(flatten)]
    pub pdmp: PdmpSpec,
}

impl ModelConfig {
    /// Parse a configuration from JSON text (not validated).
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParam(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Whether two mortality values are identified (relative tolerance 1e-12).
pub fn same_mu(a: f64, b: f64) -> bool {
    (a - b).abs() <= MU_MATCH_RTOL * a.abs().max(b.abs())
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParam(msg()))
    }
}

/// Check every invariant of the configuration and return it unchanged.
///
/// Well-posedness is checked against the smallest mortality value that is
/// actually reachable from `mu0` through the kernel.
pub fn validate_config(cfg: &ModelConfig) -> Result<ModelConfig> {
    let m = &cfg.market;
    let all = [m.theta, m.alpha, m.sigma, m.rho, m.rho_hat, m.mu_hat, m.k, m.nu];
    check(all.iter().all(|v| v.is_finite()), || "parameters must be finite".into())?;
    check(m.sigma > 0.0, || format!("sigma must be > 0, got {}", m.sigma))?;
    check(m.rho > 0.0, || format!("rho must be > 0, got {}", m.rho))?;
    check(m.alpha >= 0.0, || format!("alpha must be >= 0, got {}", m.alpha))?;
    check(m.rho_hat > 0.0, || format!("rho_hat must be > 0, got {}", m.rho_hat))?;
    check(m.mu_hat > 0.0, || format!("mu_hat must be > 0, got {}", m.mu_hat))?;
    check((0.0..=1.0).contains(&m.nu), || {
        format!("nu must lie in [0,1], got {}", m.nu)
    })?;

    let p = &cfg.pdmp;
    check(p.mu0.is_finite() && p.mu0 > 0.0, || {
        format!("mu0 must be > 0, got {}", p.mu0)
    })?;
    check(p.lambdas.len() == p.n_jumps, || {
        format!("lambdas has {} entries but N = {}", p.lambdas.len(), p.n_jumps)
    })?;
    for (i, l) in p.lambdas.iter().enumerate() {
        check(l.is_finite() && *l >= 0.0, || {
            format!("lambda_{} must be finite and >= 0", i + 1)
        })?;
    }
    for rule in &p.kernel {
        check(rule.from_stage < p.n_jumps, || {
            format!("kernel rule from stage {} but N = {}", rule.from_stage, p.n_jumps)
        })?;
        if rule.targets.is_empty() {
            return Err(Error::InvalidDistribution(format!(
                "rule from stage {} has no targets",
                rule.from_stage
            )));
        }
        let mut total = 0.0;
        for t in &rule.targets {
            check(t.mu.is_finite() && t.mu > 0.0, || {
                format!("kernel target mu must be > 0, got {}", t.mu)
            })?;
            if !(t.prob.is_finite() && t.prob > 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "probabilities must be > 0, got {}",
                    t.prob
                )));
            }
            total += t.prob;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities from stage {} sum to {total}",
                rule.from_stage
            )));
        }
    }

    let tree = enumerate_unchecked(cfg, crate::mortality::DEFAULT_TREE_CAP)?;
    let mu_min = tree.mu_min();
    let excess = m.net_drift() - m.rho - mu_min;
    if excess >= 0.0 {
        return Err(Error::IllPosed { excess });
    }
    Ok(cfg.clone())
}

/// Effective discount rate `r_n(mu) = rho + mu + lambda_{n+1}`.
pub fn effective_rate(cfg: &ModelConfig, n: usize, mu: f64) -> f64 {
    cfg.market.rho + mu + cfg.pdmp.lambda_next(n)
}

/// Present value per unit wealth of the running reward `(alpha + nu mu) x`
/// discounted at `r_n(mu)`: `(alpha + nu mu) / (r_n(mu) + alpha - theta)`.
pub fn beta(cfg: &ModelConfig, n: usize, mu: f64) -> f64 {
    let m = &cfg.market;
    (m.alpha + m.nu * mu) / (effective_rate(cfg, n, mu) - m.net_drift())
}

/// Configurations used by the case study: one mortality shock that either
/// leaves `mu0` unchanged (probability `p`) or doubles it.
pub mod presets {
    use super::*;

    /// Fee and bequest settings of the two case-study scenarios.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    pub enum Scenario {
        /// `K = 1500`, `nu = 0.35`.
        PositiveFee,
        /// `K = -1500`, `nu = 0.6`.
        NegativeFee,
    }

    pub const MU0: f64 = 0.044623;
    pub const LAMBDA1: f64 = 0.1;
    pub const P_UNCHANGED: f64 = 0.2;

    /// Market and insurer parameters of the case study with the scenario's fee and bequest weight.
    pub fn market(scenario: Scenario) -> MarketParams {
        let (k, nu) = match scenario {
            Scenario::PositiveFee => (1500.0, 0.35),
            Scenario::NegativeFee => (-1500.0, 0.6),
        };
        MarketParams {
            theta: 0.087858,
            alpha: 0.0615,
            sigma: 0.152952,
            rho: 0.0404,
            rho_hat: 0.0606,
            mu_hat: 0.061667,
            k,
            nu,
        }
    }

    /// Single-shock configuration of the case study.
    pub fn single_shock(scenario: Scenario) -> ModelConfig {
        ModelConfig {
            market: market(scenario),
            pdmp: PdmpSpec {
                n_jumps: 1,
                lambdas: vec![LAMBDA1],
                mu0: MU0,
                kernel: vec![KernelRule {
                    from_stage: 0,
                    from_mu: None,
                    targets: vec![
                        KernelTarget {
                            mu: MU0,
                            prob: P_UNCHANGED,
                        },
                        KernelTarget {
                            mu: 2.0 * MU0,
                            prob: 1.0 - P_UNCHANGED,
                        },
                    ],
                }],
            },
        }
    }

    /// Same market with constant mortality `mu0` (no jumps).
    pub fn constant_mortality(scenario: Scenario) -> ModelConfig {
        ModelConfig {
            market: market(scenario),
            pdmp: PdmpSpec {
                n_jumps: 0,
                lambdas: vec![],
                mu0: MU0,
                kernel: vec![],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;

    #[test]
    fn case_study_config_is_well_posed() {
        let cfg = single_shock(Scenario::PositiveFee);
        assert_eq!(validate_config(&cfg).unwrap(), cfg);
    }

    #[test]
    fn rejects_explosive_drift() {
        let mut cfg = constant_mortality(Scenario::PositiveFee);
        cfg.market.theta = 0.2;
        cfg.market.alpha = 0.0;
        cfg.market.rho = 0.05;
        cfg.pdmp.mu0 = 0.05;
        match validate_config(&cfg) {
            Err(Error::IllPosed { excess }) => assert!((excess - 0.1).abs() < 1e-12),
            other => panic!("expected IllPosed, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unnormalized_kernel() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.pdmp.kernel[0].targets[1].prob = 0.7;
        assert!(matches!(validate_config(&cfg), Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn range_violations_are_invalid_params() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.sigma = 0.0;
        assert!(matches!(validate_config(&cfg), Err(Error::InvalidParam(_))));
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.nu = 1.5;
        assert!(matches!(validate_config(&cfg), Err(Error::InvalidParam(_))));
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.pdmp.lambdas.push(0.3);
        assert!(matches!(validate_config(&cfg), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn well_posedness_uses_reachable_minimum() {
        // mu0 alone is fine, but the shock can lower mortality below the limit.
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.theta = cfg.market.alpha + cfg.market.rho + 0.02;
        assert!(validate_config(&cfg).is_ok());
        cfg.pdmp.kernel[0].targets[0].mu = 0.001;
        assert!(matches!(validate_config(&cfg), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn effective_rate_values() {
        let cfg = single_shock(Scenario::PositiveFee);
        assert!((effective_rate(&cfg, 0, MU0) - 0.185023).abs() < 1e-12);
        assert!((effective_rate(&cfg, 1, 2.0 * MU0) - 0.129646).abs() < 1e-12);
        assert_eq!(effective_rate(&cfg, 1, MU0), cfg.market.rho + MU0);
    }

    #[test]
    fn beta_values() {
        let cfg = single_shock(Scenario::PositiveFee);
        let direct = (0.0615 + 0.35 * MU0) / (0.085023 + 0.0615 - 0.087858);
        assert!((beta(&cfg, 1, MU0) - direct).abs() < 1e-12);
        assert!((beta(&cfg, 1, MU0) - 1.3146).abs() < 1e-4);
        let cfg = single_shock(Scenario::NegativeFee);
        assert!((beta(&cfg, 1, 2.0 * MU0) - 1.1139).abs() < 1e-4);
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.market.alpha = 0.0;
        cfg.market.nu = 0.0;
        assert_eq!(beta(&cfg, 0, MU0), 0.0);
    }

    #[test]
    fn json_round_trip_uses_flat_field_names() {
        let cfg = single_shock(Scenario::NegativeFee);
        let text = cfg.to_json();
        for key in [
            "\"theta\"",
            "\"K\"",
            "\"N\"",
            "\"lambdas\"",
            "\"mu0\"",
            "\"from_stage\"",
            "\"prob\"",
        ] {
            assert!(text.contains(key), "missing {key}");
        }
        assert_eq!(ModelConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn mu_specific_rule_takes_precedence() {
        let mut cfg = single_shock(Scenario::PositiveFee);
        cfg.pdmp.kernel.push(KernelRule {
            from_stage: 0,
            from_mu: Some(MU0),
            targets: vec![KernelTarget {
                mu: 3.0 * MU0,
                prob: 1.0,
            }],
        });
        let rule = cfg.pdmp.rule_for(0, MU0).unwrap();
        assert_eq!(rule.targets.len(), 1);
        let rule = cfg.pdmp.rule_for(0, 0.05).unwrap();
        assert_eq!(rule.targets.len(), 2);
    }
}
