//! The two single-shock scenarios against published reference values.
//!
//! Rows that miss their tolerance are flagged rather than failed, and each
//! scenario with a flag gets a Monte Carlo arbitration: the computed policy
//! and the policy built from the reference values are both probed with
//! shifted thresholds and compared head to head.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::presets::{constant_mortality, single_shock, Scenario, MU0};
use crate::model::ModelConfig;
use crate::montecarlo::{compare_policies, optimality_probe_policy, Estimate, ProbeReport, SimConfig, SimModel};
use crate::mortality::{calibrate, enumerate_states, life_expectancy, CalibrationMode};
use crate::policy::{Policy, StoppingRule};
use crate::solver::{solve_all, Regime, Solution, SolveOptions};

/// Root life expectancy used to calibrate `mu0`.
pub const TARGET_LIFE_EXPECTANCY: f64 = 22.41;
/// Life expectancy the insurer agrees on, used to calibrate `mu_hat`.
pub const TARGET_OBJECTIVE_LIFE_EXPECTANCY: f64 = 16.2162;

pub mod reference {
    pub const MU0: f64 = 0.044623;
    pub const MU_HAT: f64 = 0.061667;
    pub const LIFE_EXPECTANCY: f64 = 16.2162;
    pub const POS_X1_MU0: f64 = 32772.84;
    pub const POS_X1_2MU0: f64 = 49028.47;
    pub const POS_ROOT: f64 = 20383.66;
    pub const POS_PAYMENT: f64 = 2308.84;
    pub const NEG_X1_2MU0: f64 = 9673.02;
    pub const NEG_ROOT: f64 = 53639.08;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tolerance {
    Absolute(f64),
    Relative(f64),
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    Pass,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub scenario: Option<Scenario>,
    pub label: String,
    pub computed: String,
    pub reference: String,
    /// Absolute or relative error, matching the tolerance kind.
    pub error: Option<f64>,
    pub tolerance: Tolerance,
    pub status: RowStatus,
}

impl ReferenceRow {
    fn numeric(scenario: Option<Scenario>, label: &str, computed: f64, reference: f64, tolerance: Tolerance) -> Self {
        let error = match tolerance {
            Tolerance::Absolute(_) => (computed - reference).abs(),
            _ => (computed - reference).abs() / reference.abs(),
        };
        let ok = match tolerance {
            Tolerance::Absolute(t) | Tolerance::Relative(t) => error <= t,
            Tolerance::Exact => error == 0.0,
        };
        Self {
            scenario,
            label: label.into(),
            computed: format!("{computed:.6}"),
            reference: format!("{reference}"),
            error: Some(error),
            tolerance,
            status: if ok { RowStatus::Pass } else { RowStatus::Flag },
        }
    }

    fn regime(scenario: Scenario, label: &str, computed: Regime, reference: Regime) -> Self {
        Self {
            scenario: Some(scenario),
            label: label.into(),
            computed: format!("{computed:?}"),
            reference: format!("{reference:?}"),
            error: None,
            tolerance: Tolerance::Exact,
            status: if computed == reference {
                RowStatus::Pass
            } else {
                RowStatus::Flag
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// The computed policy survives the probe and the reference policy does not.
    ComputedFavored,
    ReferenceFavored,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub x0: f64,
    pub computed: Estimate,
    pub reference: Estimate,
    /// `computed - reference` from paired samples.
    pub difference: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arbitration {
    pub scenario: Scenario,
    pub computed_policy: Policy,
    pub reference_policy: Policy,
    pub computed_probe: ProbeReport,
    pub reference_probe: ProbeReport,
    pub head_to_head: HeadToHead,
    pub verdict: Verdict,
}

impl Arbitration {
    pub fn summary(&self) -> String {
        let d = &self.head_to_head.difference;
        format!(
            "{:?}: computed policy probe {}, reference policy probe {}; computed - reference at x0 = {:.2}: {:.3} +- {:.3}; verdict {:?}",
            self.scenario,
            if self.computed_probe.pass { "PASS" } else { "FAIL" },
            if self.reference_probe.pass { "PASS" } else { "FAIL" },
            self.head_to_head.x0,
            d.mean,
            d.stderr,
            self.verdict
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub rows: Vec<ReferenceRow>,
    pub arbitration: Option<Arbitration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub calibration: Vec<ReferenceRow>,
    pub scenarios: Vec<ScenarioReport>,
}

impl CaseStudyReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReferenceRow> {
        self.calibration
            .iter()
            .chain(self.scenarios.iter().flat_map(|s| s.rows.iter()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:<26} {:>16} {:>12} {:>11} {:>14}  {}\n",
            "scenario", "quantity", "computed", "reference", "error", "tolerance", "status"
        );
        for r in self.rows() {
            let scenario = r.scenario.map_or("common".to_string(), |s| format!("{s:?}"));
            let tol = match r.tolerance {
                Tolerance::Absolute(t) => format!("abs {t:.1e}"),
                Tolerance::Relative(t) => format!("rel {t:.1e}"),
                Tolerance::Exact => "exact".into(),
            };
            let err = r.error.map_or("-".to_string(), |e| format!("{e:.3e}"));
            let status = match r.status {
                RowStatus::Pass => "PASS",
                RowStatus::Flag => "FLAG",
            };
            out.push_str(&format!(
                "{:<12} {:<26} {:>16} {:>12} {:>11} {:>14}  {}\n",
                scenario, r.label, r.computed, r.reference, err, tol, status
            ));
        }
        for s in &self.scenarios {
            if let Some(a) = &s.arbitration {
                out.push_str(&format!("arbitration {}\n", a.summary()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyOptions {
    pub solve: SolveOptions,
    pub sim: SimConfig,
    /// Relative threshold shift used by the probes.
    pub perturbation: f64,
    /// Run the Monte Carlo arbitration for scenarios with flagged rows.
    pub arbitrate: bool,
}

impl Default for CaseStudyOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            sim: SimConfig::default(),
            perturbation: 0.1,
            arbitrate: true,
        }
    }
}

/// Calibration rows: `mu0` from the life expectancy under constant
/// mortality, `mu_hat` from the agreed one, and the life expectancy of the
/// single-shock tree.
pub fn calibration_rows() -> Result<Vec<ReferenceRow>> {
    let cfg = single_shock(Scenario::PositiveFee);
    let mu0 = calibrate(
        TARGET_LIFE_EXPECTANCY,
        CalibrationMode::Baseline,
        &constant_mortality(Scenario::PositiveFee),
    )?;
    let mu_hat = calibrate(TARGET_OBJECTIVE_LIFE_EXPECTANCY, CalibrationMode::Objective, &cfg)?;
    let le = life_expectancy(&enumerate_states(&cfg)?, 0);
    Ok(vec![
        ReferenceRow::numeric(None, "mu0 (calibrated)", mu0, reference::MU0, Tolerance::Absolute(1e-6)),
        ReferenceRow::numeric(
            None,
            "mu_hat (calibrated)",
            mu_hat,
            reference::MU_HAT,
            Tolerance::Absolute(1e-5),
        ),
        ReferenceRow::numeric(
            None,
            "objective life expectancy",
            le,
            reference::LIFE_EXPECTANCY,
            Tolerance::Absolute(5e-3),
        ),
    ])
}

fn node_ids(sol: &Solution) -> (usize, usize) {
    let same = sol.tree.find(1, MU0).expect("unchanged-mortality node");
    let doubled = sol.tree.find(1, 2.0 * MU0).expect("doubled-mortality node");
    (same, doubled)
}

/// Policy built from the published thresholds and regimes.
pub fn reference_policy(scenario: Scenario, sol: &Solution) -> Policy {
    let (same, doubled) = node_ids(sol);
    let mut rules = vec![StoppingRule::Never; sol.stages.len()];
    match scenario {
        Scenario::PositiveFee => {
            rules[0] = StoppingRule::StopAbove(reference::POS_ROOT);
            rules[same] = StoppingRule::StopAbove(reference::POS_X1_MU0);
            rules[doubled] = StoppingRule::StopAbove(reference::POS_X1_2MU0);
        }
        Scenario::NegativeFee => {
            rules[0] = StoppingRule::StopBelow(reference::NEG_ROOT);
            rules[same] = StoppingRule::Immediately;
            rules[doubled] = StoppingRule::StopBelow(reference::NEG_X1_2MU0);
        }
    }
    Policy::new(rules)
}

fn scenario_rows(scenario: Scenario, sol: &Solution) -> Vec<ReferenceRow> {
    let (same, doubled) = node_ids(sol);
    let s = Some(scenario);
    let root = sol.root();
    let first = |id: usize| sol.stage(id).thresholds.first().copied().unwrap_or(f64::NAN);
    match scenario {
        Scenario::PositiveFee => {
            let payment = (first(0) - root.k) * sol.config.market.payout_rate();
            vec![
                ReferenceRow::regime(scenario, "root regime", root.regime, Regime::Case2),
                ReferenceRow::numeric(
                    s,
                    "x*_1(mu0)",
                    first(same),
                    reference::POS_X1_MU0,
                    Tolerance::Relative(5e-3),
                ),
                ReferenceRow::numeric(
                    s,
                    "x*_1(2mu0)",
                    first(doubled),
                    reference::POS_X1_2MU0,
                    Tolerance::Relative(5e-3),
                ),
                ReferenceRow::numeric(s, "b*", first(0), reference::POS_ROOT, Tolerance::Relative(1e-2)),
                ReferenceRow::numeric(
                    s,
                    "annuity payment",
                    payment,
                    reference::POS_PAYMENT,
                    Tolerance::Relative(1e-2),
                ),
            ]
        }
        Scenario::NegativeFee => vec![
            ReferenceRow::regime(scenario, "root regime", root.regime, Regime::Case4),
            ReferenceRow::regime(scenario, "regime (1, mu0)", sol.stage(same).regime, Regime::Case5),
            ReferenceRow::numeric(
                s,
                "x**_1(2mu0)",
                first(doubled),
                reference::NEG_X1_2MU0,
                Tolerance::Relative(5e-3),
            ),
            ReferenceRow::numeric(s, "b**", first(0), reference::NEG_ROOT, Tolerance::Relative(2e-2)),
        ],
    }
}

/// Probe both policies and compare them where they first disagree: halfway
/// between the two root thresholds.
pub fn arbitrate(
    scenario: Scenario,
    cfg: &ModelConfig,
    sol: &Solution,
    options: &CaseStudyOptions,
) -> Result<Arbitration> {
    let model = SimModel::new(cfg)?;
    let computed = sol.policy();
    let reference = reference_policy(scenario, sol);
    let computed_probe = optimality_probe_policy(&model, &options.sim, &computed, options.perturbation, None)?;
    let reference_probe = optimality_probe_policy(&model, &options.sim, &reference, options.perturbation, None)?;
    let own = computed
        .rule(0)
        .thresholds()
        .first()
        .copied()
        .unwrap_or(cfg.market.wealth_scale());
    let theirs = reference.rule(0).thresholds()[0];
    let x0 = 0.5 * (own + theirs);
    let (r, c, d) = compare_policies(&model, &options.sim, &reference, &computed, x0)?;
    let verdict = match (computed_probe.pass, reference_probe.pass) {
        (true, false) => Verdict::ComputedFavored,
        (false, true) => Verdict::ReferenceFavored,
        _ => Verdict::Inconclusive,
    };
    Ok(Arbitration {
        scenario,
        computed_policy: computed,
        reference_policy: reference,
        computed_probe,
        reference_probe,
        head_to_head: HeadToHead {
            x0,
            computed: c,
            reference: r,
            difference: d,
        },
        verdict,
    })
}

/// Solve one scenario, compare with the reference values and arbitrate flags.
pub fn reproduce_scenario(scenario: Scenario, options: &CaseStudyOptions) -> Result<ScenarioReport> {
    let cfg = single_shock(scenario);
    let sol = solve_all(&cfg, &options.solve)?;
    let rows = scenario_rows(scenario, &sol);
    let flagged = rows.iter().any(|r| r.status == RowStatus::Flag);
    let arbitration = if flagged && options.arbitrate {
        Some(arbitrate(scenario, &cfg, &sol, options)?)
    } else {
        None
    };
    Ok(ScenarioReport {
        scenario,
        rows,
        arbitration,
    })
}

pub fn reproduce(options: &CaseStudyOptions) -> Result<CaseStudyReport> {
    Ok(CaseStudyReport {
        calibration: calibration_rows()?,
        scenarios: vec![
            reproduce_scenario(Scenario::PositiveFee, options)?,
            reproduce_scenario(Scenario::NegativeFee, options)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_rows_pass() {
        for row in calibration_rows().unwrap() {
            assert_eq!(row.status, RowStatus::Pass, "{row:?}");
        }
    }

    #[test]
    fn terminal_rows_of_the_positive_fee_pass() {
        let opts = CaseStudyOptions {
            arbitrate: false,
            ..CaseStudyOptions::default()
        };
        let report = reproduce_scenario(Scenario::PositiveFee, &opts).unwrap();
        for label in ["root regime", "x*_1(mu0)", "x*_1(2mu0)"] {
            let row = report.rows.iter().find(|r| r.label == label).unwrap();
            assert_eq!(row.status, RowStatus::Pass, "{row:?}");
        }
        assert!(report.arbitration.is_none());
    }

    #[test]
    fn reference_policy_covers_every_node() {
        let sol = solve_all(&single_shock(Scenario::NegativeFee), &SolveOptions::default()).unwrap();
        let p = reference_policy(Scenario::NegativeFee, &sol);
        assert_eq!(p.rules.len(), sol.stages.len());
        assert_eq!(p.rule(0), StoppingRule::StopBelow(reference::NEG_ROOT));
    }

    #[test]
    fn table_has_a_line_per_row() {
        let report = CaseStudyReport {
            calibration: calibration_rows().unwrap(),
            scenarios: vec![],
        };
        assert_eq!(report.table().lines().count(), 4);
    }
}
