//! Named stage solvers.

use crate::error::{Error, Result};

use super::stage::{solve_closed_form, solve_majorant, StageContext};
use super::StageValue;

/// Solves one node given its solved children.
pub trait StageSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn solve(&self, ctx: &StageContext<'_>) -> Result<StageValue>;
}

/// Closed form where one exists, majorant otherwise.
pub struct AutoSolver;

impl StageSolver for AutoSolver {
    fn name(&self) -> &'static str {
        "auto"
    }
    fn description(&self) -> &'static str {
        "closed form at the last stage and for zero fee, concave majorant elsewhere"
    }
    fn solve(&self, ctx: &StageContext<'_>) -> Result<StageValue> {
        match solve_closed_form(ctx)? {
            Some(sv) => Ok(sv),
            None => solve_majorant(ctx),
        }
    }
}

/// Concave majorant at every node, including those with a closed form.
pub struct MajorantSolver;

impl StageSolver for MajorantSolver {
    fn name(&self) -> &'static str {
        "majorant"
    }
    fn description(&self) -> &'static str {
        "concave majorant on a wealth grid at every node"
    }
    fn solve(&self, ctx: &StageContext<'_>) -> Result<StageValue> {
        solve_majorant(ctx)
    }
}

/// Closed forms only; fails at nodes without one.
pub struct ClosedFormSolver;

impl StageSolver for ClosedFormSolver {
    fn name(&self) -> &'static str {
        "closed-form"
    }
    fn description(&self) -> &'static str {
        "exact formulas only (last stage or zero fee)"
    }
    fn solve(&self, ctx: &StageContext<'_>) -> Result<StageValue> {
        solve_closed_form(ctx)?.ok_or_else(|| {
            Error::InvalidParam(format!(
                "no closed form at node {} (stage {}, mu = {})",
                ctx.node.id, ctx.node.n, ctx.node.mu
            ))
        })
    }
}

pub struct StageSolverRegistry {
    solvers: Vec<Box<dyn StageSolver>>,
}

impl StageSolverRegistry {
    pub fn empty() -> Self {
        Self { solvers: Vec::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(AutoSolver));
        r.register(Box::new(MajorantSolver));
        r.register(Box::new(ClosedFormSolver));
        r
    }

    /// Add a solver; a later registration under the same name replaces the earlier one.
    pub fn register(&mut self, solver: Box<dyn StageSolver>) {
        self.solvers.retain(|s| s.name() != solver.name());
        self.solvers.push(solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn StageSolver> {
        self.solvers
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "stage solver",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.solvers.iter().map(|s| s.name()).collect()
    }
}

impl Default for StageSolverRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::solver::{solve_all_with, SolveOptions};

    #[test]
    fn lookup_and_listing() {
        let r = StageSolverRegistry::with_defaults();
        assert_eq!(r.names(), vec!["auto", "majorant", "closed-form"]);
        assert_eq!(r.get("majorant").unwrap().name(), "majorant");
        let err = r.get("nope").err().unwrap();
        assert!(err.to_string().contains("auto, majorant, closed-form"));
    }

    #[test]
    fn closed_form_only_fails_off_the_last_stage() {
        let cfg = single_shock(Scenario::PositiveFee);
        let opts = SolveOptions {
            stage_solver: "closed-form".into(),
            ..SolveOptions::default()
        };
        let err = solve_all_with(&cfg, &opts, &StageSolverRegistry::with_defaults()).unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)));
    }
}
