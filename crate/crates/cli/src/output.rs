//! Tables, CSV and JSON writers.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;

use annuity_core::case_study::{CaseStudyReport, RowStatus, Tolerance};
use annuity_core::montecarlo::{PolicyEvalResult, ProbeReport};
use annuity_core::solver::{Solution, StageContext};
use annuity_core::sweep::SweepRow;
use annuity_core::verify::VerifyReport;

use crate::CliError;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Ten significant digits; infinities print as `inf`.
pub fn num(x: f64) -> String {
    format!("{x:.9e}")
}

/// Data goes to `out` or stdout; the human summary goes to stdout when data
/// is written to a file and to stderr otherwise.
pub struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Self {
        Self { out }
    }

    fn writer(&self) -> Result<Box<dyn Write>, CliError> {
        Ok(match &self.out {
            Some(path) => Box::new(io::BufWriter::new(File::create(path)?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    pub fn summary(&self, text: &str) -> Result<(), CliError> {
        if self.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
        Ok(())
    }

    pub fn csv(&self, f: impl FnOnce(&mut csv::Writer<Box<dyn Write>>) -> csv::Result<()>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.writer()?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&self, value: &T) -> Result<(), CliError> {
        let mut w = self.writer()?;
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w, "{text}")?;
        w.flush()?;
        Ok(())
    }
}

pub fn solution_table(sol: &Solution) -> String {
    let mut out = format!(
        "{:>4} {:>2} {:>10} {:>11} {:>28} {:>10} {:>12}  {}\n",
        "node", "n", "mu", "regime", "thresholds", "slope_inf", "V(0)", "method"
    );
    for sv in &sol.stages {
        let th: Vec<String> = sv.thresholds.iter().map(|b| format!("{b:.4}")).collect();
        out.push_str(&format!(
            "{:>4} {:>2} {:>10.6} {:>11} {:>28} {:>10.6} {:>12.4}  {}{}\n",
            sv.node.id,
            sv.node.n,
            sv.node.mu,
            format!("{:?}", sv.regime),
            if th.is_empty() { "-".to_string() } else { th.join(", ") },
            sv.asymptotic_slope,
            sv.value_at_zero,
            sv.method,
            if sv.ambiguous { " (ambiguous asymptote)" } else { "" }
        ));
    }
    out
}

pub fn solution_json(sol: &Solution) -> serde_json::Value {
    let nodes: Vec<serde_json::Value> = sol
        .stages
        .iter()
        .map(|sv| {
            serde_json::json!({
                "node_id": sv.node.id,
                "n": sv.node.n,
                "mu": sv.node.mu,
                "regime": sv.regime,
                "rule": sv.rule,
                "thresholds": sv.thresholds,
                "asymptotic_slope": sv.asymptotic_slope,
                "value_at_zero": sv.value_at_zero,
                "f_hat": sv.f_hat,
                "beta": sv.beta,
                "rate": sv.rate,
                "asymptote_coefficient": sv.asymptote_coefficient,
                "ambiguous": sv.ambiguous,
                "widenings": sv.widenings,
                "method": sv.method,
            })
        })
        .collect();
    serde_json::json!({ "config": sol.config, "options": sol.options, "nodes": nodes })
}

pub fn write_value_table<W: Write>(w: &mut csv::Writer<W>, sol: &Solution) -> csv::Result<()> {
    w.write_record(["node_id", "n", "mu", "x", "V", "W", "M"])?;
    for (id, sv) in sol.stages.iter().enumerate() {
        let ctx = StageContext::from_solution(sol, id);
        for (i, &x) in sv.grid.points.iter().enumerate() {
            let m = if sv.running_reward.len() == sv.grid.points.len() {
                sv.running_reward[i]
            } else {
                ctx.running_reward(x)
            };
            w.write_record([
                id.to_string(),
                sv.node.n.to_string(),
                num(sv.node.mu),
                num(x),
                num(sv.values[i]),
                num(sv.excess[i]),
                num(m),
            ])?;
        }
    }
    Ok(())
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>14} {:>14} {:>11} {:>16}  {}\n",
        "parameter", "value", "regime", "threshold", "status"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>14} {:>14.6} {:>11} {:>16}  {}\n",
            r.parameter.name(),
            r.value,
            r.regime.map_or("-".to_string(), |g| format!("{g:?}")),
            r.threshold.map_or("-".to_string(), |b| format!("{b:.4}")),
            r.error.as_deref().map_or("ok".to_string(), |e| format!("FAILED: {e}"))
        ));
    }
    out
}

pub fn write_sweep<W: Write>(w: &mut csv::Writer<W>, rows: &[SweepRow]) -> csv::Result<()> {
    w.write_record([
        "parameter",
        "value",
        "regime",
        "threshold",
        "threshold_2",
        "status",
        "message",
    ])?;
    for r in rows {
        w.write_record([
            r.parameter.name().to_string(),
            num(r.value),
            r.regime.map_or(String::new(), |g| format!("{g:?}")),
            r.threshold.map_or(String::new(), num),
            r.thresholds.get(1).copied().map_or(String::new(), num),
            if r.failed() { "FAILED".into() } else { "ok".into() },
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    Ok(())
}

pub fn simulation_table(sol: &Solution, runs: &[PolicyEvalResult], probe: Option<&ProbeReport>) -> String {
    let mut out = format!(
        "{:>14} {:>14} {:>12} {:>14} {:>8}\n",
        "x0", "mc_mean", "stderr", "value_at", "z"
    );
    for r in runs {
        let v = sol.value_at(0, r.x0);
        let z = if r.stderr > 0.0 { (r.mean - v) / r.stderr } else { 0.0 };
        out.push_str(&format!(
            "{:>14.2} {:>14.4} {:>12.4} {:>14.4} {:>8.2}\n",
            r.x0, r.mean, r.stderr, v, z
        ));
    }
    if let Some(p) = probe {
        out.push_str(&format!(
            "probe at x0 = {:.2}: base {:.4} +- {:.4}, {}\n",
            p.x0,
            p.base.mean,
            p.base.stderr,
            if p.pass { "PASS" } else { "FAIL" }
        ));
        for v in &p.variants {
            out.push_str(&format!(
                "  {:<28} diff {:>12.4} +- {:<10.4}{}\n",
                v.label,
                v.difference,
                v.difference_stderr,
                if v.beats_base { " beats base" } else { "" }
            ));
        }
    }
    out
}

pub fn write_simulation<W: Write>(
    w: &mut csv::Writer<W>,
    sol: &Solution,
    runs: &[PolicyEvalResult],
) -> csv::Result<()> {
    w.write_record(["x0", "mean", "stderr", "n_paths", "value_at"])?;
    for r in runs {
        w.write_record([
            num(r.x0),
            num(r.mean),
            num(r.stderr),
            r.n_paths.to_string(),
            num(sol.value_at(0, r.x0)),
        ])?;
    }
    Ok(())
}

pub fn write_verify<W: Write>(w: &mut csv::Writer<W>, report: &VerifyReport) -> csv::Result<()> {
    w.write_record([
        "check",
        "node_id",
        "n",
        "mu",
        "max_violation",
        "tolerance",
        "pass",
        "detail",
    ])?;
    for r in &report.records {
        w.write_record([
            r.check.name().to_string(),
            r.node.to_string(),
            r.n.to_string(),
            num(r.mu),
            num(r.max_violation),
            num(r.tolerance),
            r.pass.to_string(),
            r.detail.clone(),
        ])?;
    }
    Ok(())
}

pub fn write_reference_rows<W: Write>(w: &mut csv::Writer<W>, report: &CaseStudyReport) -> csv::Result<()> {
    w.write_record([
        "scenario",
        "quantity",
        "computed",
        "reference",
        "error",
        "tolerance",
        "status",
    ])?;
    for r in report.rows() {
        let tol = match r.tolerance {
            Tolerance::Absolute(t) => format!("abs {}", num(t)),
            Tolerance::Relative(t) => format!("rel {}", num(t)),
            Tolerance::Exact => "exact".into(),
        };
        w.write_record([
            r.scenario.map_or("common".to_string(), |s| format!("{s:?}")),
            r.label.clone(),
            r.computed.clone(),
            r.reference.clone(),
            r.error.map_or(String::new(), num),
            tol,
            match r.status {
                RowStatus::Pass => "PASS".into(),
                RowStatus::Flag => "FLAG".into(),
            },
        ])?;
    }
    Ok(())
}
