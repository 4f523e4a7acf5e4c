//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! and then asserts, so `cargo test --test acceptance -- --nocapture` shows
//! the full scorecard even when some criteria fail.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use annuity_core::case_study::{reference, reproduce_scenario, CaseStudyOptions, TARGET_LIFE_EXPECTANCY};
use annuity_core::diffusion::{Affine, FnWealth, Resolvent};
use annuity_core::model::presets::{constant_mortality, single_shock, Scenario, MU0};
use annuity_core::model::ModelConfig;
use annuity_core::montecarlo::{
    evaluate_policy_at, mc_life_expectancy, optimality_probe, optimality_probe_policy, SimConfig, SimModel,
};
use annuity_core::mortality::{calibrate, enumerate_states, life_expectancy, CalibrationMode};
use annuity_core::solver::{solve_all, GridSpec, Regime, Solution, SolveOptions};
use annuity_core::sweep::{run_sweep, SweepParameter, SweepSpec};
use annuity_core::terminal::solve_terminal;
use annuity_core::verify::{run_suite, spot_wealths, Check};

const SEED: u64 = 20261016;
const SCENARIOS: [Scenario; 2] = [Scenario::PositiveFee, Scenario::NegativeFee];

/// Criteria run one at a time so the runtime limits measure the work itself.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn sim(n_paths: usize) -> SimConfig {
    SimConfig {
        n_paths,
        seed: SEED,
        ..SimConfig::default()
    }
}

fn solved(scenario: Scenario) -> (ModelConfig, Solution) {
    let cfg = single_shock(scenario);
    let sol = solve_all(&cfg, &SolveOptions::default()).unwrap();
    (cfg, sol)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Fastest of a few repetitions, for the sub-millisecond limits.
fn fastest<T>(mut f: impl FnMut() -> T) -> (T, Duration) {
    let mut best = Duration::MAX;
    let mut out = None;
    for _ in 0..5 {
        let t = Instant::now();
        let v = f();
        best = best.min(t.elapsed());
        out = Some(v);
    }
    (out.unwrap(), best)
}

fn verdict(criterion: u32, pass: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_01_calibration() {
    let _g = serial();
    let baseline_cfg = constant_mortality(Scenario::PositiveFee);
    let tree_cfg = single_shock(Scenario::PositiveFee);
    let (mu0, t0) = fastest(|| calibrate(TARGET_LIFE_EXPECTANCY, CalibrationMode::Baseline, &baseline_cfg).unwrap());
    let (mu_hat, t1) = fastest(|| calibrate(16.2162, CalibrationMode::Objective, &tree_cfg).unwrap());
    let pass = (mu0 - 0.044623).abs() <= 1e-6
        && (mu_hat - 0.061667).abs() <= 1e-5
        && t0 < Duration::from_millis(1)
        && t1 < Duration::from_millis(1);
    verdict(
        1,
        pass,
        format!("mu0 = {mu0:.7} ({t0:?}), mu_hat = {mu_hat:.7} ({t1:?})"),
    );
}

#[test]
fn criterion_02_life_expectancy() {
    let _g = serial();
    let cfg = single_shock(Scenario::PositiveFee);
    let le = life_expectancy(&enumerate_states(&cfg).unwrap(), 0);
    let t = Instant::now();
    let mc = mc_life_expectancy(&cfg, &sim(1_000_000)).unwrap();
    let elapsed = t.elapsed();
    let z = mc.z_score(le);
    let pass = (le - reference::LIFE_EXPECTANCY).abs() <= 5e-3 && z.abs() <= 3.0 && elapsed < Duration::from_secs(30);
    verdict(
        2,
        pass,
        format!(
            "recursion {le:.5}, Monte Carlo {:.5} +- {:.5} (z = {z:.2}, {elapsed:?})",
            mc.mean, mc.stderr
        ),
    );
}

#[test]
fn criterion_03_terminal_thresholds() {
    let _g = serial();
    let cfg = single_shock(Scenario::PositiveFee);
    let (lo, t0) = fastest(|| solve_terminal(&cfg, MU0).x_star);
    let (hi, t1) = fastest(|| solve_terminal(&cfg, 2.0 * MU0).x_star);
    let (lo, hi) = (lo.unwrap_or(f64::NAN), hi.unwrap_or(f64::NAN));
    let pass = rel(lo, reference::POS_X1_MU0) <= 5e-3
        && rel(hi, reference::POS_X1_2MU0) <= 5e-3
        && t0 < Duration::from_millis(1)
        && t1 < Duration::from_millis(1);
    verdict(
        3,
        pass,
        format!("x*(mu0) = {lo:.2} ({t0:?}), x*(2mu0) = {hi:.2} ({t1:?})"),
    );
}

#[test]
fn criterion_04_root_threshold() {
    let _g = serial();
    let cfg = single_shock(Scenario::PositiveFee);
    let t = Instant::now();
    let sol = solve_all(&cfg, &SolveOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let root = sol.root();
    let b = root.thresholds.first().copied().unwrap_or(f64::NAN);
    let payment = (b - cfg.market.k) * cfg.market.payout_rate();
    let pass = root.method == "majorant"
        && rel(b, reference::POS_ROOT) <= 1e-2
        && rel(payment, reference::POS_PAYMENT) <= 1e-2
        && elapsed < Duration::from_secs(5);
    verdict(
        4,
        pass,
        format!(
            "b* = {b:.2} (ref {}, rel {:.3}), payment {payment:.2} (ref {}, rel {:.3}), {} in {elapsed:?}",
            reference::POS_ROOT,
            rel(b, reference::POS_ROOT),
            reference::POS_PAYMENT,
            rel(payment, reference::POS_PAYMENT),
            root.method
        ),
    );
}

#[test]
fn criterion_05_negative_fee_scenario() {
    let _g = serial();
    let options = CaseStudyOptions {
        sim: sim(100_000),
        ..CaseStudyOptions::default()
    };
    let report = reproduce_scenario(Scenario::NegativeFee, &options).unwrap();
    let (cfg, sol) = solved(Scenario::NegativeFee);
    let root = sol.root();
    let b = root.thresholds.first().copied().unwrap_or(f64::NAN);
    let tree = enumerate_states(&cfg).unwrap();
    let post_shock: Vec<String> = (1..tree.len())
        .map(|id| {
            format!(
                "({}, {:.6}) {:?}",
                sol.stage(id).node.n,
                sol.stage(id).node.mu,
                sol.stage(id).regime
            )
        })
        .collect();
    let classified = tree.len() == 3;
    let disagreement = report
        .rows
        .iter()
        .any(|r| r.status == annuity_core::case_study::RowStatus::Flag);
    let arbitration_ok = match (&report.arbitration, disagreement) {
        (_, false) => true,
        (Some(a), true) => a.computed_probe.pass != a.reference_probe.pass,
        (None, true) => false,
    };
    let arbitration = report.arbitration.as_ref().map_or("none".to_string(), |a| a.summary());
    let pass = root.regime == Regime::Case4 && rel(b, reference::NEG_ROOT) <= 2e-2 && classified && arbitration_ok;
    verdict(
        5,
        pass,
        format!(
            "root {:?}, b** = {b:.2} (ref {}, rel {:.3}); post-shock {}; arbitration: {arbitration}",
            root.regime,
            reference::NEG_ROOT,
            rel(b, reference::NEG_ROOT),
            post_shock.join(", ")
        ),
    );
}

#[test]
fn criterion_06_solver_matches_monte_carlo() {
    let _g = serial();
    let sim = sim(100_000);
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for scenario in SCENARIOS {
        let (cfg, sol) = solved(scenario);
        let model = SimModel::new(&cfg).unwrap();
        let xs = spot_wealths(&sol.policy().rule(0), cfg.market.wealth_scale());
        for run in evaluate_policy_at(&model, &sim, &sol.policy(), &xs).unwrap() {
            let v = sol.value_at(0, run.x0);
            // Paths that stop at once have no spread; compare them exactly.
            let z = if run.stderr > 0.0 {
                (run.mean - v) / run.stderr
            } else if rel(run.mean, v) < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z.abs());
            lines.push(format!("{scenario:?} x0 = {:.0}: z = {z:.2}", run.x0));
        }
    }
    let elapsed = t.elapsed();
    let pass = worst <= 2.0 && elapsed < Duration::from_secs(60);
    verdict(
        6,
        pass,
        format!("max |z| = {worst:.2} in {elapsed:?} [{}]", lines.join("; ")),
    );
}

#[test]
fn criterion_07_optimality_probe() {
    let _g = serial();
    let sim = sim(100_000);
    let mut pass = true;
    let mut lines = Vec::new();
    for scenario in SCENARIOS {
        let (cfg, sol) = solved(scenario);
        let probe = optimality_probe(&cfg, &sim, &sol, 0.1).unwrap();
        let model = SimModel::new(&cfg).unwrap();
        let control = optimality_probe_policy(&model, &sim, &sol.policy().scaled(2.0), 0.1, None).unwrap();
        pass &= probe.pass && !control.pass;
        let beaten: Vec<&str> = probe
            .variants
            .iter()
            .filter(|v| v.beats_base)
            .map(|v| v.label.as_str())
            .collect();
        lines.push(format!(
            "{scenario:?}: solver policy {} (beaten by [{}]), doubled thresholds {}",
            if probe.pass { "unbeaten" } else { "beaten" },
            beaten.join(", "),
            if control.pass { "NOT beaten" } else { "beaten" }
        ));
    }
    verdict(7, pass, lines.join("; "));
}

#[test]
fn criterion_08_invariant_suite() {
    let _g = serial();
    let sim = sim(100_000);
    let mut pass = true;
    let mut lines = Vec::new();
    for scenario in SCENARIOS {
        let (cfg, sol) = solved(scenario);
        let report = run_suite(&cfg, &sol, &sim).unwrap();
        let ran = Check::ALL.iter().all(|c| report.records.iter().any(|r| r.check == *c));
        pass &= report.pass() && ran;
        let failed: Vec<&str> = report.failed_checks().iter().map(|c| c.name()).collect();
        lines.push(format!("{scenario:?}: failed [{}]", failed.join(", ")));
        if !report.pass() {
            println!("{}", report.table());
        }
    }
    verdict(8, pass, lines.join("; "));
}

#[test]
fn criterion_09_resolvent_exactness() {
    let _g = serial();
    let cfg = single_shock(Scenario::PositiveFee);
    let m = &cfg.market;
    let rate = m.rho + MU0;
    let second = 2.0 * m.net_drift() + m.sigma * m.sigma;
    let res = Resolvent::new(m, rate).unwrap();
    let scale = m.wealth_scale();
    let xs: Vec<f64> = (0..50).map(|i| scale * 1e-2 * 1e5f64.powf(i as f64 / 49.0)).collect();
    let affine = Affine {
        a: 0.3 * scale,
        b: m.alpha + m.nu * MU0,
    };
    let quadratic = FnWealth::new(|y: f64| 1.0 + 0.5 * y + y * y / scale).with_growth(2.0);
    let mut worst_affine = 0.0f64;
    let mut worst_quadratic = 0.0f64;
    for &x in &xs {
        let exact = res.affine(affine.a, affine.b, x);
        worst_affine = worst_affine.max(rel(res.quadrature(&affine, x).unwrap(), exact));
        let exact = 1.0 / rate + 0.5 * x / (rate - m.net_drift()) + x * x / scale / (rate - second);
        worst_quadratic = worst_quadratic.max(rel(res.quadrature(&quadratic, x).unwrap(), exact));
    }
    let pass = worst_affine <= 1e-6 && worst_quadratic <= 1e-5;
    verdict(
        9,
        pass,
        format!("max rel error affine {worst_affine:.2e}, quadratic {worst_quadratic:.2e}"),
    );
}

#[test]
fn criterion_10_zero_fee_agreement() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut regimes_agree = true;
    let mut all_majorant = true;
    let mut regimes = Vec::new();
    for scenario in SCENARIOS {
        let mut cfg = single_shock(scenario);
        cfg.market.k = 0.0;
        let closed = solve_all(&cfg, &SolveOptions::default()).unwrap();
        let forced = solve_all(
            &cfg,
            &SolveOptions {
                stage_solver: "majorant".into(),
                ..SolveOptions::default()
            },
        )
        .unwrap();
        for (a, b) in closed.stages.iter().zip(&forced.stages) {
            regimes_agree &= a.regime == b.regime;
            all_majorant &= b.method == "majorant";
            regimes.push(format!("{:?}", b.regime));
            for &x in &b.grid.points {
                worst = worst.max(rel(forced.value_at(b.node.id, x), closed.value_at(a.node.id, x)));
            }
        }
    }
    let pass = regimes_agree && all_majorant && worst <= 5e-3;
    verdict(
        10,
        pass,
        format!("max rel gap {worst:.2e}, regimes {regimes:?} agree: {regimes_agree}"),
    );
}

#[test]
fn criterion_11_sensitivity_sweeps() {
    let _g = serial();
    let cfg = single_shock(Scenario::PositiveFee);
    let options = SolveOptions::default();
    let t = Instant::now();
    let sweep = |p: SweepParameter| -> Vec<f64> {
        run_sweep(&cfg, &SweepSpec::with_defaults(p), &options)
            .iter()
            .map(|r| r.threshold.unwrap_or(f64::NAN))
            .collect()
    };
    let delta = sweep(SweepParameter::DeltaMuHat);
    let p = sweep(SweepParameter::P);
    let lambda = sweep(SweepParameter::Lambda1);
    let elapsed = t.elapsed();
    let decreasing = delta.windows(2).all(|w| w[1] < w[0]);
    let increasing = p.windows(2).all(|w| w[1] > w[0]);
    let lowest = lambda
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let u_shaped = lowest > 0
        && lowest < lambda.len() - 1
        && lambda[..=lowest].windows(2).all(|w| w[1] < w[0])
        && lambda[lowest..].windows(2).all(|w| w[1] > w[0]);
    let pass = decreasing && increasing && u_shaped && elapsed < Duration::from_secs(120);
    let fmt = |v: &[f64]| v.iter().map(|b| format!("{b:.0}")).collect::<Vec<_>>().join(", ");
    verdict(
        11,
        pass,
        format!(
            "delta [{}], p [{}], lambda1 [{}] in {elapsed:?}",
            fmt(&delta),
            fmt(&p),
            fmt(&lambda)
        ),
    );
}

#[test]
fn criterion_12_grid_refinement() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut same_shape = true;
    for scenario in SCENARIOS {
        let cfg = single_shock(scenario);
        let coarse = solve_all(&cfg, &SolveOptions::default()).unwrap();
        let fine_grid = GridSpec::with_points(2 * GridSpec::default().n_points);
        let fine = solve_all(
            &cfg,
            &SolveOptions {
                grid: fine_grid,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        for (a, b) in coarse.stages.iter().zip(&fine.stages) {
            same_shape &= a.regime == b.regime && a.thresholds.len() == b.thresholds.len();
            for (x, y) in a.thresholds.iter().zip(&b.thresholds) {
                worst = worst.max(rel(*y, *x));
            }
        }
    }
    let pass = same_shape && worst < 2e-3;
    verdict(
        12,
        pass,
        format!("largest threshold move {worst:.2e}, regimes unchanged: {same_shape}"),
    );
}
