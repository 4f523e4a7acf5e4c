use crate::diffusion::{Resolvent, WealthFunction};
use crate::error::{Error, Result};
use crate::majorant::{concave_majorant, refine_tangency, Anchor};
use crate::model::ModelConfig;
use crate::mortality::StateNode;
use crate::terminal::{solve_terminal, value_terminal, TerminalRegime, TerminalSolution};

use super::{GridSpec, PowerPiece, Regime, Representation, Solution, StageValue, WealthGrid};

/// Grid widenings tried before giving up on a truncated stopping set.
pub const MAX_WIDENINGS: usize = 3;
/// `|P| <= P_ZERO_TOL` counts as a degenerate asymptote.
pub const P_ZERO_TOL: f64 = 1e-12;
/// Where the far-field sign of `M` is probed when `P` is degenerate (times `x_hi`).
const FAR_FIELD_FACTOR: f64 = 1e3;
const BRACKET_EXPANSIONS: usize = 20;

/// Everything a stage solver needs about one node.
pub struct StageContext<'a> {
    pub cfg: &'a ModelConfig,
    pub node: &'a StateNode,
    /// Solved children with their kernel probabilities.
    pub children: Vec<(&'a StageValue, f64)>,
    pub f_hat: f64,
    pub beta: f64,
    pub rate: f64,
    pub asymptotic_slope: f64,
    pub asymptote_coefficient: f64,
    pub grid: &'a GridSpec,
}

impl<'a> StageContext<'a> {
    /// Rebuild the context of a solved node.
    pub fn from_solution(sol: &'a Solution, id: usize) -> Self {
        let sv = &sol.stages[id];
        let node = &sol.tree.nodes[id];
        Self {
            cfg: &sol.config,
            node,
            children: node.children.iter().map(|&(c, p)| (&sol.stages[c], p)).collect(),
            f_hat: sv.f_hat,
            beta: sv.beta,
            rate: sv.rate,
            asymptotic_slope: sv.asymptotic_slope,
            asymptote_coefficient: sv.asymptote_coefficient,
            grid: &sol.options.grid,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.node.lambda_next
    }

    /// Kernel-weighted child value `V_hat(x)`.
    pub fn child_value(&self, x: f64) -> f64 {
        self.children.iter().map(|(c, p)| p * c.value(x)).sum()
    }

    pub fn child_value_at_zero(&self) -> f64 {
        self.children.iter().map(|(c, p)| p * c.value_at_zero).sum()
    }

    /// Intercept and slope of the affine part of `M`.
    fn affine_part(&self) -> (f64, f64) {
        let m = &self.cfg.market;
        (
            self.rate * self.f_hat * m.k,
            (self.f_hat - self.beta) * (m.net_drift() - self.rate),
        )
    }

    /// Running reward `M(x)` of the excess problem.
    pub fn running_reward(&self, x: f64) -> f64 {
        let (a, b) = self.affine_part();
        let jump = if self.lambda() > 0.0 {
            self.lambda() * self.child_value(x)
        } else {
            0.0
        };
        a + b * x + jump
    }

    /// `w = R M` at one wealth level.
    pub fn w_at(&self, res: &Resolvent, x: f64) -> Result<f64> {
        let (a, b) = self.affine_part();
        let mut w = res.affine(a, b, x);
        if self.lambda() > 0.0 && !self.children.is_empty() {
            w += self.lambda()
                * res.quadrature(
                    &ChildMix {
                        children: &self.children,
                    },
                    x,
                )?;
        }
        Ok(w)
    }

    /// `w = R M` on an increasing grid.
    pub fn w_on_grid(&self, res: &Resolvent, xs: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = self.affine_part();
        let mut w: Vec<f64> = xs.iter().map(|&x| res.affine(a, b, x)).collect();
        if self.lambda() > 0.0 && !self.children.is_empty() {
            let jump = res.on_grid(
                &ChildMix {
                    children: &self.children,
                },
                xs,
            )?;
            for (wi, ji) in w.iter_mut().zip(jump) {
                *wi += self.lambda() * ji;
            }
        }
        Ok(w)
    }
}

/// `V_hat` as a resolvent payoff.
struct ChildMix<'a, 'b> {
    children: &'b [(&'a StageValue, f64)],
}

impl WealthFunction for ChildMix<'_, '_> {
    fn value(&self, y: f64) -> f64 {
        self.children.iter().map(|(c, p)| p * c.value(y)).sum()
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.children.iter().flat_map(|(c, _)| c.kinks()).collect()
    }
}

/// Change of variables `y = (x/s)^{g+ - g-}` and obstacle `h = -w / phi`,
/// with `phi(x) = (x/s)^{g-}` normalized by the wealth scale `s`.
#[derive(Debug, Clone, Copy)]
pub struct DkTransform {
    pub scale: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl DkTransform {
    pub fn new(res: &Resolvent, scale: f64) -> Self {
        Self {
            scale,
            gamma_plus: res.roots.gamma_plus,
            gamma_minus: res.roots.gamma_minus,
        }
    }

    pub fn y(&self, x: f64) -> f64 {
        (x / self.scale).powf(self.gamma_plus - self.gamma_minus)
    }

    pub fn x(&self, y: f64) -> f64 {
        self.scale * y.powf(1.0 / (self.gamma_plus - self.gamma_minus))
    }

    pub fn phi(&self, x: f64) -> f64 {
        (x / self.scale).powf(self.gamma_minus)
    }

    pub fn psi(&self, x: f64) -> f64 {
        (x / self.scale).powf(self.gamma_plus)
    }

    /// Transformed obstacle at wealth `x` given `w(x)`.
    pub fn h(&self, x: f64, w: f64) -> f64 {
        -w / self.phi(x)
    }
}

/// Regime from the sign pattern of `M` and `w` on the grid and the slope `P`
/// of `M` at infinity. The flag reports a degenerate `P`.
pub fn classify_regime(ctx: &StageContext<'_>, xs: &[f64], m_vals: &[f64], w: &[f64]) -> Result<(Regime, bool)> {
    let k = ctx.cfg.market.k;
    let p = ctx.asymptote_coefficient;
    if k == 0.0 {
        let regime = if p > P_ZERO_TOL {
            Regime::K0Continue
        } else {
            Regime::K0Stop
        };
        return Ok((regime, false));
    }
    let (sign, ambiguous) = if p.abs() > P_ZERO_TOL {
        (p.signum(), false)
    } else {
        let far = ctx.running_reward(FAR_FIELD_FACTOR * xs[xs.len() - 1]);
        if far == 0.0 || !far.is_finite() {
            return Err(Error::Ambiguous { node: ctx.node.id });
        }
        (far.signum(), true)
    };
    let regime = if k > 0.0 {
        if sign < 0.0 {
            Regime::Case2
        } else if w.iter().all(|&v| v > 0.0) {
            Regime::Case1
        } else {
            Regime::Case3
        }
    } else if sign > 0.0 || m_vals.iter().any(|&v| v > 0.0) {
        Regime::Case4
    } else {
        Regime::Case5
    };
    Ok((regime, ambiguous))
}

/// Whether the observed contact runs contradict the regime in a way a wider grid can fix.
fn needs_widening(regime: Regime, runs: &[(usize, usize)], n: usize) -> bool {
    let one = runs.len() == 1;
    match regime {
        Regime::Case2 => !(one && runs[0].0 > 0 && runs[0].1 == n - 1),
        Regime::Case3 => !(one && runs[0].0 > 0 && runs[0].1 < n - 1),
        Regime::Case4 => !(one && runs[0].0 == 0 && runs[0].1 < n - 1),
        _ => false,
    }
}

fn continuation_everywhere(scale: f64, exponent: f64) -> PowerPiece {
    PowerPiece {
        lo: 0.0,
        hi: f64::INFINITY,
        exponent,
        coef: 0.0,
        scale,
    }
}

/// Assemble a table-backed stage value from excess values on the grid.
#[allow(clippy::too_many_arguments)]
fn tabulate(
    ctx: &StageContext<'_>,
    regime: Regime,
    thresholds: Vec<f64>,
    grid: WealthGrid,
    excess: Vec<f64>,
    pieces: Vec<PowerPiece>,
    ambiguous: bool,
    widenings: usize,
    method: &str,
) -> StageValue {
    let k = ctx.cfg.market.k;
    let rule = regime.rule(&thresholds);
    let values = grid
        .points
        .iter()
        .zip(&excess)
        .map(|(&x, &e)| e + ctx.f_hat * (x - k))
        .collect();
    let running_reward = grid.points.iter().map(|&x| ctx.running_reward(x)).collect();
    let value_at_zero = if regime.stops_at_zero() {
        -ctx.f_hat * k
    } else {
        ctx.lambda() * ctx.child_value_at_zero() / ctx.rate + 0.0
    };
    StageValue {
        node: ctx.node.clone(),
        regime,
        rule,
        thresholds,
        grid,
        values,
        excess,
        running_reward,
        asymptotic_slope: ctx.asymptotic_slope,
        value_at_zero,
        closed_form: ctx.node.is_terminal().then(|| solve_terminal(ctx.cfg, ctx.node.mu)),
        representation: Representation::Table,
        pieces,
        f_hat: ctx.f_hat,
        beta: ctx.beta,
        rate: ctx.rate,
        k,
        asymptote_coefficient: ctx.asymptote_coefficient,
        ambiguous,
        widenings,
        method: method.to_string(),
        interp: None,
    }
}

fn terminal_regime(cf: &TerminalSolution) -> Regime {
    match cf.regime {
        TerminalRegime::NeverStop => Regime::Case1,
        TerminalRegime::StopAbove => Regime::Case2,
        TerminalRegime::StopBelow => Regime::Case4,
        TerminalRegime::StopEverywhere => Regime::Case5,
        TerminalRegime::K0NeverStop => Regime::K0Continue,
        TerminalRegime::K0StopEverywhere => Regime::K0Stop,
    }
}

/// Exact solution where one exists: last-stage nodes and zero fee.
pub fn solve_closed_form(ctx: &StageContext<'_>) -> Result<Option<StageValue>> {
    let market = &ctx.cfg.market;
    let scale = market.wealth_scale();
    let grid = WealthGrid::from_spec(ctx.grid, scale)?;
    if ctx.node.is_terminal() {
        let cf = solve_terminal(ctx.cfg, ctx.node.mu);
        let regime = terminal_regime(&cf);
        let thresholds: Vec<f64> = cf.threshold().into_iter().collect();
        let pieces = match (cf.regime, cf.ln_zeta) {
            (TerminalRegime::StopAbove, Some(lz)) => vec![PowerPiece {
                lo: 0.0,
                hi: thresholds[0],
                exponent: cf.gamma_plus,
                coef: (lz + cf.gamma_plus * scale.ln()).exp(),
                scale,
            }],
            (TerminalRegime::StopBelow, Some(lz)) => vec![PowerPiece {
                lo: thresholds[0],
                hi: f64::INFINITY,
                exponent: cf.gamma_minus,
                coef: (lz + cf.gamma_minus * scale.ln()).exp(),
                scale,
            }],
            (TerminalRegime::NeverStop | TerminalRegime::K0NeverStop, _) => {
                vec![continuation_everywhere(scale, cf.gamma_plus)]
            }
            _ => Vec::new(),
        };
        let excess = grid
            .points
            .iter()
            .map(|&x| value_terminal(&cf, x) - cf.obstacle(x))
            .collect();
        let mut sv = tabulate(ctx, regime, thresholds, grid, excess, pieces, false, 0, "closed-form");
        sv.value_at_zero = value_terminal(&cf, 0.0);
        sv.representation = Representation::Terminal;
        return Ok(Some(sv));
    }
    if market.k == 0.0 {
        let l = ctx.asymptote_coefficient;
        let (regime, slope) = if l > P_ZERO_TOL {
            (Regime::K0Continue, ctx.f_hat + l / (ctx.rate - market.net_drift()))
        } else {
            (Regime::K0Stop, ctx.f_hat)
        };
        let excess = grid.points.iter().map(|&x| (slope - ctx.f_hat) * x).collect();
        let pieces = if regime == Regime::K0Continue {
            vec![continuation_everywhere(scale, 1.0)]
        } else {
            Vec::new()
        };
        let mut sv = tabulate(ctx, regime, Vec::new(), grid, excess, pieces, false, 0, "closed-form");
        sv.value_at_zero = 0.0;
        sv.representation = Representation::Linear(slope);
        return Ok(Some(sv));
    }
    Ok(None)
}

/// Concave-majorant solution on a grid, widened while the contact set is truncated.
pub fn solve_majorant(ctx: &StageContext<'_>) -> Result<StageValue> {
    let market = &ctx.cfg.market;
    let res = Resolvent::new(market, ctx.rate)?;
    let dk = DkTransform::new(&res, market.wealth_scale());
    let mut spec = ctx.grid.clone();
    for widenings in 0..=MAX_WIDENINGS {
        let grid = WealthGrid::from_spec(&spec, dk.scale)?;
        let xs = &grid.points;
        let n = xs.len();
        let m_vals: Vec<f64> = xs.iter().map(|&x| ctx.running_reward(x)).collect();
        let w = ctx.w_on_grid(&res, xs)?;
        let (regime, ambiguous) = classify_regime(ctx, xs, &m_vals, &w)?;
        let y: Vec<f64> = xs.iter().map(|&x| dk.y(x)).collect();
        let h: Vec<f64> = xs.iter().zip(&w).map(|(&x, &wi)| dk.h(x, wi)).collect();
        let maj = concave_majorant(&y, &h, 0.0)?;
        let runs = maj.contact_runs();
        if needs_widening(regime, &runs, n) {
            spec = spec.widened(dk.scale);
            continue;
        }

        let h_at = |yy: f64| {
            let x = dk.x(yy);
            ctx.w_at(&res, x).map(|wv| dk.h(x, wv)).unwrap_or(f64::NAN)
        };
        let bracket = |i: usize| (y[i.saturating_sub(1)], y[(i + 1).min(n - 1)]);
        let mut thresholds = Vec::new();
        let mut pieces = Vec::new();
        if matches!(regime, Regime::Case2 | Regime::Case3) {
            let (lo, hi) = bracket(runs[0].0);
            let y1 = refine_tangency(&h_at, Anchor::Point(0.0, 0.0), lo, hi, BRACKET_EXPANSIONS)?;
            let b1 = dk.x(y1);
            thresholds.push(b1);
            pieces.push(PowerPiece {
                lo: 0.0,
                hi: b1,
                exponent: dk.gamma_plus,
                coef: h_at(y1) / y1,
                scale: dk.scale,
            });
        }
        if matches!(regime, Regime::Case3 | Regime::Case4) {
            let (lo, hi) = bracket(runs[0].1);
            let y2 = refine_tangency(&h_at, Anchor::Slope(0.0), lo, hi, BRACKET_EXPANSIONS)?;
            let b2 = dk.x(y2);
            thresholds.push(b2);
            pieces.push(PowerPiece {
                lo: b2,
                hi: f64::INFINITY,
                exponent: dk.gamma_minus,
                coef: h_at(y2),
                scale: dk.scale,
            });
        }
        if matches!(regime, Regime::Case1 | Regime::K0Continue) {
            pieces.push(continuation_everywhere(dk.scale, dk.gamma_plus));
        }
        if thresholds
            .iter()
            .chain(pieces.iter().map(|p| &p.coef))
            .any(|v| !v.is_finite())
        {
            return Err(Error::QuadratureFailure(format!(
                "non-finite tangency data at node {}",
                ctx.node.id
            )));
        }
        if regime == Regime::Case3 && thresholds[0] > thresholds[1] {
            return Err(Error::NoRoot {
                lo: thresholds[0],
                hi: thresholds[1],
                what: "inner stopping interval is empty".into(),
            });
        }

        let rule = regime.rule(&thresholds);
        let excess = xs
            .iter()
            .zip(&w)
            .map(|(&x, &wi)| {
                if rule.stops(x) {
                    0.0
                } else {
                    let piece = pieces.iter().find(|p| p.contains(x)).copied();
                    wi + piece.map_or(0.0, |p| p.eval(x))
                }
            })
            .collect();
        return Ok(tabulate(
            ctx, regime, thresholds, grid, excess, pieces, ambiguous, widenings, "majorant",
        ));
    }
    Err(Error::GridExhausted {
        node: ctx.node.id,
        widenings: MAX_WIDENINGS,
    })
}

/// Value of the continuation branch `piece` of a solved node, evaluated
/// pointwise (also slightly past its threshold, for one-sided stencils).
pub fn continuation_value(sol: &Solution, id: usize, piece: usize, x: f64) -> Result<f64> {
    let sv = &sol.stages[id];
    let ctx = StageContext::from_solution(sol, id);
    let res = Resolvent::new(&sol.config.market, sv.rate)?;
    let w = ctx.w_at(&res, x)?;
    Ok(w + sv.pieces[piece].eval(x) + sv.obstacle(x))
}
