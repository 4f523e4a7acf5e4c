//! Fundamental solutions and the resolvent of the wealth diffusion
//! `dX = (theta - alpha) X dt + sigma X dB`.
//!
//! The resolvent `R g(x) = E_x[int_0^inf e^{-rt} g(X_t) dt]` is evaluated
//! through its Green kernel. In log coordinates `t = ln(y/x)`
//!
//! ```text
//! R g(x) = 2 / (sigma^2 (g+ - g-)) * ( int_{-inf}^0 e^{-g- t} g(x e^t) dt
//!                                    + int_0^{inf}  e^{-g+ t} g(x e^t) dt )
//! ```
//!
//! with `g+ > 1 > 0 > g-` the roots of `sigma^2/2 g(g-1) + (theta-alpha) g - r = 0`.
//! For constant `g = c` this returns `c / r` and for `g(y) = y` it returns
//! `x / (r + alpha - theta)`, which is how the constant and exponents are pinned down.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MarketParams;

/// Width of the log-wealth panels.
const PANEL: f64 = 0.5;
/// Relative tolerance of the panel-halving refinement.
const QUAD_RTOL: f64 = 1e-9;
/// Integrand magnitude (relative to its running peak) below which a tail is dropped.
const TAIL_CUTOFF: f64 = 1e-14;
/// Largest log-distance explored before a tail is declared divergent.
const MAX_LOG_RANGE: f64 = 600.0;
const MAX_DEPTH: u32 = 40;
const GL_ORDER: usize = 10;

fn gauss_legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(GL_ORDER).expect("order >= 2"))
}

/// Roots of the characteristic equation for discount rate `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmRoots {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub rate: f64,
}

impl GbmRoots {
    /// Residual of the characteristic polynomial at `g`.
    pub fn residual(market: &MarketParams, rate: f64, g: f64) -> f64 {
        0.5 * market.sigma * market.sigma * g * (g - 1.0) + market.net_drift() * g - rate
    }

    /// Increasing fundamental solution `psi(x) = x^{g+}`.
    pub fn psi(&self, x: f64) -> f64 {
        x.powf(self.gamma_plus)
    }

    /// Decreasing fundamental solution `phi(x) = x^{g-}`.
    pub fn phi(&self, x: f64) -> f64 {
        x.powf(self.gamma_minus)
    }
}

/// Both roots by the quadratic formula. Requires `rate > max(0, theta - alpha)`.
pub fn characteristic_roots(market: &MarketParams, rate: f64) -> GbmRoots {
    let s2 = market.sigma * market.sigma;
    let a = 0.5 - market.net_drift() / s2;
    let disc = (a * a + 2.0 * rate / s2).sqrt();
    GbmRoots {
        gamma_plus: a + disc,
        gamma_minus: a - disc,
        rate,
    }
}

/// A function of wealth that can be fed to the resolvent.
pub trait WealthFunction {
    fn value(&self, y: f64) -> f64;

    /// Power `q` such that `|g(y)| = O(y^q)` as `y -> inf`.
    fn growth(&self) -> f64 {
        1.0
    }

    /// Points where `g` is not smooth; quadrature panels are split there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Wraps a closure as a [`WealthFunction`].
pub struct FnWealth<F: Fn(f64) -> f64> {
    pub f: F,
    pub growth: f64,
    pub breakpoints: Vec<f64>,
}

impl<F: Fn(f64) -> f64> FnWealth<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            growth: 1.0,
            breakpoints: Vec::new(),
        }
    }

    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }
}

impl<F: Fn(f64) -> f64> WealthFunction for FnWealth<F> {
    fn value(&self, y: f64) -> f64 {
        (self.f)(y)
    }
    fn growth(&self) -> f64 {
        self.growth
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// `g(y) = a + b y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
}

impl WealthFunction for Affine {
    fn value(&self, y: f64) -> f64 {
        self.a + self.b * y
    }
}

/// Payoff handed to [`resolvent`].
pub enum Payoff<'a> {
    Affine(Affine),
    General(&'a dyn WealthFunction),
}

/// Evaluation mode of [`resolvent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolventMode {
    Affine,
    Quadrature,
}

/// `E_x[int_0^inf e^{-rt} g(X_t) dt]` in the requested mode.
pub fn resolvent(market: &MarketParams, rate: f64, g: &Payoff<'_>, x: f64, mode: ResolventMode) -> Result<f64> {
    let res = Resolvent::new(market, rate)?;
    match (mode, g) {
        (ResolventMode::Affine, Payoff::Affine(aff)) => Ok(res.affine(aff.a, aff.b, x)),
        (ResolventMode::Affine, Payoff::General(_)) => Err(Error::InvalidParam(
            "affine resolvent mode needs an affine payoff".into(),
        )),
        (ResolventMode::Quadrature, Payoff::Affine(aff)) => res.quadrature(aff, x),
        (ResolventMode::Quadrature, Payoff::General(f)) => res.quadrature(*f, x),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    /// `y < x`, weight `e^{g- s}` with `s = ln(x/y)`.
    Below,
    /// `y > x`, weight `e^{-g+ s}` with `s = ln(y/x)`.
    Above,
}

/// Resolvent operator for a fixed discount rate.
#[derive(Debug, Clone, Copy)]
pub struct Resolvent {
    pub roots: GbmRoots,
    net_drift: f64,
    green_const: f64,
}

impl Resolvent {
    pub fn new(market: &MarketParams, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate > market.net_drift()) {
            return Err(Error::InvalidParam(format!(
                "resolvent rate {rate} must exceed max(0, theta - alpha) = {}",
                market.net_drift().max(0.0)
            )));
        }
        let roots = characteristic_roots(market, rate);
        let green_const = 2.0 / (market.sigma * market.sigma * (roots.gamma_plus - roots.gamma_minus));
        Ok(Self {
            roots,
            net_drift: market.net_drift(),
            green_const,
        })
    }

    pub fn rate(&self) -> f64 {
        self.roots.rate
    }

    /// Exact value for `g(y) = a + b y`.
    pub fn affine(&self, a: f64, b: f64, x: f64) -> f64 {
        a / self.roots.rate + b * x / (self.roots.rate - self.net_drift)
    }

    /// Green-kernel quadrature at a single wealth level.
    pub fn quadrature(&self, g: &dyn WealthFunction, x: f64) -> Result<f64> {
        self.check_growth(g)?;
        let bps = g.breakpoints();
        let below = self.tail(g, x, Side::Below, &bps)?;
        let above = self.tail(g, x, Side::Above, &bps)?;
        Ok(self.green_const * (below + above))
    }

    /// Quadrature on an increasing grid, sweeping the two half-line
    /// integrals across grid cells so each cell is integrated once per side.
    pub fn on_grid(&self, g: &dyn WealthFunction, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_growth(g)?;
        let n = xs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let bps = g.breakpoints();
        let gp = self.roots.gamma_plus;
        let gm = self.roots.gamma_minus;
        let mut below = vec![0.0; n];
        below[0] = self.tail(g, xs[0], Side::Below, &bps)?;
        for i in 1..n {
            let d = (xs[i] / xs[i - 1]).ln();
            let cell = self.segment(g, xs[i], Side::Below, 0.0, d, &bps)?;
            below[i] = (gm * d).exp() * below[i - 1] + cell;
        }
        let mut above = vec![0.0; n];
        above[n - 1] = self.tail(g, xs[n - 1], Side::Above, &bps)?;
        for i in (0..n - 1).rev() {
            let d = (xs[i + 1] / xs[i]).ln();
            let cell = self.segment(g, xs[i], Side::Above, 0.0, d, &bps)?;
            above[i] = (-gp * d).exp() * above[i + 1] + cell;
        }
        Ok(below
            .iter()
            .zip(&above)
            .map(|(b, a)| self.green_const * (b + a))
            .collect())
    }

    fn check_growth(&self, g: &dyn WealthFunction) -> Result<()> {
        if g.growth() >= self.roots.gamma_plus {
            return Err(Error::NonIntegrable(format!(
                "payoff grows like y^{} but the kernel decays like y^-{}",
                g.growth(),
                self.roots.gamma_plus
            )));
        }
        Ok(())
    }

    fn weight(&self, side: Side, s: f64) -> f64 {
        match side {
            Side::Below => (self.roots.gamma_minus * s).exp(),
            Side::Above => (-self.roots.gamma_plus * s).exp(),
        }
    }

    fn point(side: Side, x: f64, s: f64) -> f64 {
        match side {
            Side::Below => x * (-s).exp(),
            Side::Above => x * s.exp(),
        }
    }

    /// Breakpoints mapped to log-distance from `x` on one side, sorted.
    fn side_breaks(x: f64, side: Side, bps: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = bps
            .iter()
            .filter(|&&b| b > 0.0 && b.is_finite())
            .filter_map(|&b| {
                let s = (b / x).ln();
                match side {
                    Side::Above if s > 0.0 => Some(s),
                    Side::Below if s < 0.0 => Some(-s),
                    _ => None,
                }
            })
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Integral over log-distances `[s0, s1]` on one side, split at breakpoints and panels.
    fn segment(&self, g: &dyn WealthFunction, x: f64, side: Side, s0: f64, s1: f64, bps: &[f64]) -> Result<f64> {
        let mut cuts = vec![s0];
        for b in Self::side_breaks(x, side, bps) {
            if b > s0 && b < s1 {
                cuts.push(b);
            }
        }
        cuts.push(s1);
        let mut total = 0.0;
        let mut peak = 0.0f64;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let pieces = ((b - a) / PANEL).ceil().max(1.0) as usize;
            let h = (b - a) / pieces as f64;
            for k in 0..pieces {
                let lo = a + k as f64 * h;
                let hi = if k + 1 == pieces { b } else { lo + h };
                total += self.adaptive(g, x, side, lo, hi, &mut peak)?;
            }
        }
        Ok(total)
    }

    /// Half-line integral on one side, marching panels outward until the
    /// integrand has decayed below the cutoff relative to its peak.
    fn tail(&self, g: &dyn WealthFunction, x: f64, side: Side, bps: &[f64]) -> Result<f64> {
        let breaks = Self::side_breaks(x, side, bps);
        let last_break = breaks.last().copied().unwrap_or(0.0);
        let mut next_break = breaks.into_iter().peekable();
        let mut peak = 0.0f64;
        let mut total = 0.0;
        let mut s = 0.0;
        let mut quiet_panels = 0;
        loop {
            let mut hi = s + PANEL;
            while let Some(&b) = next_break.peek() {
                if b <= s {
                    next_break.next();
                } else {
                    if b < hi {
                        hi = b;
                    }
                    break;
                }
            }
            let mut panel_peak = 0.0f64;
            total += self.adaptive(g, x, side, s, hi, &mut panel_peak)?;
            peak = peak.max(panel_peak);
            s = hi;
            if s > last_break && panel_peak <= TAIL_CUTOFF * peak {
                quiet_panels += 1;
                if quiet_panels >= 2 {
                    return Ok(total);
                }
            } else {
                quiet_panels = 0;
            }
            if s >= MAX_LOG_RANGE || !total.is_finite() {
                return Err(Error::NonIntegrable(format!(
                    "integrand still {panel_peak:e} (peak {peak:e}) at log-distance {s} from x = {x}"
                )));
            }
        }
    }

    fn gl(&self, g: &dyn WealthFunction, x: f64, side: Side, a: f64, b: f64, peak: &mut f64) -> f64 {
        gauss_legendre().integrate(a, b, |s| {
            let v = self.weight(side, s) * g.value(Self::point(side, x, s));
            *peak = peak.max(v.abs());
            v
        })
    }

    fn adaptive(&self, g: &dyn WealthFunction, x: f64, side: Side, a: f64, b: f64, peak: &mut f64) -> Result<f64> {
        let whole = self.gl(g, x, side, a, b, peak);
        if !whole.is_finite() {
            return Err(Error::NonIntegrable(format!(
                "integrand overflows at log-distance {b} from x = {x}"
            )));
        }
        self.refine(g, x, side, a, b, whole, peak, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        g: &dyn WealthFunction,
        x: f64,
        side: Side,
        a: f64,
        b: f64,
        whole: f64,
        peak: &mut f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let left = self.gl(g, x, side, a, m, peak);
        let right = self.gl(g, x, side, m, b, peak);
        let halves = left + right;
        let diff = (halves - whole).abs();
        if diff <= QUAD_RTOL * halves.abs() || diff <= 1e-16 * *peak * (b - a) {
            return Ok(halves);
        }
        if depth >= MAX_DEPTH {
            return Err(Error::QuadratureFailure(format!(
                "panel [{a}, {b}] around x = {x} did not converge (diff {diff:e})"
            )));
        }
        Ok(self.refine(g, x, side, a, m, left, peak, depth + 1)?
            + self.refine(g, x, side, m, b, right, peak, depth + 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{market, Scenario, MU0};

    fn table_market() -> MarketParams {
        market(Scenario::PositiveFee)
    }

    #[test]
    fn symmetric_roots() {
        let mut m = table_market();
        m.sigma = 2f64.sqrt();
        m.theta = 1.0 + m.alpha;
        let r = characteristic_roots(&m, 4.0);
        assert!((r.gamma_plus - 2.0).abs() < 1e-12 && (r.gamma_minus + 2.0).abs() < 1e-12);
    }

    #[test]
    fn case_study_roots_solve_the_polynomial() {
        let m = table_market();
        let rate = m.rho + MU0;
        let r = characteristic_roots(&m, rate);
        assert!((r.gamma_plus - 2.14).abs() < 5e-3);
        for g in [r.gamma_plus, r.gamma_minus] {
            assert!(GbmRoots::residual(&m, rate, g).abs() <= 1e-12 * rate.max(1.0));
        }
        assert!(r.gamma_plus > 1.0 && r.gamma_minus < 0.0);
    }

    #[test]
    fn plus_root_tends_to_one_at_critical_rate() {
        let m = table_market();
        let r = characteristic_roots(&m, m.net_drift() + 1e-12);
        assert!((r.gamma_plus - 1.0).abs() < 1e-9);
    }

    #[test]
    fn affine_payoff_reproduces_beta() {
        let m = table_market();
        let rate = m.rho + MU0;
        let slope = m.alpha + m.nu * MU0;
        let beta = slope / (rate + m.alpha - m.theta);
        let v = resolvent(
            &m,
            rate,
            &Payoff::Affine(Affine { a: 0.0, b: slope }),
            1.0,
            ResolventMode::Affine,
        )
        .unwrap();
        assert!((v - beta).abs() < 1e-15);
        let q = resolvent(
            &m,
            rate,
            &Payoff::Affine(Affine { a: 0.0, b: slope }),
            1.0,
            ResolventMode::Quadrature,
        )
        .unwrap();
        assert!((q - beta).abs() < 1e-9 * beta);
    }

    #[test]
    fn constant_payoff_is_discounted() {
        let m = table_market();
        let res = Resolvent::new(&m, 0.2).unwrap();
        for x in [1e-3, 1.0, 5e4] {
            let v = res.quadrature(&Affine { a: 3.0, b: 0.0 }, x).unwrap();
            assert!((v - 15.0).abs() < 1e-9 * 15.0);
        }
    }

    #[test]
    fn quadratic_payoff_matches_moment_formula() {
        let m = table_market();
        let rate = m.rho + MU0;
        let second = 2.0 * m.net_drift() + m.sigma * m.sigma;
        assert!(rate > second);
        let res = Resolvent::new(&m, rate).unwrap();
        let g = FnWealth::new(|y: f64| y * y).with_growth(2.0);
        for x in [0.3, 7.0, 1500.0] {
            let v = res.quadrature(&g, x).unwrap();
            let exact = x * x / (rate - second);
            assert!((v - exact).abs() < 1e-7 * exact, "{v} vs {exact}");
        }
    }

    #[test]
    fn superlinear_growth_is_rejected() {
        let m = table_market();
        let res = Resolvent::new(&m, m.rho + MU0).unwrap();
        let g = FnWealth::new(|y: f64| y.powi(3)).with_growth(3.0);
        assert!(matches!(res.quadrature(&g, 1.0), Err(Error::NonIntegrable(_))));
        // Undeclared growth is caught by the tail march.
        let g = FnWealth::new(|y: f64| y.powi(3));
        assert!(matches!(res.quadrature(&g, 1.0), Err(Error::NonIntegrable(_))));
    }

    #[test]
    fn grid_sweep_matches_pointwise() {
        let m = table_market();
        let res = Resolvent::new(&m, 0.185023).unwrap();
        let g = FnWealth {
            f: |y: f64| (y - 1000.0).max(0.0) + 0.5 * y,
            growth: 1.0,
            breakpoints: vec![1000.0],
        };
        let xs: Vec<f64> = (0..200).map(|i| 10.0 * 1.04f64.powi(i)).collect();
        let grid = res.on_grid(&g, &xs).unwrap();
        for (x, v) in xs.iter().zip(&grid) {
            let p = res.quadrature(&g, *x).unwrap();
            assert!((p - v).abs() <= 1e-9 * p.abs(), "x={x}: {p} vs {v}");
        }
    }

    #[test]
    fn resolvent_inverts_the_generator() {
        let m = table_market();
        let rate = 0.13;
        let res = Resolvent::new(&m, rate).unwrap();
        let g = FnWealth::new(|y: f64| (1.0 + y).ln() + 0.1 * y);
        let s2 = m.sigma * m.sigma;
        for x in [0.5, 3.0, 40.0, 900.0] {
            let h = 1e-3 * x;
            let u = |z: f64| res.quadrature(&g, z).unwrap();
            let (um, u0, up) = (u(x - h), u(x), u(x + h));
            let ux = (up - um) / (2.0 * h);
            let uxx = (up - 2.0 * u0 + um) / (h * h);
            let lhs = 0.5 * s2 * x * x * uxx + m.net_drift() * x * ux - rate * u0;
            let target = -g.value(x);
            assert!((lhs - target).abs() <= 1e-3 * target.abs(), "x={x}: {lhs} vs {target}");
        }
    }
}
