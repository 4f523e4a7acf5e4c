//! Smallest nonnegative concave majorant of sampled obstacle values, and
//! tangency refinement on a pointwise obstacle.
//!
//! The majorant is the upper concave envelope of `(0, 0)`, the points
//! `(y_i, max(h_i, 0))` and a ray of prescribed slope at infinity. It is built
//! with one monotone-chain pass over the (already sorted) abscissae.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance deciding that the majorant touches the obstacle.
pub const CONTACT_RTOL: f64 = 1e-10;
/// Relative bisection tolerance for tangency points.
pub const TANGENCY_RTOL: f64 = 1e-10;
/// Relative step of the five-point derivative stencil.
pub const DERIVATIVE_REL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorantResult {
    pub y_grid: Vec<f64>,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    /// `true` where the majorant equals the obstacle.
    pub contact: Vec<bool>,
    /// Hull vertices as `(y, value)`, starting with the origin.
    pub vertices: Vec<(f64, f64)>,
    pub slope_at_infinity: f64,
    /// Refined contact boundaries (filled in by the caller).
    pub tangency_points: Vec<f64>,
}

impl MajorantResult {
    /// Evaluate the piecewise-linear majorant at any `y >= 0`.
    pub fn eval(&self, y: f64) -> f64 {
        eval_hull(&self.vertices, self.slope_at_infinity, y)
    }

    /// Maximal runs `(first, last)` of contact indices.
    pub fn contact_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &c) in self.contact.iter().enumerate() {
            match (c, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.contact.len() - 1));
        }
        runs
    }
}

fn slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1) / (b.0 - a.0)
}

fn eval_hull(vertices: &[(f64, f64)], s_inf: f64, y: f64) -> f64 {
    let last = *vertices.last().unwrap();
    if y >= last.0 {
        return last.1 + s_inf * (y - last.0);
    }
    let k = vertices.partition_point(|v| v.0 <= y);
    let (a, b) = (vertices[k - 1], vertices[k]);
    a.1 + slope(a, b) * (y - a.0)
}

/// Concave majorant of `max(h, 0)` on increasing positive `y`, anchored at
/// the origin, with slope `slope_at_infinity` beyond the last point.
pub fn concave_majorant(y: &[f64], h: &[f64], slope_at_infinity: f64) -> Result<MajorantResult> {
    if slope_at_infinity.is_nan() || slope_at_infinity == f64::INFINITY {
        return Err(Error::UnboundedValue);
    }
    assert_eq!(y.len(), h.len());
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(y.len() + 1);
    hull.push((0.0, 0.0));
    for (&yi, &hi) in y.iter().zip(h) {
        let p = (yi, hi.max(0.0));
        while hull.len() >= 2 && slope(hull[hull.len() - 2], hull[hull.len() - 1]) <= slope(hull[hull.len() - 1], p) {
            hull.pop();
        }
        hull.push(p);
    }
    while hull.len() >= 2 && slope(hull[hull.len() - 2], hull[hull.len() - 1]) < slope_at_infinity {
        hull.pop();
    }
    let u: Vec<f64> = y.iter().map(|&yi| eval_hull(&hull, slope_at_infinity, yi)).collect();
    let contact = u
        .iter()
        .zip(h)
        .map(|(&ui, &hi)| hi >= 0.0 && ui - hi <= CONTACT_RTOL * ui.abs().max(hi.abs()))
        .collect();
    Ok(MajorantResult {
        y_grid: y.to_vec(),
        h: h.to_vec(),
        u,
        contact,
        vertices: hull,
        slope_at_infinity,
        tangency_points: Vec::new(),
    })
}

/// Five-point central difference with step `1e-4 y`.
pub fn derivative(f: &dyn Fn(f64) -> f64, y: f64) -> f64 {
    let h = DERIVATIVE_REL_STEP * y;
    (-f(y + 2.0 * h) + 8.0 * f(y + h) - 8.0 * f(y - h) + f(y - 2.0 * h)) / (12.0 * h)
}

/// What a linear piece of the majorant is attached to on its far side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    /// A fixed point `(y, value)`, e.g. the origin.
    Point(f64, f64),
    /// A ray of given slope (the point at infinity).
    Slope(f64),
}

/// Tangency condition: derivative of the obstacle equals the slope of the
/// line joining the candidate point to the anchor.
fn tangency_gap(h: &dyn Fn(f64) -> f64, anchor: Anchor, y: f64) -> f64 {
    let target = match anchor {
        Anchor::Point(py, pv) => (h(y) - pv) / (y - py),
        Anchor::Slope(s) => s,
    };
    derivative(h, y) - target
}

/// Bisection for the tangency point in `[lo, hi]`. The bracket is widened
/// geometrically (ratio `hi/lo` per step, at most `max_expand` times) until
/// the condition changes sign.
pub fn refine_tangency(h: &dyn Fn(f64) -> f64, anchor: Anchor, lo: f64, hi: f64, max_expand: usize) -> Result<f64> {
    let gap = |y: f64| tangency_gap(h, anchor, y);
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (gap(a), gap(b));
    let ratio = (hi / lo).max(1.0 + 1e-6);
    let mut tries = 0;
    while ga.signum() == gb.signum() && ga != 0.0 && gb != 0.0 {
        if tries >= max_expand {
            return Err(Error::NoRoot {
                lo: a,
                hi: b,
                what: "tangency condition has no sign change".into(),
            });
        }
        a /= ratio;
        b *= ratio;
        if let Anchor::Point(py, _) = anchor {
            if py > 0.0 && py < b && py > a {
                return Err(Error::NoRoot {
                    lo: a,
                    hi: b,
                    what: "bracket reached the anchor".into(),
                });
            }
        }
        ga = gap(a);
        gb = gap(b);
        tries += 1;
    }
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    while b - a > TANGENCY_RTOL * b {
        let m = 0.5 * (a + b);
        let gm = gap(m);
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
