//! Path simulation shared by every estimator.
//!
//! Mortality events (jump times, post-jump states, the death or killing
//! clock) do not depend on wealth, so they are drawn first from their own
//! substream. Wealth is then stepped exactly along the union of the payoff
//! grid and the event times, with one standard normal per step from the
//! Brownian substream. All arms of a run share these draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::model::ModelConfig;
use crate::mortality::StateTree;
use crate::policy::Policy;

/// Two substreams per sample: Brownian increments and mortality events.
pub(crate) fn substreams(seed: u64, sample: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut brownian = ChaCha8Rng::seed_from_u64(seed);
    brownian.set_stream(2 * sample);
    let mut events = ChaCha8Rng::seed_from_u64(seed);
    events.set_stream(2 * sample + 1);
    (brownian, events)
}

/// Which hazard drives the terminating clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Clock {
    /// No clock; paths run to the horizon.
    None,
    /// Killing at rate `rho + mu_t`.
    Discount,
    /// Death at rate `mu_t`.
    Death,
}

/// Piecewise-constant mortality path.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPath {
    /// `(start time, node)` of each constant piece; the first starts at 0.
    pub pieces: Vec<(f64, usize)>,
    /// Time the clock rings (`inf` without a clock).
    pub end: f64,
}

impl MortalityPath {
    pub fn node_at(&self, t: f64) -> usize {
        let k = self.pieces.partition_point(|p| p.0 <= t);
        self.pieces[k.max(1) - 1].1
    }
}

fn sample_child(tree: &StateTree, node: usize, u: f64) -> usize {
    let children = &tree.nodes[node].children;
    let mut acc = 0.0;
    for &(c, p) in children {
        acc += p;
        if u < acc {
            return c;
        }
    }
    children[children.len() - 1].0
}

/// Jump times, post-jump states and the clock, with the clock inverted
/// exactly from one unit exponential on the piecewise-linear cumulative hazard.
pub(crate) fn mortality_path(
    cfg: &ModelConfig,
    tree: &StateTree,
    clock: Clock,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> MortalityPath {
    let theta: f64 = if clock == Clock::None {
        f64::INFINITY
    } else {
        rng.sample(Exp1)
    };
    let mut remaining = theta;
    let mut t = 0.0;
    let mut node = start;
    let mut pieces = vec![(0.0, start)];
    loop {
        let state = &tree.nodes[node];
        let jump = if state.lambda_next > 0.0 && !state.children.is_empty() {
            let e: f64 = rng.sample(Exp1);
            t + e / state.lambda_next
        } else {
            f64::INFINITY
        };
        let hazard = match clock {
            Clock::None => 0.0,
            Clock::Discount => cfg.market.rho + state.mu,
            Clock::Death => state.mu,
        };
        if hazard > 0.0 {
            let ring = t + remaining / hazard;
            if ring <= jump {
                return MortalityPath { pieces, end: ring };
            }
            remaining -= hazard * (jump - t);
        }
        if jump == f64::INFINITY {
            return MortalityPath {
                pieces,
                end: f64::INFINITY,
            };
        }
        let u: f64 = rng.gen();
        node = sample_child(tree, node, u);
        t = jump;
        pieces.push((t, node));
    }
}

/// One start wealth evaluated under one policy.
#[derive(Debug, Clone, Copy)]
pub struct Arm<'a> {
    pub x0: f64,
    pub policy: &'a Policy,
}

/// How running and terminal payoffs are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Deterministic discount `exp(-int (rho + mu))`, reward `(alpha + nu mu) X`.
    Integrated,
    /// No discount (the clock kills), reward `(alpha + nu mu) X`.
    Killed,
    /// Discount `exp(-rho t)`, reward `alpha X`, bequest at death, annuity paid until death.
    Raw,
}

pub struct Engine<'a> {
    pub cfg: &'a ModelConfig,
    pub tree: &'a StateTree,
    pub f_hat: &'a [f64],
    pub dt: f64,
    pub horizon: f64,
    pub monitor_stride: usize,
    pub antithetic: bool,
    pub seed: u64,
    /// Node the paths start in.
    pub start: usize,
}

#[derive(Clone, Copy)]
struct Track {
    active: bool,
    acc: f64,
    payoff: f64,
}

impl Engine<'_> {
    /// Payoff of every arm for one sample (antithetic pairs averaged).
    pub fn sample(&self, weighting: Weighting, index: u64, arms: &[Arm<'_>]) -> Vec<f64> {
        let m = &self.cfg.market;
        let (mut brownian, mut events) = substreams(self.seed, index);
        let clock = match weighting {
            Weighting::Integrated => Clock::None,
            Weighting::Killed => Clock::Discount,
            Weighting::Raw => Clock::Death,
        };
        let mort = mortality_path(self.cfg, self.tree, clock, self.start, &mut events);
        let stop_time = mort.end.min(self.horizon);
        let clock_rings = mort.end <= self.horizon;
        let signs: &[f64] = if self.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let drift = m.net_drift() - 0.5 * m.sigma * m.sigma;
        let payout = m.payout_rate();

        // Terminal payoff at time t in node `node` with wealth x, given the discount state.
        let terminal = |t: f64, node: usize, x: f64, log_disc: f64| -> f64 {
            match weighting {
                Weighting::Integrated => (-log_disc).exp() * self.f_hat[node] * (x - m.k),
                Weighting::Killed => self.f_hat[node] * (x - m.k),
                Weighting::Raw => {
                    let tail = if mort.end.is_finite() {
                        (-m.rho * mort.end).exp()
                    } else {
                        0.0
                    };
                    (x - m.k) * payout * ((-m.rho * t).exp() - tail) / m.rho
                }
            }
        };

        let mut tracks: Vec<Track> = Vec::with_capacity(signs.len() * arms.len());
        let mut g = vec![1.0; signs.len()];
        let mut node = self.start;
        let mut piece = 0;
        let mut t = 0.0;
        let mut log_disc = 0.0;
        for _ in signs {
            for arm in arms {
                let mut tr = Track {
                    active: true,
                    acc: 0.0,
                    payoff: 0.0,
                };
                if arm.policy.rule(node).stops(arm.x0) {
                    tr.payoff = terminal(0.0, node, arm.x0, 0.0);
                    tr.active = false;
                }
                tracks.push(tr);
            }
        }
        let mut live = tracks.iter().filter(|t| t.active).count();
        let mut step = 0usize;
        while live > 0 {
            let next_grid = (step + 1) as f64 * self.dt;
            let next_jump = mort.pieces.get(piece + 1).map_or(f64::INFINITY, |p| p.0);
            let end = next_grid.min(next_jump).min(stop_time);
            let h = end - t;
            let z: f64 = brownian.sample(StandardNormal);
            let mu = self.tree.nodes[node].mu;
            let (reward, rate) = match weighting {
                Weighting::Raw => (m.alpha, m.rho),
                _ => (m.alpha + m.nu * mu, m.rho + mu),
            };
            let new_log_disc = match weighting {
                Weighting::Integrated => log_disc + rate * h,
                Weighting::Killed => 0.0,
                Weighting::Raw => m.rho * end,
            };
            let (w0, w1) = match weighting {
                Weighting::Killed => (1.0, 1.0),
                Weighting::Integrated => ((-log_disc).exp(), (-new_log_disc).exp()),
                Weighting::Raw => ((-m.rho * t).exp(), (-m.rho * end).exp()),
            };
            let sd = m.sigma * h.sqrt();
            for (s, &sign) in signs.iter().enumerate() {
                let g_new = g[s] * (drift * h + sd * sign * z).exp();
                let running = reward * 0.5 * (w0 * g[s] + w1 * g_new) * h;
                for (a, arm) in arms.iter().enumerate() {
                    let tr = &mut tracks[s * arms.len() + a];
                    if tr.active {
                        tr.acc += arm.x0 * running;
                    }
                }
                g[s] = g_new;
            }
            t = end;
            log_disc = new_log_disc;

            if end == stop_time {
                for (s, _) in signs.iter().enumerate() {
                    for (a, arm) in arms.iter().enumerate() {
                        let tr = &mut tracks[s * arms.len() + a];
                        if tr.active {
                            tr.payoff = tr.acc;
                            if weighting == Weighting::Raw && clock_rings {
                                tr.payoff += (-m.rho * t).exp() * m.nu * arm.x0 * g[s];
                            }
                            tr.active = false;
                        }
                    }
                }
                break;
            }
            let mut check = false;
            if end == next_jump {
                piece += 1;
                node = mort.pieces[piece].1;
                check = true;
            }
            if end == next_grid {
                step += 1;
                check |= step % self.monitor_stride == 0;
            }
            if check {
                for (s, _) in signs.iter().enumerate() {
                    for (a, arm) in arms.iter().enumerate() {
                        let tr = &mut tracks[s * arms.len() + a];
                        let x = arm.x0 * g[s];
                        if tr.active && arm.policy.rule(node).stops(x) {
                            tr.payoff = tr.acc + terminal(t, node, x, log_disc);
                            tr.active = false;
                            live -= 1;
                        }
                    }
                }
            }
        }
        let k = signs.len() as f64;
        (0..arms.len())
            .map(|a| (0..signs.len()).map(|s| tracks[s * arms.len() + a].payoff).sum::<f64>() / k)
            .collect()
    }
}
