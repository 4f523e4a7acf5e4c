//! Threshold stopping rules, one per mortality state.

use serde::{Deserialize, Serialize};

/// Stopping rule at one mortality state; the five geometries a stopping set can take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "thresholds")]
pub enum StoppingRule {
    /// Stop once wealth is at least `b`.
    StopAbove(f64),
    /// Stop while wealth is at most `b`.
    StopBelow(f64),
    /// Stop while wealth lies in `[b1, b2]`.
    StopInside(f64, f64),
    Never,
    Immediately,
}

impl StoppingRule {
    pub fn stops(&self, x: f64) -> bool {
        match *self {
            StoppingRule::StopAbove(b) => x >= b,
            StoppingRule::StopBelow(b) => x <= b,
            StoppingRule::StopInside(b1, b2) => x >= b1 && x <= b2,
            StoppingRule::Never => false,
            StoppingRule::Immediately => true,
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        match *self {
            StoppingRule::StopAbove(b) | StoppingRule::StopBelow(b) => vec![b],
            StoppingRule::StopInside(b1, b2) => vec![b1, b2],
            StoppingRule::Never | StoppingRule::Immediately => Vec::new(),
        }
    }

    /// Same rule with threshold `index` multiplied by `factor`.
    pub fn with_scaled_threshold(&self, index: usize, factor: f64) -> Self {
        match (*self, index) {
            (StoppingRule::StopAbove(b), 0) => StoppingRule::StopAbove(b * factor),
            (StoppingRule::StopBelow(b), 0) => StoppingRule::StopBelow(b * factor),
            (StoppingRule::StopInside(b1, b2), 0) => StoppingRule::StopInside((b1 * factor).min(b2), b2),
            (StoppingRule::StopInside(b1, b2), 1) => StoppingRule::StopInside(b1, (b2 * factor).max(b1)),
            (rule, _) => rule,
        }
    }
}

/// Stopping rule for every node of a state tree, indexed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub rules: Vec<StoppingRule>,
}

impl Policy {
    pub fn new(rules: Vec<StoppingRule>) -> Self {
        Self { rules }
    }

    pub fn rule(&self, node: usize) -> StoppingRule {
        self.rules[node]
    }

    /// Every `(node, threshold index)` pair that can be perturbed.
    pub fn threshold_slots(&self) -> Vec<(usize, usize)> {
        self.rules
            .iter()
            .enumerate()
            .flat_map(|(node, r)| (0..r.thresholds().len()).map(move |k| (node, k)))
            .collect()
    }

    /// Copy with one threshold scaled.
    pub fn perturbed(&self, node: usize, index: usize, factor: f64) -> Self {
        let mut rules = self.rules.clone();
        rules[node] = rules[node].with_scaled_threshold(index, factor);
        Self { rules }
    }

    /// Copy with every threshold scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for (node, k) in self.threshold_slots() {
            out.rules[node] = out.rules[node].with_scaled_threshold(k, factor);
        }
        out
    }
}
