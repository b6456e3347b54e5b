//! Per-layer pre-activation intervals and neuron phase classification.

use serde::{Deserialize, Serialize};

/// Intervals narrower than this are treated as a single linear phase.
pub const FIXED_WIDTH: f64 = 1e-12;

/// How a ReLU behaves on its pre-activation interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronClass {
    /// `l ≥ 0`: the ReLU is the identity.
    Passing,
    /// `u ≤ 0`: the ReLU is zero.
    Blocking,
    /// `l < 0 < u`: the triangle relaxation applies.
    Ambiguous,
}

/// Shared classifier; every module uses it so that relaxations agree exactly.
pub fn classify(l: f64, u: f64) -> NeuronClass {
    if u - l < FIXED_WIDTH {
        if l >= 0.0 {
            NeuronClass::Passing
        } else {
            NeuronClass::Blocking
        }
    } else if l >= 0.0 {
        NeuronClass::Passing
    } else if u <= 0.0 {
        NeuronClass::Blocking
    } else {
        NeuronClass::Ambiguous
    }
}

/// A phase constraint imposed on a hidden ReLU by branching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Free,
    /// `x̂ ≥ 0`.
    Passing,
    /// `x̂ ≤ 0`.
    Blocking,
}

/// Phase constraints for every hidden neuron, indexed like [`LayerBounds`].
pub type Phases = Vec<Vec<Phase>>;

pub fn free_phases(widths: &[usize]) -> Phases {
    widths.iter().map(|&w| vec![Phase::Free; w]).collect()
}

/// Intervals `[l̂_k, û_k]` for hidden layers `k = 1 … n-1` (stored zero based).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl LayerBounds {
    pub fn new(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn num_layers(&self) -> usize {
        self.lower.len()
    }

    /// False when some interval is empty, i.e. the constrained region is empty.
    pub fn is_feasible(&self) -> bool {
        self.lower
            .iter()
            .flatten()
            .zip(self.upper.iter().flatten())
            .all(|(l, u)| l <= u)
    }

    pub fn class(&self, layer: usize, i: usize) -> NeuronClass {
        classify(self.lower[layer][i], self.upper[layer][i])
    }

    pub fn ambiguous(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (h, (ls, us)) in self.lower.iter().zip(&self.upper).enumerate() {
            for (i, (&l, &u)) in ls.iter().zip(us).enumerate() {
                if classify(l, u) == NeuronClass::Ambiguous {
                    out.push((h, i));
                }
            }
        }
        out
    }

    pub fn num_ambiguous(&self) -> usize {
        self.ambiguous().len()
    }

    /// Restricts one neuron to a phase; the interval may become empty.
    pub fn clamp(&mut self, layer: usize, i: usize, phase: Phase) {
        match phase {
            Phase::Free => {}
            Phase::Passing => self.lower[layer][i] = self.lower[layer][i].max(0.0),
            Phase::Blocking => self.upper[layer][i] = self.upper[layer][i].min(0.0),
        }
    }

    /// Clamps a whole layer.
    pub fn clamp_layer(&mut self, layer: usize, phases: &[Phase]) {
        for (i, &p) in phases.iter().enumerate() {
            self.clamp(layer, i, p);
        }
    }

    /// Element-wise intersection with another sound set of bounds.
    pub fn intersect(&mut self, other: &LayerBounds) {
        for h in 0..self.lower.len() {
            for i in 0..self.lower[h].len() {
                self.lower[h][i] = self.lower[h][i].max(other.lower[h][i]);
                self.upper[h][i] = self.upper[h][i].min(other.upper[h][i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_with_guard() {
        assert_eq!(classify(-1.0, 1.0), NeuronClass::Ambiguous);
        assert_eq!(classify(0.0, 1.0), NeuronClass::Passing);
        assert_eq!(classify(-1.0, 0.0), NeuronClass::Blocking);
        assert_eq!(classify(-1e-13, 1e-13), NeuronClass::Blocking);
        assert_eq!(classify(2.0, 2.0), NeuronClass::Passing);
    }

    #[test]
    fn clamp_can_empty_an_interval() {
        let mut b = LayerBounds::new(vec![vec![0.5]], vec![vec![1.0]]);
        b.clamp(0, 0, Phase::Blocking);
        assert!(!b.is_feasible());
    }
}
