use serde::{Deserialize, Serialize};

use super::{add_scaled, dist, norm, SoftQ, Vec2};

/// Probability of each candidate human goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// All mass on goal `i`.
    pub fn delta(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self { probs }
    }

    pub fn from_probs(probs: Vec<f64>) -> Option<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return None;
        }
        Some(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most likely goal, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Largest probability on any goal other than `truth`.
    pub fn max_excluding(&self, truth: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != truth)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    }

    /// `b'(g) ∝ b(g)·exp(β·A_g)`. Leaves the belief unchanged when the
    /// normalizer degenerates. Returns whether the belief was updated.
    pub fn update(&mut self, advantages: &[f64], beta: f64) -> bool {
        debug_assert_eq!(advantages.len(), self.probs.len());
        let logits: Vec<f64> = advantages.iter().map(|a| beta * a).collect();
        let m = logits
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return false;
        }
        let new: Vec<f64> = self
            .probs
            .iter()
            .zip(&logits)
            .map(|(p, l)| if *p > 0.0 { p * (l - m).exp() } else { 0.0 })
            .collect();
        let z: f64 = new.iter().sum();
        if !(z.is_finite() && z > 0.0) {
            return false;
        }
        self.probs = new.into_iter().map(|p| p / z).collect();
        true
    }
}

/// Per-goal advantage of joystick input `u` at `x`, in meters, under
/// distance values `V_g = −‖x−g‖` and `Q_g = −‖u‖dt − ‖x+u·dt−g‖`. Values lie
/// in [−2‖u‖dt, 0]. Zero input gives all zeros.
pub fn teleop_advantages(x: Vec2, u: Vec2, goals: &[Vec2], dt: f64) -> Vec<f64> {
    let step = norm(u) * dt;
    if step == 0.0 {
        return vec![0.0; goals.len()];
    }
    let next = add_scaled(x, u, dt);
    goals
        .iter()
        .map(|g| -step - dist(next, *g) + dist(x, *g))
        .collect()
}

/// Per-goal `Q_g(s, a) − V_g(s)` from each goal's soft Q-table.
pub fn collab_advantages(tables: &[SoftQ], s: usize, a: usize) -> Vec<f64> {
    tables.iter().map(|t| t.advantage(s, a)).collect()
}
