use serde::{Deserialize, Serialize};

use super::{Bounds, SimError, Vec2};

/// 8-connected moves as (di, dj): E, NE, N, NW, W, SW, S, SE.
pub const ACTIONS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Uniform square cells anchored at `origin` (the lower-left corner).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec2,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Smallest grid of `cell`-sized squares covering `bounds`.
    pub fn covering(bounds: &Bounds, cell: f64) -> Self {
        Self {
            origin: [bounds.x_min, bounds.y_min],
            cell,
            nx: ((bounds.x_max - bounds.x_min) / cell - 1e-9)
                .ceil()
                .max(1.0) as usize,
            ny: ((bounds.y_max - bounds.y_min) / cell - 1e-9)
                .ceil()
                .max(1.0) as usize,
        }
    }

    pub fn states(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.nx, s / self.nx)
    }

    pub fn cell_of(&self, p: Vec2) -> Result<usize, SimError> {
        let fi = ((p[0] - self.origin[0]) / self.cell).floor();
        let fj = ((p[1] - self.origin[1]) / self.cell).floor();
        if !(fi >= 0.0 && fj >= 0.0 && fi < self.nx as f64 && fj < self.ny as f64) {
            return Err(SimError::OutsideGrid { x: p[0], y: p[1] });
        }
        Ok(self.index(fi as usize, fj as usize))
    }

    pub fn center(&self, s: usize) -> Vec2 {
        let (i, j) = self.coords(s);
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell,
            self.origin[1] + (j as f64 + 0.5) * self.cell,
        ]
    }

    /// Successor of `s` under action `a`, or `None` when it leaves the grid.
    pub fn step(&self, s: usize, a: usize) -> Option<usize> {
        let (i, j) = self.coords(s);
        let (di, dj) = ACTIONS[a];
        let ni = i as i64 + di as i64;
        let nj = j as i64 + dj as i64;
        if ni < 0 || nj < 0 || ni >= self.nx as i64 || nj >= self.ny as i64 {
            return None;
        }
        Some(self.index(ni as usize, nj as usize))
    }

    /// Action moving from `s` to the neighboring cell `t`, if they are adjacent.
    pub fn action_between(&self, s: usize, t: usize) -> Option<usize> {
        let (i, j) = self.coords(s);
        let (ti, tj) = self.coords(t);
        let d = (ti as i64 - i as i64, tj as i64 - j as i64);
        ACTIONS
            .iter()
            .position(|(di, dj)| (*di as i64, *dj as i64) == d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdpParams {
    /// Cost of an orthogonal move; diagonal moves cost √2 times as much.
    pub step_cost: f64,
    pub obstacle_reward: f64,
    pub goal_reward: f64,
    pub discount: f64,
    pub temperature: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for MdpParams {
    fn default() -> Self {
        Self {
            step_cost: 0.01,
            obstacle_reward: -1.0,
            goal_reward: 1.0,
            discount: 0.9999,
            temperature: 0.001,
            tol: 1e-9,
            max_sweeps: 100_000,
        }
    }
}

impl MdpParams {
    /// Reward for entering `next` by action `a`.
    pub fn reward(&self, a: usize, next_is_goal: bool, next_is_obstacle: bool) -> f64 {
        if next_is_goal {
            self.goal_reward
        } else if next_is_obstacle {
            self.obstacle_reward
        } else if a % 2 == 1 {
            -self.step_cost * std::f64::consts::SQRT_2
        } else {
            -self.step_cost
        }
    }
}

/// Converged soft Q-values for reaching one goal cell. Moves that leave the
/// grid have Q = −∞. The goal is absorbing with V = Q = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftQ {
    pub spec: GridSpec,
    pub goal: usize,
    pub q: Vec<[f64; 8]>,
    pub v: Vec<f64>,
    pub sweeps: usize,
}

impl SoftQ {
    /// Highest-Q action, ties to the lowest action index.
    pub fn greedy(&self, s: usize) -> usize {
        let mut best = 0;
        for a in 1..8 {
            if self.q[s][a] > self.q[s][best] {
                best = a;
            }
        }
        best
    }

    /// Q(s, a) − V(s); always ≤ 0.
    pub fn advantage(&self, s: usize, a: usize) -> f64 {
        if s == self.goal {
            return 0.0;
        }
        self.q[s][a] - self.v[s]
    }
}

/// τ·log Σ exp(q/τ), ignoring −∞ entries.
fn soft_max(q: &[f64; 8], tau: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = q.iter().map(|v| ((v - m) / tau).exp()).sum();
    m + tau * s.ln()
}

/// Soft Bellman iteration `V(s) = τ·logsumexp(Q(s,·)/τ)`,
/// `Q(s,a) = r(s,a) + γ·V(s')`, swept until the sup-norm change of V drops
/// below `params.tol`.
pub fn soft_value_iteration(
    spec: &GridSpec,
    goal: usize,
    obstacles: &[usize],
    params: &MdpParams,
) -> Result<SoftQ, SimError> {
    let n = spec.states();
    if goal >= n {
        return Err(SimError::InvalidScenario(format!(
            "goal cell {goal} outside a {n}-cell grid"
        )));
    }
    let mut is_obstacle = vec![false; n];
    for &o in obstacles {
        if o < n && o != goal {
            is_obstacle[o] = true;
        }
    }
    // Successor and reward tables do not change between sweeps.
    let mut next = vec![[None; 8]; n];
    let mut reward = vec![[0.0; 8]; n];
    for s in 0..n {
        for a in 0..8 {
            if let Some(t) = spec.step(s, a) {
                next[s][a] = Some(t);
                reward[s][a] = params.reward(a, t == goal, is_obstacle[t]);
            }
        }
    }

    let mut v = vec![0.0; n];
    let mut q = vec![[f64::NEG_INFINITY; 8]; n];
    let mut residual = f64::INFINITY;
    for sweep in 1..=params.max_sweeps {
        residual = 0.0;
        let mut v_new = vec![0.0; n];
        for s in 0..n {
            if s == goal {
                q[s] = [0.0; 8];
                continue;
            }
            for a in 0..8 {
                q[s][a] = match next[s][a] {
                    Some(t) => reward[s][a] + params.discount * v[t],
                    None => f64::NEG_INFINITY,
                };
            }
            v_new[s] = soft_max(&q[s], params.temperature);
            if !v_new[s].is_finite() {
                return Err(SimError::InvalidScenario(format!("cell {s} has no moves")));
            }
            residual = f64::max(residual, (v_new[s] - v[s]).abs());
        }
        v = v_new;
        if residual < params.tol {
            // Refresh Q against the final V so Q and V are mutually consistent.
            for s in (0..n).filter(|s| *s != goal) {
                for a in 0..8 {
                    if let Some(t) = next[s][a] {
                        q[s][a] = reward[s][a] + params.discount * v[t];
                    }
                }
            }
            return Ok(SoftQ {
                spec: *spec,
                goal,
                q,
                v,
                sweeps: sweep,
            });
        }
    }
    Err(SimError::NonConvergence {
        iterations: params.max_sweeps,
        residual,
    })
}
