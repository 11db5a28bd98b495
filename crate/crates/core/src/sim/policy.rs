use rand::Rng;

use super::{dist, sub, unit, Belief, SoftQ, Vec2};

/// Human teleoperation path: five interior waypoints evenly spaced on the
/// segment `start → g1`, the i-th pushed perpendicular by `√ηᵢ` with
/// alternating sign, followed by `g1` itself. The L2 norm of the
/// perpendicular offsets therefore equals `√(Σ η)`.
pub fn teleop_waypoints(start: Vec2, g1: Vec2, noise: &[f64]) -> Vec<Vec2> {
    let d = sub(g1, start);
    let dir = unit(d);
    let perp = [-dir[1], dir[0]];
    let k = noise.len() + 1;
    let mut out: Vec<Vec2> = noise
        .iter()
        .enumerate()
        .map(|(i, eta)| {
            let frac = (i + 1) as f64 / k as f64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let off = sign * eta.max(0.0).sqrt();
            [
                start[0] + frac * d[0] + off * perp[0],
                start[1] + frac * d[1] + off * perp[1],
            ]
        })
        .collect();
    out.push(g1);
    out
}

/// Tracks which teleoperation waypoint the human is steering toward.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointFollower {
    start: Vec2,
    dir: Vec2,
    waypoints: Vec<Vec2>,
    next: usize,
    tol: f64,
}

impl WaypointFollower {
    /// `waypoints` ends with the goal, which is never skipped.
    pub fn new(start: Vec2, waypoints: Vec<Vec2>, tol: f64) -> Self {
        let goal = *waypoints.last().expect("at least the goal waypoint");
        Self {
            start,
            dir: unit(sub(goal, start)),
            waypoints,
            next: 0,
            tol,
        }
    }

    pub fn next_index(&self) -> usize {
        self.next
    }

    fn along(&self, p: Vec2) -> f64 {
        let d = sub(p, self.start);
        d[0] * self.dir[0] + d[1] * self.dir[1]
    }

    /// Current waypoint-to-go after skipping every intermediate waypoint that
    /// is within tolerance or already behind `x` along the start→goal axis.
    pub fn target(&mut self, x: Vec2) -> Vec2 {
        while self.next + 1 < self.waypoints.len() {
            let wp = self.waypoints[self.next];
            if dist(x, wp) <= self.tol || self.along(x) >= self.along(wp) {
                self.next += 1;
            } else {
                break;
            }
        }
        self.waypoints[self.next]
    }

    /// Joystick velocity: `speed` toward the waypoint-to-go.
    pub fn input(&mut self, x: Vec2, speed: f64) -> Vec2 {
        let t = self.target(x);
        let u = unit(sub(t, x));
        [u[0] * speed, u[1] * speed]
    }
}

/// Hindsight-optimization assistance: `speed · Σ_g b(g)·unit(g − x)`.
pub fn robot_action_teleop_shared(belief: &Belief, x: Vec2, goals: &[Vec2], speed: f64) -> Vec2 {
    let mut v = [0.0, 0.0];
    for (b, g) in belief.probs().iter().zip(goals) {
        let u = unit(sub(*g, x));
        v[0] += speed * b * u[0];
        v[1] += speed * b * u[1];
    }
    v
}

/// Policy blending: passes the human input through until the belief in some
/// goal exceeds `threshold`, then drives straight to that goal. The chosen
/// goal is latched in `takeover`.
pub fn robot_action_teleop_blend(
    belief: &Belief,
    u: Vec2,
    x: Vec2,
    goals: &[Vec2],
    threshold: f64,
    speed: f64,
    takeover: &mut Option<usize>,
) -> Vec2 {
    if takeover.is_none() && belief.max() > threshold {
        *takeover = Some(belief.argmax());
    }
    match takeover {
        Some(g) => {
            let d = unit(sub(goals[*g], x));
            [d[0] * speed, d[1] * speed]
        }
        None => u,
    }
}

/// Goals the robot may pursue for each candidate human goal: its unworked
/// goals minus the candidate, or all unworked goals when that leaves nothing.
pub fn feasible_goal_sets(robot_unworked: &[usize], candidates: usize) -> Vec<Vec<usize>> {
    (0..candidates)
        .map(|g| {
            let set: Vec<usize> = robot_unworked.iter().copied().filter(|r| *r != g).collect();
            if set.is_empty() {
                robot_unworked.to_vec()
            } else {
                set
            }
        })
        .collect()
}

/// Goal-to-go per candidate human goal: the nearest goal of its feasible set
/// (ties to the lowest index).
pub fn goal_to_go_map(sets: &[Vec<usize>], goals: &[Vec2], robot: Vec2) -> Vec<usize> {
    sets.iter()
        .map(|set| {
            let mut best = set[0];
            for &g in &set[1..] {
                let d = dist(goals[g], robot);
                let db = dist(goals[best], robot);
                if d < db || (d == db && g < best) {
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Weighted straight-line motion toward the goals-to-go, where goal `g'`
/// carries weight `Σ_{g: F(g) = g'} b(g)`.
pub fn robot_action_collab(
    belief: &Belief,
    fmap: &[usize],
    goals: &[Vec2],
    x: Vec2,
    speed: f64,
) -> Vec2 {
    let mut weights = vec![0.0; goals.len()];
    for (b, f) in belief.probs().iter().zip(fmap) {
        weights[*f] += b;
    }
    let mut v = [0.0, 0.0];
    for (w, g) in weights.iter().zip(goals) {
        let u = unit(sub(*g, x));
        v[0] += speed * w * u[0];
        v[1] += speed * w * u[1];
    }
    v
}

/// Next cell for the human on its soft Q-table: greedy (ties to the lowest
/// action index) when `beta` is `None`, otherwise sampled with probability
/// `∝ exp(β·Q(s,a))`.
pub fn human_next_cell<R: Rng + ?Sized>(
    table: &SoftQ,
    s: usize,
    beta: Option<f64>,
    rng: &mut R,
) -> usize {
    let a = match beta {
        None => table.greedy(s),
        Some(beta) => {
            let q = &table.q[s];
            let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = q.iter().map(|v| (beta * (v - m)).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut r = rng.random::<f64>() * total;
            let mut pick = table.greedy(s);
            for (a, wa) in w.iter().enumerate() {
                if *wa == 0.0 {
                    continue;
                }
                if r < *wa {
                    pick = a;
                    break;
                }
                r -= wa;
            }
            pick
        }
    };
    table.spec.step(s, a).unwrap_or(s)
}
