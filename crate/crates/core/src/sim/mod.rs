//! Planar ground-truth simulator for the teleoperation and collaboration
//! domains. Both agents are points on the tabletop; the robot's optimal path
//! to any goal is a straight line.

mod belief;
mod collab;
mod mdp;
mod policy;
mod teleop;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use belief::{collab_advantages, teleop_advantages, Belief};
pub use collab::{
    simulate_collab, simulate_collab_traced, CollabOutcome, CollabScenario, HumanState, RobotState,
};
pub use mdp::{soft_value_iteration, GridSpec, MdpParams, SoftQ, ACTIONS};
pub use policy::{
    feasible_goal_sets, goal_to_go_map, human_next_cell, robot_action_collab,
    robot_action_teleop_blend, robot_action_teleop_shared, teleop_waypoints, WaypointFollower,
};
pub use teleop::{
    simulate_teleop, simulate_teleop_traced, TeleopOutcome, TeleopScenario, TeleopVariant,
};
pub use trace::TraceRecord;

pub type Vec2 = [f64; 2];

/// Side length of the occupancy grids.
pub const OCCUPANCY_SIDE: usize = 32;
/// Upper bound of each teleoperation waypoint-noise parameter, m².
pub const NOISE_CAP: f64 = 0.112 * 0.112 / 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("position ({x}, {y}) lies outside the planning grid")]
    OutsideGrid { x: f64, y: f64 },
    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite {what} at tick {tick}")]
    NonFinite { tick: usize, what: &'static str },
}

/// Axis-aligned bounds used for occupancy grids and the human planning grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }
}

/// Simulator parameters. Every field has a default; times in seconds,
/// distances in meters, speeds in m/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub human_speed: f64,
    pub robot_speed: f64,
    pub t_work: f64,
    pub t_reset: f64,
    /// Distance at which an agent counts as having reached a goal.
    pub reach: f64,
    /// Distance at which a teleoperation waypoint counts as visited.
    pub waypoint_tol: f64,
    pub teleop_belief_beta: f64,
    pub collab_belief_beta: f64,
    pub blend_threshold: f64,
    pub teleop_cap: f64,
    pub blend_cap: f64,
    pub collab_cap: f64,
    pub teleop_start: Vec2,
    pub teleop_bounds: Bounds,
    pub human_start: Vec2,
    pub robot_home: Vec2,
    pub replan_center: Vec2,
    pub replan_radius: f64,
    pub collab_bounds: Bounds,
    pub cell_size: f64,
    pub softmax_temperature: f64,
    pub discount: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            human_speed: 0.10,
            robot_speed: 0.20,
            t_work: 5.0,
            t_reset: 2.0,
            reach: 0.03,
            waypoint_tol: 0.01,
            teleop_belief_beta: 5.0,
            collab_belief_beta: 200.0,
            blend_threshold: 0.9,
            teleop_cap: 10.0,
            blend_cap: 20.0,
            collab_cap: 100.0,
            teleop_start: [0.2, 0.0],
            teleop_bounds: Bounds::new(0.0, 0.4, 0.0, 0.5),
            human_start: [0.5, -0.1],
            robot_home: [0.5, 0.6],
            replan_center: [0.5, 0.2],
            replan_radius: 0.10,
            collab_bounds: Bounds::new(-0.05, 1.05, -0.15, 0.65),
            cell_size: 0.06,
            softmax_temperature: 0.001,
            discount: 0.9999,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("human_speed", self.human_speed),
            ("robot_speed", self.robot_speed),
            ("reach", self.reach),
            ("waypoint_tol", self.waypoint_tol),
            ("teleop_cap", self.teleop_cap),
            ("blend_cap", self.blend_cap),
            ("collab_cap", self.collab_cap),
            ("cell_size", self.cell_size),
            ("softmax_temperature", self.softmax_temperature),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let nonneg = [
            ("t_work", self.t_work),
            ("t_reset", self.t_reset),
            ("teleop_belief_beta", self.teleop_belief_beta),
            ("collab_belief_beta", self.collab_belief_beta),
            ("replan_radius", self.replan_radius),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(self.blend_threshold > 0.5 && self.blend_threshold < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "blend_threshold must lie in (0.5, 1), got {}",
                self.blend_threshold
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        for (name, b) in [
            ("teleop_bounds", self.teleop_bounds),
            ("collab_bounds", self.collab_bounds),
        ] {
            if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                return Err(SimError::InvalidConfig(format!("{name} is empty: {b:?}")));
            }
        }
        Ok(())
    }

    /// Number of ticks that fit in `cap` seconds.
    fn ticks(&self, cap: f64) -> usize {
        (cap / self.dt - 1e-9).ceil() as usize
    }
}

pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

/// Unit vector along `a`; zero for the zero vector.
pub(crate) fn unit(a: Vec2) -> Vec2 {
    let n = norm(a);
    if n > 0.0 {
        [a[0] / n, a[1] / n]
    } else {
        [0.0, 0.0]
    }
}

pub(crate) fn add_scaled(a: Vec2, v: Vec2, s: f64) -> Vec2 {
    [a[0] + v[0] * s, a[1] + v[1] * s]
}

/// Velocity toward `target` at `speed`, shortened so one tick of length `dt`
/// lands exactly on the target instead of overshooting.
pub(crate) fn approach(from: Vec2, target: Vec2, speed: f64, dt: f64) -> Vec2 {
    let d = sub(target, from);
    let n = norm(d);
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let s = speed.min(n / dt);
    [d[0] / n * s, d[1] / n * s]
}

/// Fraction of samples per cell on an `OCCUPANCY_SIDE`² grid, row-major with
/// rows along y. Points outside `bounds` count toward the nearest edge cell.
pub fn occupancy_grid(points: &[Vec2], bounds: &Bounds) -> Vec<f64> {
    let n = OCCUPANCY_SIDE;
    let mut grid = vec![0.0; n * n];
    if points.is_empty() {
        return grid;
    }
    let bin = |v: f64, lo: f64, hi: f64| -> usize {
        let b = ((v - lo) / (hi - lo) * n as f64).floor();
        if b.is_nan() {
            0
        } else {
            b.clamp(0.0, (n - 1) as f64) as usize
        }
    };
    let w = 1.0 / points.len() as f64;
    for p in points {
        let ix = bin(p[0], bounds.x_min, bounds.x_max);
        let iy = bin(p[1], bounds.y_min, bounds.y_max);
        grid[iy * n + ix] += w;
    }
    grid
}
