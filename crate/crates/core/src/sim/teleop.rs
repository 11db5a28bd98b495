use serde::{Deserialize, Serialize};

use super::{
    add_scaled, dist, occupancy_grid, robot_action_teleop_blend, robot_action_teleop_shared,
    teleop_advantages, teleop_waypoints, Belief, SimConfig, SimError, TraceRecord, Vec2,
    WaypointFollower, NOISE_CAP,
};

/// Two goals (the human wants `g1`) and five waypoint-noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopScenario {
    pub g1: Vec2,
    pub g2: Vec2,
    pub noise: [f64; 5],
}

impl TeleopScenario {
    /// θ layout: `[g1x, g1y, g2x, g2y, η₁..η₅]`.
    pub fn from_theta(theta: &[f64]) -> Result<Self, SimError> {
        if theta.len() != 9 {
            return Err(SimError::InvalidScenario(format!(
                "expected 9 parameters, got {}",
                theta.len()
            )));
        }
        let s = Self {
            g1: [theta[0], theta[1]],
            g2: [theta[2], theta[3]],
            noise: [theta[4], theta[5], theta[6], theta[7], theta[8]],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.g1.iter().chain(&self.g2).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidScenario("non-finite goal".into()));
        }
        if let Some(eta) = self
            .noise
            .iter()
            .find(|e| !(**e >= 0.0 && **e <= NOISE_CAP + 1e-12))
        {
            return Err(SimError::InvalidScenario(format!(
                "noise {eta} outside [0, {NOISE_CAP}]"
            )));
        }
        Ok(())
    }

    pub fn goal_distance(&self) -> f64 {
        dist(self.g1, self.g2)
    }

    /// `√(Σ η)`.
    pub fn variation(&self) -> f64 {
        self.noise.iter().sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeleopVariant {
    /// Robot executes the belief-weighted assistive action.
    Shared,
    /// Human drives until the robot is confident, then the robot takes over.
    Blend,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeleopOutcome {
    /// Seconds until the robot came within reach of `g1`, or the cap.
    pub time: f64,
    pub reached: bool,
    pub ticks: usize,
    pub path: Vec<Vec2>,
    /// Belief after every tick's update.
    pub beliefs: Vec<Belief>,
    pub occupancy: Vec<f64>,
    pub goal_distance: f64,
    pub variation: f64,
}

pub fn simulate_teleop(
    scenario: &TeleopScenario,
    variant: TeleopVariant,
    config: &SimConfig,
) -> Result<TeleopOutcome, SimError> {
    simulate_teleop_traced(scenario, variant, config, None)
}

/// Tick loop: human input, belief update, robot action, integration.
pub fn simulate_teleop_traced(
    scenario: &TeleopScenario,
    variant: TeleopVariant,
    config: &SimConfig,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<TeleopOutcome, SimError> {
    scenario.validate()?;
    config.validate()?;
    let cap = match variant {
        TeleopVariant::Shared => config.teleop_cap,
        TeleopVariant::Blend => config.blend_cap,
    };
    let max_ticks = config.ticks(cap);
    let goals = [scenario.g1, scenario.g2];
    let start = config.teleop_start;
    let mut follower = WaypointFollower::new(
        start,
        teleop_waypoints(start, scenario.g1, &scenario.noise),
        config.waypoint_tol,
    );
    let mut x = start;
    let mut belief = Belief::uniform(2);
    let mut takeover = None;
    let mut path = vec![x];
    let mut beliefs = Vec::new();
    let mut tick = 0;
    let mut reached = false;
    loop {
        if dist(x, scenario.g1) <= config.reach {
            reached = true;
            break;
        }
        if tick >= max_ticks {
            break;
        }
        let u = follower.input(x, config.human_speed);
        belief.update(
            &teleop_advantages(x, u, &goals, config.dt),
            config.teleop_belief_beta,
        );
        let v = match variant {
            TeleopVariant::Shared => {
                robot_action_teleop_shared(&belief, x, &goals, config.robot_speed)
            }
            TeleopVariant::Blend => robot_action_teleop_blend(
                &belief,
                u,
                x,
                &goals,
                config.blend_threshold,
                config.robot_speed,
                &mut takeover,
            ),
        };
        x = add_scaled(x, v, config.dt);
        tick += 1;
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(SimError::NonFinite {
                tick,
                what: "robot position",
            });
        }
        path.push(x);
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRecord {
                tick,
                time: tick as f64 * config.dt,
                robot: x,
                robot_state: match takeover {
                    Some(g) => format!("autonomous-to-goal-{g}"),
                    None => "assisting".into(),
                },
                human: None,
                human_state: None,
                input: Some(u),
                belief: belief.probs().to_vec(),
                goal_to_go: None,
            });
        }
        beliefs.push(belief.clone());
    }
    Ok(TeleopOutcome {
        time: (tick as f64 * config.dt).min(cap),
        reached,
        ticks: tick,
        occupancy: occupancy_grid(&path, &config.teleop_bounds),
        path,
        beliefs,
        goal_distance: scenario.goal_distance(),
        variation: scenario.variation(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(g1: Vec2, g2: Vec2, eta: f64) -> TeleopScenario {
        TeleopScenario {
            g1,
            g2,
            noise: [eta; 5],
        }
    }

    #[test]
    fn straight_human_far_goals_succeeds_quickly() {
        let cfg = SimConfig::default();
        let out = simulate_teleop(
            &scenario([0.05, 0.4], [0.35, 0.4], 0.0),
            TeleopVariant::Shared,
            &cfg,
        )
        .unwrap();
        assert!(out.reached);
        assert!(out.time < 10.0, "{}", out.time);
        assert!((out.goal_distance - 0.3).abs() < 1e-12);
    }

    #[test]
    fn coincident_goals_are_reached_fast() {
        let cfg = SimConfig::default();
        let out = simulate_teleop(
            &scenario([0.2, 0.4], [0.2, 0.4], 0.0),
            TeleopVariant::Shared,
            &cfg,
        )
        .unwrap();
        assert!(out.reached);
        assert_eq!(out.goal_distance, 0.0);
        // Straight run at robot speed: 0.37 m at 0.2 m/s.
        assert!((out.time - 1.85).abs() <= cfg.dt + 1e-9, "{}", out.time);
        for b in &out.beliefs {
            assert!((b.probs()[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn variation_of_maximal_noise() {
        let s = scenario([0.1, 0.3], [0.3, 0.3], NOISE_CAP);
        assert!((s.variation() - 0.112).abs() < 1e-12);
        assert!(
            TeleopScenario::from_theta(&[0.1, 0.3, 0.3, 0.3, 1.0, 0.0, 0.0, 0.0, 0.0]).is_err()
        );
    }

    #[test]
    fn time_respects_caps_and_grid_is_normalized() {
        let cfg = SimConfig {
            teleop_cap: 0.5,
            ..SimConfig::default()
        };
        let out = simulate_teleop(
            &scenario([0.1, 0.5], [0.3, 0.5], NOISE_CAP),
            TeleopVariant::Shared,
            &cfg,
        )
        .unwrap();
        assert!(!out.reached);
        assert!(out.time <= 0.5 + 1e-12);
        assert!((out.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blending_without_confidence_lets_the_human_drive() {
        let cfg = SimConfig {
            blend_threshold: 0.999_999,
            teleop_belief_beta: 0.0,
            ..SimConfig::default()
        };
        let s = scenario([0.15, 0.3], [0.25, 0.3], 0.0);
        let out = simulate_teleop(&s, TeleopVariant::Blend, &cfg).unwrap();
        // Human speed 0.1 m/s over ~0.3 m.
        assert!(out.reached);
        assert!(out.time > 2.5 && out.time < 3.3, "{}", out.time);
    }

    #[test]
    fn trace_has_one_record_per_tick() {
        let cfg = SimConfig::default();
        let mut trace = Vec::new();
        let out = simulate_teleop_traced(
            &scenario([0.1, 0.3], [0.3, 0.3], 0.001),
            TeleopVariant::Shared,
            &cfg,
            Some(&mut trace),
        )
        .unwrap();
        assert_eq!(trace.len(), out.ticks);
        assert!(((out.time / cfg.dt).round() as usize).abs_diff(trace.len()) <= 1);
    }
}
