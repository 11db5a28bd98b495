use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    add_scaled, approach, collab_advantages, dist, feasible_goal_sets, goal_to_go_map,
    human_next_cell, norm, occupancy_grid, robot_action_collab, soft_value_iteration, Belief,
    GridSpec, MdpParams, SimConfig, SimError, SoftQ, TraceRecord, Vec2,
};

/// Goal positions plus the human model. `human_beta = None` is the greedy
/// human; `Some(β)` samples next cells from a softmax over Q with inverse
/// temperature β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollabScenario {
    pub goals: Vec<Vec2>,
    pub human_beta: Option<f64>,
    pub speed_multiplier: f64,
}

impl CollabScenario {
    pub fn new(goals: Vec<Vec2>) -> Self {
        Self {
            goals,
            human_beta: None,
            speed_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.goals.is_empty() {
            return Err(SimError::InvalidScenario("no goals".into()));
        }
        if self.goals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidScenario("non-finite goal".into()));
        }
        if let Some(b) = self.human_beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(SimError::InvalidScenario(format!("human beta {b}")));
            }
        }
        if !(self.speed_multiplier.is_finite() && self.speed_multiplier > 0.0) {
            return Err(SimError::InvalidScenario(format!(
                "speed multiplier {}",
                self.speed_multiplier
            )));
        }
        Ok(())
    }

    /// Smallest distance between any two goals.
    pub fn min_goal_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.goals.len() {
            for j in i + 1..self.goals.len() {
                best = best.min(dist(self.goals[i], self.goals[j]));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HumanState {
    MovingToGoal,
    WaitingForSpace,
    WorkingOnGoal,
    Resetting,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RobotState {
    MovingToGoal,
    WaitingForSpace,
    WorkingOnGoal,
    Resetting,
    Replanning,
    Done,
}

impl HumanState {
    pub fn name(self) -> &'static str {
        match self {
            Self::MovingToGoal => "moving-to-goal",
            Self::WaitingForSpace => "waiting-for-space",
            Self::WorkingOnGoal => "working-on-goal",
            Self::Resetting => "resetting",
            Self::Done => "done",
        }
    }
}

impl RobotState {
    pub fn name(self) -> &'static str {
        match self {
            Self::MovingToGoal => "moving-to-goal",
            Self::WaitingForSpace => "waiting-for-space",
            Self::WorkingOnGoal => "working-on-goal",
            Self::Resetting => "resetting",
            Self::Replanning => "replanning",
            Self::Done => "done",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollabOutcome {
    /// Seconds until both agents finished, or the cap.
    pub time: f64,
    pub completed: bool,
    pub ticks: usize,
    pub human_path: Vec<Vec2>,
    pub robot_path: Vec<Vec2>,
    pub robot_occupancy: Vec<f64>,
    pub human_occupancy: Vec<f64>,
    /// Highest belief on a goal other than the human's current one, sampled
    /// whenever that goal is defined.
    pub wrong_goal_trace: Vec<f64>,
    /// Belief after every tick.
    pub beliefs: Vec<Belief>,
    pub min_goal_distance: f64,
    pub max_wrong_goal: f64,
    pub robot_path_length: f64,
    /// Time during which at least one agent was waiting for space.
    pub wait_time: f64,
    pub replans: u32,
    /// Goals in the order the robot finished them.
    pub robot_order: Vec<usize>,
}

struct Human {
    pos: Vec2,
    state: HumanState,
    /// Goal the human is currently heading to or working on.
    goal: usize,
    next_cell: Option<usize>,
    timer: f64,
}

struct Robot {
    pos: Vec2,
    state: RobotState,
    goal: Option<usize>,
    worked: Vec<bool>,
    timer: f64,
    replan_armed: bool,
}

pub fn simulate_collab(
    scenario: &CollabScenario,
    config: &SimConfig,
    seed: u64,
) -> Result<CollabOutcome, SimError> {
    simulate_collab_traced(scenario, config, seed, None)
}

/// Tick loop with the human acting first, then the robot, then the clock.
/// The human visits goals in index order; the robot works every goal once.
pub fn simulate_collab_traced(
    scenario: &CollabScenario,
    config: &SimConfig,
    seed: u64,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<CollabOutcome, SimError> {
    scenario.validate()?;
    config.validate()?;
    let goals = &scenario.goals;
    let n = goals.len();
    let spec = GridSpec::covering(&config.collab_bounds, config.cell_size);
    let goal_cells = goals
        .iter()
        .map(|g| spec.cell_of(*g))
        .collect::<Result<Vec<_>, _>>()?;
    let params = MdpParams {
        discount: config.discount,
        temperature: config.softmax_temperature,
        ..MdpParams::default()
    };
    let tables: Vec<SoftQ> = (0..n)
        .map(|g| {
            let obstacles: Vec<usize> = goal_cells
                .iter()
                .enumerate()
                .filter(|(o, c)| *o != g && **c != goal_cells[g])
                .map(|(_, c)| *c)
                .collect();
            soft_value_iteration(&spec, goal_cells[g], &obstacles, &params)
        })
        .collect::<Result<_, _>>()?;
    spec.cell_of(config.human_start)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let human_speed = config.human_speed * scenario.speed_multiplier;
    let dt = config.dt;
    let done_eps = 1e-9;
    let mut human = Human {
        pos: config.human_start,
        state: HumanState::MovingToGoal,
        goal: 0,
        next_cell: None,
        timer: 0.0,
    };
    let mut robot = Robot {
        pos: config.robot_home,
        state: RobotState::MovingToGoal,
        goal: None,
        worked: vec![false; n],
        timer: 0.0,
        replan_armed: true,
    };
    let mut belief = Belief::uniform(n);
    let mut wrong_goal_trace = vec![belief.max_excluding(human.goal)];
    let mut beliefs = Vec::new();
    let mut human_path = vec![human.pos];
    let mut robot_path = vec![robot.pos];
    let mut path_length = 0.0;
    let mut wait_time = 0.0;
    let mut replans = 0;
    let mut robot_order = Vec::new();
    let max_ticks = config.ticks(config.collab_cap);
    let mut tick = 0;

    let finished =
        |h: &Human, r: &Robot| h.state == HumanState::Done && r.state == RobotState::Done;
    while tick < max_ticks && !finished(&human, &robot) {
        // Human phase.
        match human.state {
            HumanState::MovingToGoal => {
                let g = human.goal;
                let s = spec.cell_of(human.pos)?;
                let v = if s == goal_cells[g] {
                    approach(human.pos, goals[g], human_speed, dt)
                } else {
                    let target = match human.next_cell {
                        Some(c) if dist(human.pos, spec.center(c)) > 0.0 => c,
                        _ => human_next_cell(&tables[g], s, scenario.human_beta, &mut rng),
                    };
                    human.next_cell = Some(target);
                    approach(human.pos, spec.center(target), human_speed, dt)
                };
                human.pos = add_scaled(human.pos, v, dt);
                // The robot observes the human's grid move when the human
                // crosses into a neighboring cell.
                let s_new = spec.cell_of(human.pos)?;
                if let Some(a) = spec.action_between(s, s_new) {
                    belief.update(&collab_advantages(&tables, s, a), config.collab_belief_beta);
                }
                if dist(human.pos, goals[g]) <= config.reach {
                    human.next_cell = None;
                    belief = Belief::delta(n, g);
                    if robot.state == RobotState::WorkingOnGoal && robot.goal == Some(g) {
                        human.state = HumanState::WaitingForSpace;
                    } else {
                        human.state = HumanState::WorkingOnGoal;
                        human.timer = config.t_work;
                    }
                }
            }
            HumanState::WaitingForSpace => {
                if !(robot.state == RobotState::WorkingOnGoal && robot.goal == Some(human.goal)) {
                    human.state = HumanState::WorkingOnGoal;
                    human.timer = config.t_work;
                }
            }
            HumanState::WorkingOnGoal => {
                human.timer -= dt;
                if human.timer <= done_eps {
                    human.goal += 1;
                    if human.goal == n {
                        human.state = HumanState::Done;
                    } else {
                        human.state = HumanState::Resetting;
                        human.timer = config.t_reset;
                    }
                }
            }
            HumanState::Resetting => {
                human.timer -= dt;
                if human.timer <= done_eps {
                    human.pos = config.human_start;
                    human.next_cell = None;
                    human.state = HumanState::MovingToGoal;
                    belief = Belief::uniform(n);
                }
            }
            HumanState::Done => {}
        }

        // Robot phase.
        let human_busy_at =
            |g: usize, h: &Human| h.state == HumanState::WorkingOnGoal && h.goal == g;
        let mut fmap = None;
        match robot.state {
            RobotState::MovingToGoal => {
                let unworked: Vec<usize> = (0..n).filter(|g| !robot.worked[*g]).collect();
                let v = if human.state == HumanState::Done {
                    let nearest = *unworked
                        .iter()
                        .min_by(|a, b| {
                            dist(goals[**a], robot.pos).total_cmp(&dist(goals[**b], robot.pos))
                        })
                        .expect("robot has unworked goals while moving");
                    approach(robot.pos, goals[nearest], config.robot_speed, dt)
                } else {
                    let f = goal_to_go_map(&feasible_goal_sets(&unworked, n), goals, robot.pos);
                    let v = robot_action_collab(&belief, &f, goals, robot.pos, config.robot_speed);
                    fmap = Some(f);
                    v
                };
                robot.pos = add_scaled(robot.pos, v, dt);
                path_length += norm(v) * dt;
                if robot.replan_armed
                    && dist(robot.pos, config.replan_center) < config.replan_radius
                {
                    robot.state = RobotState::Replanning;
                    robot.replan_armed = false;
                    replans += 1;
                } else if let Some(g) = unworked
                    .iter()
                    .copied()
                    .filter(|g| dist(robot.pos, goals[*g]) <= config.reach)
                    .min_by(|a, b| {
                        dist(goals[*a], robot.pos).total_cmp(&dist(goals[*b], robot.pos))
                    })
                {
                    robot.goal = Some(g);
                    if human_busy_at(g, &human) {
                        robot.state = RobotState::WaitingForSpace;
                    } else {
                        robot.state = RobotState::WorkingOnGoal;
                        robot.timer = config.t_work;
                    }
                }
            }
            RobotState::Replanning => {
                let v = approach(robot.pos, config.robot_home, config.robot_speed, dt);
                robot.pos = add_scaled(robot.pos, v, dt);
                path_length += norm(v) * dt;
                if dist(robot.pos, config.robot_home) == 0.0 {
                    robot.state = RobotState::MovingToGoal;
                }
            }
            RobotState::WaitingForSpace => {
                let g = robot.goal.expect("waiting robot has a goal");
                if !human_busy_at(g, &human) {
                    robot.state = RobotState::WorkingOnGoal;
                    robot.timer = config.t_work;
                }
            }
            RobotState::WorkingOnGoal => {
                robot.timer -= dt;
                if robot.timer <= done_eps {
                    let g = robot.goal.take().expect("working robot has a goal");
                    robot.worked[g] = true;
                    robot_order.push(g);
                    robot.replan_armed = true;
                    if robot.worked.iter().all(|w| *w) {
                        robot.state = RobotState::Done;
                    } else {
                        robot.state = RobotState::Resetting;
                        robot.timer = config.t_reset;
                    }
                }
            }
            RobotState::Resetting => {
                robot.timer -= dt;
                if robot.timer <= done_eps {
                    robot.state = RobotState::MovingToGoal;
                }
            }
            RobotState::Done => {}
        }

        // Clock.
        tick += 1;
        if human.state == HumanState::WaitingForSpace || robot.state == RobotState::WaitingForSpace
        {
            wait_time += dt;
        }
        if human.pos.iter().chain(&robot.pos).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                tick,
                what: "agent position",
            });
        }
        if matches!(
            human.state,
            HumanState::MovingToGoal | HumanState::WaitingForSpace | HumanState::WorkingOnGoal
        ) {
            wrong_goal_trace.push(belief.max_excluding(human.goal));
        }
        human_path.push(human.pos);
        robot_path.push(robot.pos);
        beliefs.push(belief.clone());
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRecord {
                tick,
                time: tick as f64 * dt,
                robot: robot.pos,
                robot_state: robot.state.name().into(),
                human: Some(human.pos),
                human_state: Some(human.state.name().into()),
                input: None,
                belief: belief.probs().to_vec(),
                goal_to_go: fmap,
            });
        }
    }

    let completed = finished(&human, &robot);
    let time = if completed {
        (tick as f64 * dt).min(config.collab_cap)
    } else {
        config.collab_cap
    };
    Ok(CollabOutcome {
        time,
        completed,
        ticks: tick,
        robot_occupancy: occupancy_grid(&robot_path, &config.collab_bounds),
        human_occupancy: occupancy_grid(&human_path, &config.collab_bounds),
        human_path,
        robot_path,
        max_wrong_goal: wrong_goal_trace.iter().copied().fold(0.0, f64::max),
        wrong_goal_trace,
        beliefs,
        min_goal_distance: scenario.min_goal_distance(),
        robot_path_length: path_length,
        wait_time,
        replans,
        robot_order,
    })
}
