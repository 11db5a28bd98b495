//! Scenario domains: parameter layout, bounds, repair, sampling and
//! ground-truth evaluation for each experiment setting.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qd::ArchiveSpec;
use crate::repair::{
    clamp_to_bounds, repair, repair_teleop, PlacedObject, Region, RepairError, RepairProblem,
    DEFAULT_HALF_SIDE,
};
use crate::sim::{
    simulate_collab_traced, simulate_teleop_traced, CollabScenario, SimConfig, SimError,
    TeleopScenario, TeleopVariant, TraceRecord, NOISE_CAP,
};

/// Region that holds both teleoperation goals.
pub const TELEOP_WORKSPACE: Region = Region {
    x_min: 0.0,
    x_max: 0.4,
    y_min: 0.2,
    y_max: 0.5,
};

/// The two tabletop regions of the collaboration domains (goal centers).
pub const COLLAB_REGIONS: [Region; 2] = [
    Region {
        x_min: 0.0,
        x_max: 0.4,
        y_min: 0.0,
        y_max: 0.4,
    },
    Region {
        x_min: 0.6,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 0.4,
    },
];

/// Human inverse temperature is searched in units of 1000.
pub const HUMAN_BETA_SCALE: f64 = 1000.0;
pub const HUMAN_BETA_RANGE: (f64, f64) = (0.5, 5.0);
pub const SPEED_MULTIPLIER_RANGE: (f64, f64) = (0.8, 1.5);

const COLLAB_GOALS: usize = 3;
const OVERLAP_TRIES: usize = 100;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("expected {expected} scenario parameters, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite scenario parameter at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "teleop")]
    Teleop,
    #[serde(rename = "teleop-blend")]
    TeleopBlend,
    #[serde(rename = "collab-I")]
    CollabI,
    #[serde(rename = "collab-II")]
    CollabII,
    #[serde(rename = "collab-I-human-search")]
    CollabIHumanSearch,
    #[serde(rename = "collab-I-success")]
    CollabISuccess,
}

/// Ground-truth result of one repaired, simulated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Repaired parameters that were simulated.
    pub theta: Vec<f64>,
    pub displacement: f64,
    pub objective: f64,
    pub measures: Vec<f64>,
    pub robot_grid: Vec<f64>,
    pub human_grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Teleop,
        Domain::TeleopBlend,
        Domain::CollabI,
        Domain::CollabII,
        Domain::CollabIHumanSearch,
        Domain::CollabISuccess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Teleop => "teleop",
            Domain::TeleopBlend => "teleop-blend",
            Domain::CollabI => "collab-I",
            Domain::CollabII => "collab-II",
            Domain::CollabIHumanSearch => "collab-I-human-search",
            Domain::CollabISuccess => "collab-I-success",
        }
    }

    pub fn is_teleop(self) -> bool {
        matches!(self, Domain::Teleop | Domain::TeleopBlend)
    }

    pub fn param_count(self) -> usize {
        match self {
            Domain::Teleop | Domain::TeleopBlend => 9,
            Domain::CollabIHumanSearch => 2 * COLLAB_GOALS + 2,
            _ => 2 * COLLAB_GOALS,
        }
    }

    /// Occupancy channels: robot only for teleoperation, robot and human otherwise.
    pub fn grid_channels(self) -> usize {
        if self.is_teleop() {
            1
        } else {
            2
        }
    }

    pub fn measure_count(self) -> usize {
        2
    }

    pub fn archive_spec(self) -> ArchiveSpec {
        match self {
            Domain::Teleop | Domain::TeleopBlend => ArchiveSpec::teleop(),
            Domain::CollabII => ArchiveSpec::collab_ii(),
            _ => ArchiveSpec::collab_i(),
        }
    }

    /// Range of the objective, used for heatmap colors.
    pub fn objective_range(self, config: &SimConfig) -> (f64, f64) {
        match self {
            Domain::Teleop => (0.0, config.teleop_cap),
            Domain::TeleopBlend => (0.0, config.blend_cap),
            _ => (0.0, config.collab_cap),
        }
    }

    pub fn measure_names(self) -> [&'static str; 2] {
        match self {
            Domain::Teleop | Domain::TeleopBlend => ["goal_distance", "variation"],
            Domain::CollabII => ["robot_path_length", "wait_time"],
            _ => ["min_goal_distance", "max_wrong_goal_probability"],
        }
    }

    /// Box of valid parameters; used for uniform sampling and as the
    /// empty-archive fallback.
    pub fn param_bounds(self) -> Vec<(f64, f64)> {
        let w = TELEOP_WORKSPACE;
        match self {
            Domain::Teleop | Domain::TeleopBlend => {
                let mut b = vec![(w.x_min, w.x_max), (w.y_min, w.y_max)];
                b.extend_from_within(..);
                b.extend([(0.0, NOISE_CAP); 5]);
                b
            }
            _ => {
                let x = (COLLAB_REGIONS[0].x_min, COLLAB_REGIONS[1].x_max);
                let y = (COLLAB_REGIONS[0].y_min, COLLAB_REGIONS[0].y_max);
                let mut b = [x, y].repeat(COLLAB_GOALS);
                if self == Domain::CollabIHumanSearch {
                    b.extend([HUMAN_BETA_RANGE, SPEED_MULTIPLIER_RANGE]);
                }
                b
            }
        }
    }

    /// Per-coordinate mutation scale of the MAP-Elites emitter.
    pub fn mutation_sigma(self) -> Vec<f64> {
        if self.is_teleop() {
            let mut s = vec![0.01; 4];
            s.extend([0.005; 5]);
            s
        } else {
            vec![0.1; self.param_count()]
        }
    }

    /// Initial step size of the CMA-ES based emitters.
    pub fn sigma0(self) -> f64 {
        if self.is_teleop() {
            0.01
        } else {
            1.0
        }
    }

    fn check(self, theta: &[f64]) -> Result<(), DomainError> {
        if theta.len() != self.param_count() {
            return Err(DomainError::WrongLength {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite(i));
        }
        Ok(())
    }

    /// Nearest valid scenario and the displacement it took to get there.
    pub fn repair(self, theta: &[f64]) -> Result<(Vec<f64>, f64), DomainError> {
        self.check(theta)?;
        if self.is_teleop() {
            return Ok(repair_teleop(theta, &TELEOP_WORKSPACE, NOISE_CAP));
        }
        let problem = RepairProblem {
            regions: COLLAB_REGIONS.to_vec(),
            objects: (0..COLLAB_GOALS)
                .map(|i| PlacedObject {
                    position: [theta[2 * i], theta[2 * i + 1]],
                    half_side: DEFAULT_HALF_SIDE,
                })
                .collect(),
        };
        let fixed = repair(&problem)?;
        let mut out: Vec<f64> = fixed.positions.iter().flatten().copied().collect();
        let mut displacement = fixed.displacement;
        if self == Domain::CollabIHumanSearch {
            let (human, moved) = clamp_to_bounds(
                &theta[2 * COLLAB_GOALS..],
                &[HUMAN_BETA_RANGE, SPEED_MULTIPLIER_RANGE],
            );
            out.extend(human);
            displacement += moved;
        }
        Ok((out, displacement))
    }

    /// Uniform sample of a scenario. Collaboration goals pick a region
    /// uniformly, then a position uniformly inside it, redrawing on overlap
    /// up to a fixed number of tries; a remaining overlap is left for repair.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        if self.is_teleop() {
            return self
                .param_bounds()
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
        }
        let mut goals: Vec<[f64; 2]> = Vec::with_capacity(COLLAB_GOALS);
        for _ in 0..COLLAB_GOALS {
            let mut p = [0.0; 2];
            for _ in 0..OVERLAP_TRIES {
                let r = &COLLAB_REGIONS[rng.random_range(0..COLLAB_REGIONS.len())];
                p = [
                    rng.random_range(r.x_min..r.x_max),
                    rng.random_range(r.y_min..r.y_max),
                ];
                let gap = 2.0 * DEFAULT_HALF_SIDE;
                if goals
                    .iter()
                    .all(|q| (p[0] - q[0]).abs() >= gap || (p[1] - q[1]).abs() >= gap)
                {
                    break;
                }
            }
            goals.push(p);
        }
        let mut theta: Vec<f64> = goals.into_iter().flatten().collect();
        if self == Domain::CollabIHumanSearch {
            theta.push(rng.random_range(HUMAN_BETA_RANGE.0..HUMAN_BETA_RANGE.1));
            theta.push(rng.random_range(SPEED_MULTIPLIER_RANGE.0..SPEED_MULTIPLIER_RANGE.1));
        }
        theta
    }

    /// Repairs and simulates `theta`.
    pub fn evaluate(
        self,
        theta: &[f64],
        config: &SimConfig,
        seed: u64,
    ) -> Result<Evaluation, DomainError> {
        let (fixed, displacement) = self.repair(theta)?;
        let mut out = self.simulate(&fixed, config, seed, None)?;
        out.displacement = displacement;
        Ok(out)
    }

    /// Simulates an already valid scenario, optionally recording a per-tick trace.
    pub fn simulate(
        self,
        theta: &[f64],
        config: &SimConfig,
        seed: u64,
        trace: Option<&mut Vec<TraceRecord>>,
    ) -> Result<Evaluation, DomainError> {
        self.check(theta)?;
        if self.is_teleop() {
            let variant = if self == Domain::Teleop {
                TeleopVariant::Shared
            } else {
                TeleopVariant::Blend
            };
            let scenario = TeleopScenario::from_theta(theta)?;
            let out = simulate_teleop_traced(&scenario, variant, config, trace)?;
            return Ok(Evaluation {
                theta: theta.to_vec(),
                displacement: 0.0,
                objective: out.time,
                measures: vec![out.goal_distance, out.variation],
                robot_grid: out.occupancy,
                human_grid: None,
                seed,
            });
        }
        let mut scenario = CollabScenario::new(
            theta[..2 * COLLAB_GOALS]
                .chunks(2)
                .map(|c| [c[0], c[1]])
                .collect(),
        );
        if self == Domain::CollabIHumanSearch {
            scenario.human_beta = Some(theta[2 * COLLAB_GOALS] * HUMAN_BETA_SCALE);
            scenario.speed_multiplier = theta[2 * COLLAB_GOALS + 1];
        }
        let out = simulate_collab_traced(&scenario, config, seed, trace)?;
        let measures = match self {
            Domain::CollabII => vec![out.robot_path_length, out.wait_time],
            _ => vec![out.min_goal_distance, out.max_wrong_goal],
        };
        let objective = match self {
            Domain::CollabISuccess => config.collab_cap - out.time,
            _ => out.time,
        };
        Ok(Evaluation {
            theta: theta.to_vec(),
            displacement: 0.0,
            objective,
            measures,
            robot_grid: out.robot_occupancy,
            human_grid: Some(out.human_occupancy),
            seed,
        })
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Domain::ALL.iter().map(|d| d.name()).collect();
                format!(
                    "unknown domain `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Independent 64-bit seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ stream.rotate_left(32));
    rng.set_stream(index);
    rng.next_u64()
}
