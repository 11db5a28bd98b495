//! Minimum-edit repair of scenario object placements.
//!
//! Collaboration scenarios are repaired by exhaustively enumerating the
//! binary choices of the placement program (which region holds each object,
//! which side separates each pair) and solving the convex QP that remains for
//! each choice exactly. Teleoperation scenarios only need box clamping.

mod qp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qp::{project, Constraint};

/// Default half-side of a goal object's square footprint, meters.
pub const DEFAULT_HALF_SIDE: f64 = 0.03;
/// Default discount per meter of repair displacement, seconds per meter.
pub const DEFAULT_REG_WEIGHT: f64 = 100.0;

const MAX_OBJECTS: usize = 4;
const MAX_REGIONS: usize = 4;
const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RepairError {
    #[error("problem too large: {objects} objects, {regions} regions (limit {MAX_OBJECTS} each)")]
    TooLarge { objects: usize, regions: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("no assignment is feasible")]
    Infeasible,
}

/// Axis-aligned rectangle, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x_min - tol
            && p[0] <= self.x_max + tol
            && p[1] >= self.y_min - tol
            && p[1] <= self.y_max + tol
    }

    pub fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(self.x_min, self.x_max),
            p[1].clamp(self.y_min, self.y_max),
        ]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub position: [f64; 2],
    pub half_side: f64,
}

/// Objects whose centers must lie in one of the regions and whose square
/// footprints must not overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairProblem {
    pub regions: Vec<Region>,
    pub objects: Vec<PlacedObject>,
}

/// Which way object `i` is kept clear of object `j` (for a pair `i < j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `i` entirely left of `j`.
    Left,
    Right,
    /// `i` entirely below `j`.
    Down,
    Up,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Down, Side::Up];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Region index per object.
    pub regions: Vec<usize>,
    /// Separation side per pair, pairs ordered (0,1), (0,2), .., (1,2), ..
    pub sides: Vec<Side>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairResult {
    pub positions: Vec<[f64; 2]>,
    /// Squared-edit cost Σ‖pᵢ − p'ᵢ‖².
    pub cost: f64,
    /// Σ‖pᵢ − p'ᵢ‖.
    pub displacement: f64,
    pub assignment: Assignment,
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

impl RepairProblem {
    pub fn validate(&self) -> Result<(), RepairError> {
        if self.objects.len() > MAX_OBJECTS || self.regions.len() > MAX_REGIONS {
            return Err(RepairError::TooLarge {
                objects: self.objects.len(),
                regions: self.regions.len(),
            });
        }
        if self.regions.is_empty() {
            return Err(RepairError::Invalid("no regions".into()));
        }
        for r in &self.regions {
            if !(r.x_min < r.x_max && r.y_min < r.y_max) {
                return Err(RepairError::Invalid(format!("degenerate region {r:?}")));
            }
        }
        for o in &self.objects {
            if !(o.half_side > 0.0) || !o.position.iter().all(|v| v.is_finite()) {
                return Err(RepairError::Invalid(format!("bad object {o:?}")));
            }
        }
        Ok(())
    }

    /// True when every constraint holds within `tol`.
    pub fn is_valid(&self, positions: &[[f64; 2]], tol: f64) -> bool {
        positions
            .iter()
            .all(|p| self.regions.iter().any(|r| r.contains(*p, tol)))
            && pairs(positions.len()).all(|(i, j)| {
                let gap = self.objects[i].half_side + self.objects[j].half_side;
                (positions[i][0] - positions[j][0]).abs() >= gap - tol
                    || (positions[i][1] - positions[j][1]).abs() >= gap - tol
            })
    }
}

/// Every region choice per object crossed with every side choice per pair.
/// Order: regions vary slowest (object 0 first), then pair sides.
pub fn enumerate_assignments(problem: &RepairProblem) -> Result<Vec<Assignment>, RepairError> {
    problem.validate()?;
    let n = problem.objects.len();
    let npairs = n * n.saturating_sub(1) / 2;
    let nreg = problem.regions.len();
    let region_combos = nreg.pow(n as u32);
    let side_combos = 4usize.pow(npairs as u32);
    let mut out = Vec::with_capacity(region_combos * side_combos);
    for rc in 0..region_combos {
        let mut regions = vec![0; n];
        let mut code = rc;
        for slot in regions.iter_mut().rev() {
            *slot = code % nreg;
            code /= nreg;
        }
        for sc in 0..side_combos {
            let mut sides = vec![Side::Left; npairs];
            let mut code = sc;
            for slot in sides.iter_mut().rev() {
                *slot = Side::ALL[code % 4];
                code /= 4;
            }
            out.push(Assignment {
                regions: regions.clone(),
                sides,
            });
        }
    }
    Ok(out)
}

/// Solves the placement QP with all binaries fixed. Returns `None` when the
/// fixed choice admits no placement.
pub fn solve_fixed(
    problem: &RepairProblem,
    assignment: &Assignment,
) -> Result<Option<(Vec<[f64; 2]>, f64)>, RepairError> {
    problem.validate()?;
    let n = problem.objects.len();
    if assignment.regions.len() != n
        || assignment.sides.len() != n * n.saturating_sub(1) / 2
        || assignment
            .regions
            .iter()
            .any(|r| *r >= problem.regions.len())
    {
        return Err(RepairError::Invalid(
            "assignment does not match problem".into(),
        ));
    }
    let dim = 2 * n;
    let unit = |k: usize, sign: f64| {
        let mut v = vec![0.0; dim];
        v[k] = sign;
        v
    };
    let mut cons = Vec::new();
    for (i, r) in assignment.regions.iter().enumerate() {
        let r = &problem.regions[*r];
        cons.push(Constraint {
            normal: unit(2 * i, 1.0),
            rhs: r.x_min,
        });
        cons.push(Constraint {
            normal: unit(2 * i, -1.0),
            rhs: -r.x_max,
        });
        cons.push(Constraint {
            normal: unit(2 * i + 1, 1.0),
            rhs: r.y_min,
        });
        cons.push(Constraint {
            normal: unit(2 * i + 1, -1.0),
            rhs: -r.y_max,
        });
    }
    for ((i, j), side) in pairs(n).zip(&assignment.sides) {
        let gap = problem.objects[i].half_side + problem.objects[j].half_side;
        // (axis, sign): sign * (coord_j - coord_i) >= gap
        let (axis, sign) = match side {
            Side::Left => (0, 1.0),
            Side::Right => (0, -1.0),
            Side::Down => (1, 1.0),
            Side::Up => (1, -1.0),
        };
        let mut normal = vec![0.0; dim];
        normal[2 * j + axis] = sign;
        normal[2 * i + axis] = -sign;
        cons.push(Constraint { normal, rhs: gap });
    }
    let x0: Vec<f64> = problem.objects.iter().flat_map(|o| o.position).collect();
    let Some(mut x) = project(&x0, &cons) else {
        return Ok(None);
    };
    // Far-away inputs lose absolute precision to cancellation. Projecting the
    // nearly feasible answer again works with O(1) numbers.
    let violated = cons
        .iter()
        .any(|c| c.normal.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() < c.rhs);
    if violated {
        x = project(&x, &cons).unwrap_or(x);
    }
    let positions: Vec<[f64; 2]> = x.chunks(2).map(|c| [c[0], c[1]]).collect();
    let cost = x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(Some((positions, cost)))
}

/// Minimum-cost valid placement. Equal costs keep the first assignment in
/// enumeration order.
pub fn repair(problem: &RepairProblem) -> Result<RepairResult, RepairError> {
    let originals: Vec<[f64; 2]> = problem.objects.iter().map(|o| o.position).collect();
    // Valid inputs are their own optimum; skip the search.
    problem.validate()?;
    if problem.is_valid(&originals, 0.0) {
        let assignment = identity_assignment(problem, &originals);
        return Ok(RepairResult {
            positions: originals,
            cost: 0.0,
            displacement: 0.0,
            assignment,
        });
    }
    let mut best: Option<(Vec<[f64; 2]>, f64, Assignment)> = None;
    for a in enumerate_assignments(problem)? {
        // Projecting each object onto its region alone bounds the cost from
        // below; skip choices that cannot beat the incumbent.
        if let Some(b) = &best {
            let bound: f64 = originals
                .iter()
                .zip(&a.regions)
                .map(|(p, r)| {
                    let c = problem.regions[*r].clamp(*p);
                    (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)
                })
                .sum();
            if bound > b.1 + 1e-12 {
                continue;
            }
        }
        if let Some((pos, cost)) = solve_fixed(problem, &a)? {
            if best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((pos, cost, a));
            }
        }
    }
    let (positions, cost, assignment) = best.ok_or(RepairError::Infeasible)?;
    let positions = snap_to_constraints(problem, &assignment, positions);
    debug_assert!(problem.is_valid(&positions, CONSTRAINT_TOL));
    let displacement = positions
        .iter()
        .zip(&originals)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    Ok(RepairResult {
        positions,
        cost,
        displacement,
        assignment,
    })
}

/// The first assignment that an already-valid placement satisfies.
fn identity_assignment(problem: &RepairProblem, positions: &[[f64; 2]]) -> Assignment {
    let regions = positions
        .iter()
        .map(|p| {
            problem
                .regions
                .iter()
                .position(|r| r.contains(*p, 0.0))
                .unwrap_or(0)
        })
        .collect();
    let sides = pairs(positions.len())
        .map(|(i, j)| {
            let gap = problem.objects[i].half_side + problem.objects[j].half_side;
            let (pi, pj) = (positions[i], positions[j]);
            if pj[0] - pi[0] >= gap {
                Side::Left
            } else if pi[0] - pj[0] >= gap {
                Side::Right
            } else if pj[1] - pi[1] >= gap {
                Side::Down
            } else {
                Side::Up
            }
        })
        .collect();
    Assignment { regions, sides }
}

/// Clamps region bounds exactly; removes last-bit rounding from the QP.
fn snap_to_constraints(
    problem: &RepairProblem,
    assignment: &Assignment,
    positions: Vec<[f64; 2]>,
) -> Vec<[f64; 2]> {
    positions
        .into_iter()
        .zip(&assignment.regions)
        .map(|(p, r)| problem.regions[*r].clamp(p))
        .collect()
}

/// Clamps values to per-coordinate bounds; returns the clamped vector and
/// the total absolute change.
pub fn clamp_to_bounds(values: &[f64], bounds: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut moved = 0.0;
    let out = values
        .iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| {
            let c = v.clamp(*lo, *hi);
            moved += (c - v).abs();
            c
        })
        .collect();
    (out, moved)
}

/// Clamps both teleoperation goals into `workspace` and the noise parameters
/// into `[0, noise_cap]`. θ layout: `[g1x, g1y, g2x, g2y, η₁..]`.
///
/// Displacement is the sum of goal Euclidean moves plus the absolute change of
/// each noise parameter.
pub fn repair_teleop(theta: &[f64], workspace: &Region, noise_cap: f64) -> (Vec<f64>, f64) {
    let mut out = theta.to_vec();
    let mut displacement = 0.0;
    for g in 0..2 {
        let p = [theta[2 * g], theta[2 * g + 1]];
        let c = workspace.clamp(p);
        displacement += ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
        out[2 * g] = c[0];
        out[2 * g + 1] = c[1];
    }
    for v in out.iter_mut().skip(4) {
        let c = v.clamp(0.0, noise_cap);
        displacement += (c - *v).abs();
        *v = c;
    }
    (out, displacement)
}

/// Discounts a raw objective by the repair displacement.
pub fn regularize(f_raw: f64, displacement: f64, weight: f64) -> f64 {
    f_raw - weight * displacement
}
