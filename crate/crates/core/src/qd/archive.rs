use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QdError;

/// One measure axis: uniform bins over `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureAxis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSpec {
    pub axes: Vec<MeasureAxis>,
}

impl ArchiveSpec {
    pub fn new(axes: Vec<MeasureAxis>) -> Result<Self, QdError> {
        if axes.is_empty() {
            return Err(QdError::InvalidSpec("no measure axes".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if !(a.lo < a.hi) || a.bins == 0 {
                return Err(QdError::InvalidSpec(format!("axis {i}: {a:?}")));
            }
        }
        Ok(Self { axes })
    }

    /// Goal distance [0, 0.32] × 25 by waypoint variation [0, 0.112] × 100.
    pub fn teleop() -> Self {
        Self::two_axis((0.0, 0.32, 25), (0.0, 0.112, 100))
    }

    /// Minimum goal distance × maximum wrong-goal probability.
    pub fn collab_i() -> Self {
        Self::two_axis((0.05, 0.32, 27), (0.35, 1.0, 65))
    }

    /// Robot path length × total wait time.
    pub fn collab_ii() -> Self {
        Self::two_axis((1.0, 5.0, 20), (0.0, 5.0, 50))
    }

    fn two_axis(a: (f64, f64, usize), b: (f64, f64, usize)) -> Self {
        Self {
            axes: vec![
                MeasureAxis {
                    lo: a.0,
                    hi: a.1,
                    bins: a.2,
                },
                MeasureAxis {
                    lo: b.0,
                    hi: b.1,
                    bins: b.2,
                },
            ],
        }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    /// Per-axis bin indices; out-of-range measures clamp to the edge bins.
    pub fn cell_coords(&self, m: &[f64]) -> Result<Vec<usize>, QdError> {
        if m.len() != self.axes.len() {
            return Err(QdError::DimensionMismatch {
                expected: self.axes.len(),
                got: m.len(),
            });
        }
        m.iter()
            .zip(&self.axes)
            .map(|(v, a)| {
                if v.is_nan() {
                    return Err(QdError::NanMeasure);
                }
                let b = ((v - a.lo) / (a.hi - a.lo) * a.bins as f64).floor();
                Ok(b.clamp(0.0, (a.bins - 1) as f64) as usize)
            })
            .collect()
    }

    /// Row-major flat index (first axis slowest).
    pub fn cell_index(&self, m: &[f64]) -> Result<usize, QdError> {
        Ok(self.flatten(&self.cell_coords(m)?))
    }

    pub fn flatten(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (c, a)| acc * a.bins + c)
    }

    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = index % a.bins;
            index /= a.bins;
        }
        out
    }
}

/// Bookkeeping attached to an archived solution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EliteMeta {
    /// Ground-truth evaluation counter value, when the elite was simulated.
    pub eval_index: Option<u64>,
    /// Simulation seed, for replay.
    pub seed: Option<u64>,
    /// Repair displacement applied before evaluation.
    pub displacement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub measures: Vec<f64>,
    pub meta: EliteMeta,
}

impl Elite {
    pub fn new(theta: Vec<f64>, objective: f64, measures: Vec<f64>) -> Self {
        Self {
            theta,
            objective,
            measures,
            meta: EliteMeta::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddStatus {
    Inserted,
    Replaced,
    Rejected,
}

/// Elitist grid archive: each cell keeps the best objective ever offered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridArchive {
    spec: ArchiveSpec,
    cells: Vec<Option<Elite>>,
    occupied: usize,
}

impl GridArchive {
    pub fn new(spec: ArchiveSpec) -> Self {
        let cells = vec![None; spec.cells()];
        Self {
            spec,
            cells,
            occupied: 0,
        }
    }

    pub fn spec(&self) -> &ArchiveSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.occupied
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    pub fn get(&self, index: usize) -> Option<&Elite> {
        self.cells.get(index).and_then(Option::as_ref)
    }

    /// Occupied cells in index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Elite)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|e| (i, e)))
    }

    /// Inserts into an empty cell or replaces a strictly worse incumbent.
    pub fn add(&mut self, elite: Elite) -> Result<AddStatus, QdError> {
        if elite.objective.is_nan() {
            return Err(QdError::NanObjective);
        }
        let idx = self.spec.cell_index(&elite.measures)?;
        Ok(self.add_at(idx, elite))
    }

    fn add_at(&mut self, idx: usize, elite: Elite) -> AddStatus {
        match &self.cells[idx] {
            None => {
                self.cells[idx] = Some(elite);
                self.occupied += 1;
                AddStatus::Inserted
            }
            Some(cur) if elite.objective > cur.objective => {
                self.cells[idx] = Some(elite);
                AddStatus::Replaced
            }
            Some(_) => AddStatus::Rejected,
        }
    }

    /// Unconditionally stores `elite` in its cell.
    fn put(&mut self, idx: usize, elite: Elite) {
        if self.cells[idx].is_none() {
            self.occupied += 1;
        }
        self.cells[idx] = Some(elite);
    }

    /// Sum of objectives over occupied cells.
    pub fn qd_score(&self) -> f64 {
        self.iter().map(|(_, e)| e.objective).sum()
    }

    pub fn best(&self) -> Option<&Elite> {
        self.iter()
            .map(|(_, e)| e)
            .max_by(|a, b| a.objective.total_cmp(&b.objective))
    }

    pub fn sample_elite<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Elite> {
        if self.occupied == 0 {
            return None;
        }
        let k = rng.random_range(0..self.occupied);
        self.iter().nth(k).map(|(_, e)| e)
    }

    pub fn clear(&mut self) {
        self.cells.iter_mut().for_each(|c| *c = None);
        self.occupied = 0;
    }
}

/// Outcome of offering a solution to a [`CmaMaeArchive`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaeAdd {
    /// Objective minus the cell threshold before the offer.
    pub improvement: f64,
    pub accepted: bool,
    /// What happened in the companion elitist archive.
    pub result: AddStatus,
}

/// Soft archive with per-cell acceptance thresholds annealed at rate `alpha`,
/// plus an elitist companion archive holding the best solution per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaMaeArchive {
    soft: GridArchive,
    thresholds: Vec<f64>,
    alpha: f64,
    min_f: f64,
    result: GridArchive,
}

impl CmaMaeArchive {
    pub fn new(spec: ArchiveSpec, alpha: f64, min_f: f64) -> Result<Self, QdError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(QdError::InvalidSpec(format!(
                "alpha {alpha} outside [0, 1]"
            )));
        }
        Ok(Self {
            thresholds: vec![min_f; spec.cells()],
            soft: GridArchive::new(spec.clone()),
            result: GridArchive::new(spec),
            alpha,
            min_f,
        })
    }

    pub fn spec(&self) -> &ArchiveSpec {
        self.soft.spec()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn min_f(&self) -> f64 {
        self.min_f
    }

    pub fn soft(&self) -> &GridArchive {
        &self.soft
    }

    /// Best solution ever offered per cell.
    pub fn result(&self) -> &GridArchive {
        &self.result
    }

    pub fn threshold(&self, index: usize) -> f64 {
        self.thresholds[index]
    }

    pub fn add(&mut self, elite: Elite) -> Result<MaeAdd, QdError> {
        if elite.objective.is_nan() {
            return Err(QdError::NanObjective);
        }
        let idx = self.soft.spec.cell_index(&elite.measures)?;
        let t = self.thresholds[idx];
        let improvement = elite.objective - t;
        let accepted = elite.objective > t;
        if accepted {
            self.thresholds[idx] = (1.0 - self.alpha) * t + self.alpha * elite.objective;
            self.soft.put(idx, elite.clone());
        }
        let result = self.result.add_at(idx, elite);
        Ok(MaeAdd {
            improvement,
            accepted,
            result,
        })
    }

    pub fn clear(&mut self) {
        self.soft.clear();
        self.result.clear();
        self.thresholds.iter_mut().for_each(|t| *t = self.min_f);
    }
}
