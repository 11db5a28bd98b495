use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{random_search_ask, CmaEs, CmaMaeArchive, Elite, GridArchive, QdError};

/// MAP-Elites mutation: a uniformly chosen elite plus per-coordinate
/// Gaussian noise.
#[derive(Clone, Debug)]
pub struct GaussianEmitter {
    pub sigma: Vec<f64>,
    /// Sampling box used while the archive is empty.
    pub bounds: Vec<(f64, f64)>,
    pub batch: usize,
}

impl GaussianEmitter {
    pub fn ask<R: Rng + ?Sized>(&self, archive: &GridArchive, rng: &mut R) -> Vec<Vec<f64>> {
        if archive.is_empty() {
            return random_search_ask(&self.bounds, self.batch, rng);
        }
        (0..self.batch)
            .map(|_| {
                let parent = archive.sample_elite(rng).expect("archive is non-empty");
                parent
                    .theta
                    .iter()
                    .zip(&self.sigma)
                    .map(|(x, s)| {
                        if *s > 0.0 {
                            x + Normal::new(0.0, *s).expect("finite sigma").sample(rng)
                        } else {
                            *x
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// CMA-ES over scenario parameters, ranked by improvement over the soft
/// archive's thresholds.
#[derive(Clone, Debug)]
pub struct CmaMaeEmitter {
    cma: CmaEs,
    x0: Vec<f64>,
    sigma0: f64,
    batch: usize,
    restarts: u64,
}

impl CmaMaeEmitter {
    pub fn new(x0: Vec<f64>, sigma0: f64, batch: usize) -> Result<Self, QdError> {
        Ok(Self {
            cma: CmaEs::new(x0.clone(), sigma0, batch)?,
            x0,
            sigma0,
            batch,
            restarts: 0,
        })
    }

    pub fn cma(&self) -> &CmaEs {
        &self.cma
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        self.cma.ask(rng)
    }

    /// Feeds back the improvement of every asked candidate, in ask order.
    /// Restarts at a random soft-archive elite when nothing improved or the
    /// search distribution degenerated. Returns whether a restart happened.
    pub fn tell<R: Rng + ?Sized>(
        &mut self,
        improvements: &[f64],
        archive: &CmaMaeArchive,
        rng: &mut R,
    ) -> Result<bool, QdError> {
        self.cma.tell(improvements)?;
        let stalled = !improvements.iter().any(|d| *d > 0.0);
        if stalled || self.cma.should_restart() {
            let start = archive
                .soft()
                .sample_elite(rng)
                .map(|e| e.theta.clone())
                .unwrap_or_else(|| self.x0.clone());
            self.cma = CmaEs::new(start, self.sigma0, self.batch)?;
            self.restarts += 1;
            return Ok(true);
        }
        Ok(false)
    }

    /// One ask/evaluate/add/tell round. `evaluate` maps candidates to
    /// elites (which may carry repaired parameters). Returns how many
    /// offers the soft archive accepted.
    pub fn step<R, E, F>(
        &mut self,
        archive: &mut CmaMaeArchive,
        rng: &mut R,
        mut evaluate: F,
    ) -> Result<usize, E>
    where
        R: Rng + ?Sized,
        E: From<QdError>,
        F: FnMut(&[Vec<f64>]) -> Result<Vec<Elite>, E>,
    {
        let xs = self.ask(rng);
        let elites = evaluate(&xs)?;
        let mut deltas = Vec::with_capacity(elites.len());
        let mut accepted = 0;
        for e in elites {
            let r = archive.add(e)?;
            accepted += r.accepted as usize;
            deltas.push(r.improvement);
        }
        self.tell(&deltas, archive, rng)?;
        Ok(accepted)
    }
}

/// Objective/measure values and gradients at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub objective: f64,
    pub measures: Vec<f64>,
    pub grad_objective: Vec<f64>,
    pub grad_measures: Vec<Vec<f64>>,
}

/// Gradient arborescence: branches from a search point along objective and
/// measure gradients with CMA-ES-sampled coefficients.
#[derive(Clone, Debug)]
pub struct CmaMaegaEmitter {
    theta: Vec<f64>,
    theta0: Vec<f64>,
    coeff: CmaEs,
    coeff_mean: Vec<f64>,
    sigma0: f64,
    batch: usize,
    directions: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    restarts: u64,
}

impl CmaMaegaEmitter {
    /// `measures` is the number of measure gradients k; coefficients live in
    /// k + 1 dimensions with mean zero.
    pub fn new(
        theta0: Vec<f64>,
        measures: usize,
        sigma0: f64,
        batch: usize,
    ) -> Result<Self, QdError> {
        Self::with_coefficient_mean(theta0, vec![0.0; measures + 1], sigma0, batch)
    }

    pub fn with_coefficient_mean(
        theta0: Vec<f64>,
        coeff_mean: Vec<f64>,
        sigma0: f64,
        batch: usize,
    ) -> Result<Self, QdError> {
        Ok(Self {
            theta: theta0.clone(),
            theta0,
            coeff: CmaEs::new(coeff_mean.clone(), sigma0, batch)?,
            coeff_mean,
            sigma0,
            batch,
            directions: Vec::new(),
            coefficients: Vec::new(),
            restarts: 0,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Branch points `θ + c₀∇f̂ + Σⱼ cⱼ∇m̂ⱼ` over unit-normalized gradients,
    /// with `c₀` made nonnegative. Returns `None` for non-finite gradients.
    pub fn branch<R: Rng + ?Sized>(
        &mut self,
        jac: &Jacobian,
        rng: &mut R,
    ) -> Option<Vec<Vec<f64>>> {
        let n = self.theta.len();
        let mut dirs = Vec::with_capacity(1 + jac.grad_measures.len());
        for g in std::iter::once(&jac.grad_objective).chain(&jac.grad_measures) {
            if g.len() != n || g.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            dirs.push(if norm > 0.0 {
                g.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; n]
            });
        }
        let mut coeffs = self.coeff.ask(rng);
        for c in &mut coeffs {
            c[0] = c[0].abs();
        }
        let branches = coeffs
            .iter()
            .map(|c| {
                let mut x = self.theta.clone();
                for (cj, d) in c.iter().zip(&dirs) {
                    for (xi, di) in x.iter_mut().zip(d) {
                        *xi += cj * di;
                    }
                }
                x
            })
            .collect();
        self.directions = dirs;
        self.coefficients = coeffs;
        Some(branches)
    }

    /// Ranks the last branches by improvement, updates the coefficient
    /// distribution and moves θ by the weighted mean step of the better half.
    /// Restarts when no branch improved. Returns whether a restart happened.
    pub fn tell<R: Rng + ?Sized>(
        &mut self,
        improvements: &[f64],
        archive: &CmaMaeArchive,
        rng: &mut R,
    ) -> Result<bool, QdError> {
        if improvements.len() != self.coefficients.len() || self.coefficients.is_empty() {
            return Err(QdError::InvalidSpec(format!(
                "tell expects {} improvements, got {}",
                self.coefficients.len(),
                improvements.len()
            )));
        }
        let mut order: Vec<usize> = (0..improvements.len()).collect();
        order.sort_by(|a, b| improvements[*b].total_cmp(&improvements[*a]));
        let ranked: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| self.coefficients[i].clone())
            .collect();
        let sorted: Vec<f64> = order.iter().map(|&i| improvements[i]).collect();
        self.coeff.update(&ranked, &sorted);

        let mut step = vec![0.0; self.theta.len()];
        for (w, c) in self.coeff.weights().iter().zip(&ranked) {
            for (cj, d) in c.iter().zip(&self.directions) {
                for (s, di) in step.iter_mut().zip(d) {
                    *s += w * cj * di;
                }
            }
        }
        for (t, s) in self.theta.iter_mut().zip(&step) {
            *t += s;
        }
        self.coefficients.clear();
        let stalled = !improvements.iter().any(|d| *d > 0.0);
        if stalled || self.coeff.should_restart() || self.theta.iter().any(|v| !v.is_finite()) {
            self.restart(archive, rng)?;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn restart<R: Rng + ?Sized>(
        &mut self,
        archive: &CmaMaeArchive,
        rng: &mut R,
    ) -> Result<(), QdError> {
        self.theta = archive
            .soft()
            .sample_elite(rng)
            .map(|e| e.theta.clone())
            .unwrap_or_else(|| self.theta0.clone());
        self.coeff = CmaEs::new(self.coeff_mean.clone(), self.sigma0, self.batch)?;
        self.coefficients.clear();
        self.restarts += 1;
        Ok(())
    }

    /// One iteration: evaluate θ with gradients and offer it, branch, offer
    /// every branch, then update. Returns the number of accepted offers.
    pub fn step<R, E, G, F>(
        &mut self,
        archive: &mut CmaMaeArchive,
        rng: &mut R,
        mut jacobian: G,
        mut evaluate: F,
    ) -> Result<usize, E>
    where
        R: Rng + ?Sized,
        E: From<QdError>,
        G: FnMut(&[f64]) -> Result<(Elite, Jacobian), E>,
        F: FnMut(&[Vec<f64>]) -> Result<Vec<Elite>, E>,
    {
        let (center, jac) = jacobian(&self.theta)?;
        let mut accepted = archive.add(center)?.accepted as usize;
        let Some(branches) = self.branch(&jac, rng) else {
            self.restart(archive, rng)?;
            return Ok(accepted);
        };
        let elites = evaluate(&branches)?;
        let mut deltas = Vec::with_capacity(elites.len());
        for e in elites {
            let r = archive.add(e)?;
            accepted += r.accepted as usize;
            deltas.push(r.improvement);
        }
        self.tell(&deltas, archive, rng)?;
        Ok(accepted)
    }
}
