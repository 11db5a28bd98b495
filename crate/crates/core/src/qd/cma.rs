use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::QdError;

const EIGEN_FLOOR: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e14;
const FLAT_TOL: f64 = 1e-12;

/// Covariance matrix adaptation evolution strategy (maximizing).
///
/// Uses log-linear recombination weights over the better half, cumulative
/// step-size adaptation and rank-one plus rank-μ covariance updates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmaEs {
    dim: usize,
    lambda: usize,
    mean: Vec<f64>,
    sigma: f64,
    /// Row-major `dim × dim`.
    cov: Vec<f64>,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,
    generation: u64,
    /// Spread of the last told values was below `FLAT_TOL`.
    flat: bool,
    #[serde(skip)]
    eigen: Option<Eigen>,
    #[serde(skip)]
    pending: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct Eigen {
    basis: DMatrix<f64>,
    sqrt_vals: DVector<f64>,
}

impl CmaEs {
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize) -> Result<Self, QdError> {
        let dim = mean.len();
        if dim == 0 || lambda < 2 || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(QdError::InvalidSpec(format!(
                "cma-es needs dim > 0, lambda >= 2, sigma > 0 (got {dim}, {lambda}, {sigma})"
            )));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let n = dim as f64;
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = 1.0;
        }
        Ok(Self {
            dim,
            lambda,
            mean,
            sigma,
            cov,
            p_sigma: vec![0.0; dim],
            p_c: vec![0.0; dim],
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
            chi_n,
            generation: 0,
            flat: false,
            eigen: None,
            pending: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Recombination weights for the better half, descending.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.cov)
    }

    fn eigen(&mut self) -> &Eigen {
        if self.eigen.is_none() {
            let sym = SymmetricEigen::new(self.covariance());
            let mut vals = sym.eigenvalues;
            let mut repaired = false;
            for v in vals.iter_mut() {
                if !(*v >= EIGEN_FLOOR) {
                    *v = EIGEN_FLOOR;
                    repaired = true;
                }
            }
            if repaired {
                let basis = &sym.eigenvectors;
                let c = basis * DMatrix::from_diagonal(&vals) * basis.transpose();
                self.cov = (0..self.dim * self.dim)
                    .map(|k| {
                        let (i, j) = (k / self.dim, k % self.dim);
                        0.5 * (c[(i, j)] + c[(j, i)])
                    })
                    .collect();
            }
            self.eigen = Some(Eigen {
                basis: sym.eigenvectors,
                sqrt_vals: vals.map(f64::sqrt),
            });
        }
        self.eigen.as_ref().unwrap()
    }

    /// Draws `lambda` candidates `mean + σ·C^{1/2}·z`.
    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let (dim, lambda, sigma) = (self.dim, self.lambda, self.sigma);
        let mean = DVector::from_column_slice(&self.mean);
        let e = self.eigen().clone();
        let out: Vec<Vec<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &e.basis * z.component_mul(&e.sqrt_vals);
                (&mean + y * sigma).iter().copied().collect()
            })
            .collect();
        self.pending = out.clone();
        out
    }

    /// Updates the distribution from the last `ask` batch scored by `values`
    /// (higher is better). Equal values keep ask order.
    pub fn tell(&mut self, values: &[f64]) -> Result<(), QdError> {
        if values.len() != self.pending.len() || self.pending.is_empty() {
            return Err(QdError::InvalidSpec(format!(
                "tell expects {} values for the last ask, got {}",
                self.pending.len(),
                values.len()
            )));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
        let ranked: Vec<Vec<f64>> = order.iter().map(|&i| self.pending[i].clone()).collect();
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        self.pending.clear();
        self.update(&ranked, &sorted);
        Ok(())
    }

    /// Update from candidates already sorted best first, with their values in
    /// the same order; only the first μ candidates move the distribution.
    pub fn update(&mut self, ranked: &[Vec<f64>], values: &[f64]) {
        self.flat = values.len() >= 2 && (values[0] - values[values.len() - 1]).abs() < FLAT_TOL;
        let n = self.dim;
        let mu = self.weights.len().min(ranked.len());
        let old = DVector::from_column_slice(&self.mean);
        let ys: Vec<DVector<f64>> = ranked[..mu]
            .iter()
            .map(|x| (DVector::from_column_slice(x) - &old) / self.sigma)
            .collect();
        let mut yw = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&ys) {
            yw += y * *w;
        }
        let mean = &old + &yw * self.sigma;

        let e = self.eigen().clone();
        // C^{-1/2} yw
        let inv_sqrt = e.basis.transpose() * &yw;
        let inv_sqrt = &e.basis * inv_sqrt.component_div(&e.sqrt_vals);
        let ps = DVector::from_column_slice(&self.p_sigma) * (1.0 - self.c_sigma)
            + inv_sqrt * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        let gen = self.generation as f64 + 1.0;
        let h_sigma = ps.norm() / (1.0 - (1.0 - self.c_sigma).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        let pc = DVector::from_column_slice(&self.p_c) * (1.0 - self.c_c)
            + &yw * (h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let delta_h = (1.0 - h) * self.c_c * (2.0 - self.c_c);
        let mut c = self.covariance() * (1.0 - self.c1 - self.c_mu + self.c1 * delta_h);
        c += &pc * pc.transpose() * self.c1;
        for (w, y) in self.weights.iter().zip(&ys) {
            c += y * y.transpose() * (self.c_mu * w);
        }
        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps.norm() / self.chi_n - 1.0)).exp();
        self.cov = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                0.5 * (c[(i, j)] + c[(j, i)])
            })
            .collect();
        self.mean = mean.iter().copied().collect();
        self.p_sigma = ps.iter().copied().collect();
        self.p_c = pc.iter().copied().collect();
        self.eigen = None;
        self.generation += 1;
    }

    /// Stop conditions: non-finite state, collapsed or exploded step size, an
    /// ill-conditioned covariance, or a flat last generation.
    pub fn should_restart(&mut self) -> bool {
        if self.flat
            || !self.sigma.is_finite()
            || self.mean.iter().any(|v| !v.is_finite())
            || self.cov.iter().any(|v| !v.is_finite())
        {
            return true;
        }
        let sigma = self.sigma;
        let e = self.eigen();
        let max = e.sqrt_vals.max();
        let min = e.sqrt_vals.min();
        sigma * max < 1e-12 || sigma * max > 1e12 || (max / min).powi(2) > MAX_CONDITION
    }
}
