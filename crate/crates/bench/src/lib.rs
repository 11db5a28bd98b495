//! Shared fixtures for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sasgen_core::sim::SimConfig;
use sasgen_core::surrogate::TrainingSample;
use sasgen_core::Domain;

/// `n` sampled scenario parameter vectors.
pub fn scenarios(domain: Domain, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| domain.sample(&mut rng)).collect()
}

/// Simulated training samples for surrogate benches.
pub fn training_set(domain: Domain, n: usize, seed: u64) -> Vec<TrainingSample> {
    let cfg = SimConfig::default();
    scenarios(domain, n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, theta)| {
            let e = domain
                .evaluate(&theta, &cfg, i as u64)
                .expect("sampled scenarios simulate");
            TrainingSample {
                theta: e.theta,
                objective: e.objective,
                measures: e.measures,
                robot_grid: e.robot_grid,
                human_grid: e.human_grid,
            }
        })
        .collect()
}
