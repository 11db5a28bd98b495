//! Grid archives and the quality-diversity search drivers built on them.

mod archive;
mod cma;
mod emitters;

use rand::Rng;
use thiserror::Error;

pub use archive::{
    AddStatus, ArchiveSpec, CmaMaeArchive, Elite, EliteMeta, GridArchive, MaeAdd, MeasureAxis,
};
pub use cma::CmaEs;
pub use emitters::{CmaMaeEmitter, CmaMaegaEmitter, GaussianEmitter, Jacobian};

#[derive(Debug, Error, PartialEq)]
pub enum QdError {
    #[error("invalid configuration: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} measures, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("measure is NaN")]
    NanMeasure,
    #[error("objective is NaN")]
    NanObjective,
}

/// Uniform samples from an axis-aligned box.
pub fn random_search_ask<R: Rng + ?Sized>(
    bounds: &[(f64, f64)],
    batch: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|_| {
            bounds
                .iter()
                .map(|(lo, hi)| {
                    if hi > lo {
                        rng.random_range(*lo..*hi)
                    } else {
                        *lo
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn elite(f: f64, m: [f64; 2]) -> Elite {
        Elite::new(vec![f, m[0], m[1]], f, m.to_vec())
    }

    #[test]
    fn cell_index_binning() {
        let spec = ArchiveSpec::teleop();
        assert_eq!(spec.cell_coords(&[0.0, 0.0]).unwrap(), vec![0, 0]);
        assert_eq!(spec.cell_coords(&[0.16, 0.0]).unwrap()[0], 12);
        assert_eq!(spec.cell_coords(&[0.40, 0.0]).unwrap()[0], 24);
        assert_eq!(spec.cell_coords(&[-1.0, 0.2]).unwrap(), vec![0, 99]);
        assert_eq!(spec.cell_index(&[f64::NAN, 0.0]), Err(QdError::NanMeasure));
        assert!(matches!(
            spec.cell_index(&[0.0]),
            Err(QdError::DimensionMismatch { .. })
        ));
        assert_eq!(spec.cells(), 2500);
        let idx = spec.cell_index(&[0.1, 0.05]).unwrap();
        assert_eq!(spec.flatten(&spec.unflatten(idx)), idx);
    }

    #[test]
    fn map_elites_addition_rules() {
        let mut a = GridArchive::new(ArchiveSpec::teleop());
        assert_eq!(a.add(elite(3.0, [0.1, 0.01])).unwrap(), AddStatus::Inserted);
        let mut b = GridArchive::new(ArchiveSpec::teleop());
        b.add(elite(5.0, [0.1, 0.01])).unwrap();
        assert_eq!(b.add(elite(4.0, [0.1, 0.01])).unwrap(), AddStatus::Rejected);
        assert_eq!(b.add(elite(5.0, [0.1, 0.01])).unwrap(), AddStatus::Rejected);
        assert_eq!(b.add(elite(6.0, [0.1, 0.01])).unwrap(), AddStatus::Replaced);
        assert_eq!(
            b.get(b.spec().cell_index(&[0.1, 0.01]).unwrap())
                .unwrap()
                .objective,
            6.0
        );
        assert_eq!(
            b.add(Elite::new(vec![], f64::NAN, vec![0.0, 0.0])),
            Err(QdError::NanObjective)
        );
    }

    #[test]
    fn qd_score_sums_objectives() {
        let mut a = GridArchive::new(ArchiveSpec::teleop());
        assert_eq!(a.qd_score(), 0.0);
        a.add(elite(5.0, [0.0, 0.0])).unwrap();
        a.add(elite(3.0, [0.3, 0.1])).unwrap();
        assert_eq!(a.qd_score(), 8.0);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn cma_mae_threshold_arithmetic() {
        let mut a = CmaMaeArchive::new(ArchiveSpec::teleop(), 0.1, 0.0).unwrap();
        let r = a.add(elite(10.0, [0.1, 0.01])).unwrap();
        assert!(r.accepted);
        assert_eq!(r.improvement, 10.0);
        let idx = a.spec().cell_index(&[0.1, 0.01]).unwrap();
        assert!((a.threshold(idx) - 1.0).abs() < 1e-15);

        let mut b = CmaMaeArchive::new(ArchiveSpec::teleop(), 0.1, 0.0).unwrap();
        b.add(elite(20.0, [0.1, 0.01])).unwrap(); // threshold 2
        let r = b.add(elite(1.0, [0.1, 0.01])).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.improvement, -1.0);
        assert_eq!(b.threshold(idx), 2.0);
        // The soft archive accepts a worse-than-incumbent solution above threshold.
        let r = b.add(elite(5.0, [0.1, 0.01])).unwrap();
        assert!(r.accepted);
        assert_eq!(r.result, AddStatus::Rejected);
        assert_eq!(b.soft().get(idx).unwrap().objective, 5.0);
        assert_eq!(b.result().get(idx).unwrap().objective, 20.0);
    }

    #[test]
    fn alpha_one_threshold_tracks_objective() {
        let mut a = CmaMaeArchive::new(ArchiveSpec::teleop(), 1.0, 0.0).unwrap();
        a.add(elite(7.0, [0.2, 0.05])).unwrap();
        let idx = a.spec().cell_index(&[0.2, 0.05]).unwrap();
        assert_eq!(a.threshold(idx), 7.0);
        assert!(CmaMaeArchive::new(ArchiveSpec::teleop(), 1.5, 0.0).is_err());
    }

    #[test]
    fn gaussian_emitter_bootstraps_and_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bounds = vec![(0.0, 1.0), (2.0, 3.0)];
        let em = GaussianEmitter {
            sigma: vec![0.0, 0.0],
            bounds: bounds.clone(),
            batch: 20,
        };
        let mut a = GridArchive::new(ArchiveSpec::teleop());
        for x in em.ask(&a, &mut rng) {
            assert!((0.0..1.0).contains(&x[0]) && (2.0..3.0).contains(&x[1]));
        }
        a.add(Elite::new(vec![0.5, 2.5], 1.0, vec![0.1, 0.01]))
            .unwrap();
        for x in em.ask(&a, &mut rng) {
            assert_eq!(x, vec![0.5, 2.5]);
        }
    }

    #[test]
    fn random_search_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(random_search_ask(&[(0.0, 1.0)], 0, &mut rng).is_empty());
        let bounds = [(0.0, 0.4), (0.2, 0.5), (-3.0, 5.0)];
        let xs = random_search_ask(&bounds, 10_000, &mut rng);
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            assert!(xs.iter().all(|x| x[d] >= *lo && x[d] < *hi));
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / 1e4;
            let se = (hi - lo) / 12f64.sqrt() / 100.0;
            assert!((mean - (lo + hi) / 2.0).abs() < 3.0 * se, "dim {d}: {mean}");
        }
    }

    fn jac(grad_f: Vec<f64>, grad_m: Vec<Vec<f64>>) -> Jacobian {
        Jacobian {
            objective: 0.0,
            measures: vec![0.0; grad_m.len()],
            grad_objective: grad_f,
            grad_measures: grad_m,
        }
    }

    #[test]
    fn zero_gradients_branch_to_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut em = CmaMaegaEmitter::new(vec![0.1, 0.2, 0.3], 2, 1.0, 8).unwrap();
        let branches = em
            .branch(&jac(vec![0.0; 3], vec![vec![0.0; 3]; 2]), &mut rng)
            .unwrap();
        assert!(branches.iter().all(|b| b == &vec![0.1, 0.2, 0.3]));
        let archive = CmaMaeArchive::new(ArchiveSpec::teleop(), 0.1, 0.0).unwrap();
        // One positive improvement avoids the restart; θ must not move.
        let mut deltas = vec![-1.0; 8];
        deltas[3] = 1.0;
        assert!(!em.tell(&deltas, &archive, &mut rng).unwrap());
        assert_eq!(em.theta(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn deterministic_coefficient_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut em =
            CmaMaegaEmitter::with_coefficient_mean(vec![0.0, 0.0], vec![1.0], 1e-14, 4).unwrap();
        let branches = em.branch(&jac(vec![1.0, 0.0], vec![]), &mut rng).unwrap();
        for b in branches {
            assert!((b[0] - 1.0).abs() < 1e-10 && b[1].abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_are_unit_normalized_and_c0_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut em = CmaMaegaEmitter::new(vec![0.0, 0.0], 0, 1.0, 16).unwrap();
        let branches = em.branch(&jac(vec![0.0, 250.0], vec![]), &mut rng).unwrap();
        for b in branches {
            assert_eq!(b[0], 0.0);
            assert!(b[1] >= 0.0);
        }
        assert!(em
            .branch(&jac(vec![f64::NAN, 0.0], vec![]), &mut rng)
            .is_none());
    }

    #[test]
    fn stalled_gradient_emitter_restarts_at_an_elite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut archive = CmaMaeArchive::new(ArchiveSpec::teleop(), 0.1, 0.0).unwrap();
        archive
            .add(Elite::new(vec![9.0, 9.0], 1.0, vec![0.1, 0.01]))
            .unwrap();
        let mut em = CmaMaegaEmitter::new(vec![0.0, 0.0], 1, 0.1, 4).unwrap();
        em.branch(&jac(vec![1.0, 0.0], vec![vec![0.0, 1.0]]), &mut rng)
            .unwrap();
        assert!(em.tell(&[-1.0; 4], &archive, &mut rng).unwrap());
        assert_eq!(em.theta(), &[9.0, 9.0]);
        assert_eq!(em.restarts(), 1);
    }
}
