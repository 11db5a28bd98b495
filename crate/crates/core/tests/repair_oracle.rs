mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sasgen_core::repair::{repair, RepairProblem};

use common::{grid_repair_cost, random_desk_problem};

const GRID: f64 = 0.005;

#[test]
fn matches_lattice_oracle_on_random_desks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // A lattice point within this distance of every continuous optimum exists.
    let delta = 2.0 * GRID * 2f64.sqrt();
    for n in 0..200 {
        let problem = random_desk_problem(&mut rng);
        let r = repair(&problem).unwrap();
        assert!(problem.is_valid(&r.positions, 1e-9), "instance {n} invalid");
        let grid = grid_repair_cost(&problem, GRID);
        assert!(
            r.cost <= grid + 1e-9,
            "instance {n}: {} > lattice {grid}",
            r.cost
        );
        let slack: f64 = r
            .positions
            .iter()
            .zip(&problem.objects)
            .map(|(p, o)| {
                let d = ((p[0] - o.position[0]).powi(2) + (p[1] - o.position[1]).powi(2)).sqrt();
                2.0 * d * delta + delta * delta
            })
            .sum();
        assert!(
            grid - r.cost <= slack + 1e-12,
            "instance {n}: lattice {grid} vs {}",
            r.cost
        );

        let again = repair(&RepairProblem {
            regions: problem.regions.clone(),
            objects: problem
                .objects
                .iter()
                .zip(&r.positions)
                .map(|(o, p)| sasgen_core::repair::PlacedObject { position: *p, ..*o })
                .collect(),
        })
        .unwrap();
        assert!(
            again.cost < 1e-16,
            "instance {n}: re-repair cost {}",
            again.cost
        );
    }
}
