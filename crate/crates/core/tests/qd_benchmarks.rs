use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sasgen_core::qd::{
    random_search_ask, ArchiveSpec, CmaEs, CmaMaeArchive, CmaMaeEmitter, CmaMaegaEmitter, Elite,
    GridArchive, Jacobian, MeasureAxis, QdError,
};

fn sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn cma_es_solves_nine_dimensional_sphere() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut es = CmaEs::new(x0, 1.0, 36).unwrap();
        let mut evals = 0;
        let mut best = f64::NEG_INFINITY;
        while evals < 20_000 && best <= -1e-6 {
            let xs = es.ask(&mut rng);
            let f: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
            evals += xs.len();
            best = f.iter().copied().fold(best, f64::max);
            es.tell(&f).unwrap();
        }
        assert!(
            best > -1e-6,
            "seed {seed}: best {best} after {evals} evaluations"
        );
    }
}

fn square_spec() -> ArchiveSpec {
    let axis = MeasureAxis {
        lo: -1.0,
        hi: 1.0,
        bins: 20,
    };
    ArchiveSpec::new(vec![axis, axis]).unwrap()
}

fn quadratic(x: &[f64]) -> Elite {
    Elite::new(x.to_vec(), 200.0 + sphere(x), vec![x[0], x[1]])
}

#[test]
fn cma_mae_fills_more_cells_than_random_search() {
    let budget = 2016;
    let bounds = vec![(-10.0, 10.0); 4];
    let mut wins = 0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random = GridArchive::new(square_spec());
        for x in random_search_ask(&bounds, budget, &mut rng) {
            random.add(quadratic(&x)).unwrap();
        }
        let mut archive = CmaMaeArchive::new(square_spec(), 0.1, 0.0).unwrap();
        let x0 = random_search_ask(&bounds, 1, &mut rng).remove(0);
        let mut em = CmaMaeEmitter::new(x0, 1.0, 36).unwrap();
        for _ in 0..budget / 36 {
            em.step(&mut archive, &mut rng, |xs: &[Vec<f64>]| {
                Ok::<_, QdError>(xs.iter().map(|x| quadratic(x)).collect())
            })
            .unwrap();
        }
        if archive.result().len() > random.len() {
            wins += 1;
        }
    }
    assert!(wins >= 2, "cma-mae won {wins} of 3 seeds");
}

/// Linear measures `(x0, x1)` and an objective linear in the remaining
/// coordinates, saturating outside [-1, 1] so improvement eventually stalls.
fn clipped_linear(x: &[f64]) -> (Elite, Jacobian) {
    let n = x.len();
    let c: Vec<f64> = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let inside = |i: usize| if x[i].abs() <= 1.0 { 1.0 } else { 0.0 };
    let f = 10.0 + 0.1 * c[2..].iter().sum::<f64>();
    let mut grad_f = vec![0.0; n];
    for i in 2..n {
        grad_f[i] = 0.1 * inside(i);
    }
    let mut g0 = vec![0.0; n];
    g0[0] = 1.0;
    let mut g1 = vec![0.0; n];
    g1[1] = 1.0;
    let elite = Elite::new(x.to_vec(), f, vec![x[0], x[1]]);
    let jac = Jacobian {
        objective: f,
        measures: elite.measures.clone(),
        grad_objective: grad_f,
        grad_measures: vec![g0, g1],
    };
    (elite, jac)
}

#[test]
fn gradient_arborescence_covers_linear_benchmark() {
    let spec = square_spec();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut archive = CmaMaeArchive::new(spec.clone(), 0.1, 0.0).unwrap();
        let mut em = CmaMaegaEmitter::new(vec![0.0; 8], 2, 0.5, 36).unwrap();
        let mut evals = 0;
        while evals < 10_000 {
            em.step(
                &mut archive,
                &mut rng,
                |x: &[f64]| Ok::<_, QdError>(clipped_linear(x)),
                |xs: &[Vec<f64>]| {
                    Ok::<_, QdError>(xs.iter().map(|x| clipped_linear(x).0).collect())
                },
            )
            .unwrap();
            evals += 37;
        }
        let filled = archive.result().len();
        assert!(
            filled as f64 >= 0.95 * spec.cells() as f64,
            "seed {seed}: filled {filled} of {}",
            spec.cells()
        );
    }
}
