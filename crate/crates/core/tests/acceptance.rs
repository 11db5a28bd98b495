//! End-to-end acceptance checks. Each test prints one PASS/FAIL line, written
//! straight to stderr so it shows up without `--nocapture`.

mod common;

use std::io::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sasgen_core::autodiff::relative_error;
use sasgen_core::pipeline::{run_experiment, Algorithm, ExperimentConfig, NoObserver, RunResult};
use sasgen_core::qd::{ArchiveSpec, CmaEs, CmaMaeArchive, Elite, GridArchive};
use sasgen_core::repair::{repair, PlacedObject, RepairProblem};
use sasgen_core::report::archive_csv;
use sasgen_core::sim::{soft_value_iteration, GridSpec, MdpParams, SimConfig, ACTIONS};
use sasgen_core::surrogate::{Surrogate, TrainConfig, TrainingSample};
use sasgen_core::Domain;

fn verdict(id: u32, name: &str, pass: bool, detail: &str, start: Instant) -> bool {
    let line = format!(
        "ACCEPTANCE {id:>2} {} {name}: {detail} ({:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    pass
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run(domain: Domain, algorithm: Algorithm, budget: usize, seed: u64) -> RunResult {
    let mut cfg = ExperimentConfig::new(domain, algorithm);
    cfg.budget = budget;
    cfg.seed = seed;
    run_experiment(&cfg, 1, &mut NoObserver).unwrap()
}

fn mean_qd(
    domain: Domain,
    algorithm: Algorithm,
    budget: usize,
    reg_weight: Option<f64>,
) -> Vec<f64> {
    (0..3)
        .map(|seed| {
            let mut cfg = ExperimentConfig::new(domain, algorithm);
            cfg.budget = budget;
            cfg.seed = seed;
            if let Some(w) = reg_weight {
                cfg.search.reg_weight = w;
            }
            run_experiment(&cfg, 1, &mut NoObserver).unwrap().qd_score()
        })
        .collect()
}

fn samples(domain: Domain, n: usize, seed: u64) -> Vec<TrainingSample> {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let e = domain
                .evaluate(&domain.sample(&mut rng), &cfg, i as u64)
                .unwrap();
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

#[test]
fn criterion_01_repair_matches_lattice_oracle() {
    let start = Instant::now();
    let grid = 0.005;
    let delta = 2.0 * grid * 2f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_gap, mut failures) = (0.0f64, Vec::new());
    for n in 0..200 {
        let problem = common::random_desk_problem(&mut rng);
        let r = repair(&problem).unwrap();
        let oracle = common::grid_repair_cost(&problem, grid);
        // The lattice holds a point within `delta` of each continuous optimum.
        let slack: f64 = r
            .positions
            .iter()
            .zip(&problem.objects)
            .map(|(p, o)| {
                let d = ((p[0] - o.position[0]).powi(2) + (p[1] - o.position[1]).powi(2)).sqrt();
                2.0 * d * delta + delta * delta
            })
            .sum();
        let again = repair(&RepairProblem {
            regions: problem.regions.clone(),
            objects: problem
                .objects
                .iter()
                .zip(&r.positions)
                .map(|(o, p)| PlacedObject { position: *p, ..*o })
                .collect(),
        })
        .unwrap();
        worst_gap = worst_gap.max(oracle - r.cost);
        if !problem.is_valid(&r.positions, 1e-9)
            || r.cost > oracle + 1e-9
            || oracle - r.cost > slack + 1e-12
            || again.cost > 1e-16
        {
            failures.push(n);
        }
    }
    let pass = failures.is_empty() && start.elapsed().as_secs() < 60;
    assert!(verdict(
        1,
        "repair exactness",
        pass,
        &format!("200 instances, failures {failures:?}, max lattice-minus-exact {worst_gap:.2e}"),
        start
    ));
}

#[test]
fn criterion_02_surrogate_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let (mut checked, mut excluded) = (0, 0);
    for (k, domain) in [Domain::Teleop, Domain::CollabI].into_iter().enumerate() {
        let mut model = Surrogate::new(domain, 40 + k as u64).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        model.train(&samples(domain, 128, 41), &cfg).unwrap();
        let bounds = domain.param_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(42 + k as u64);
        for _ in 0..25 {
            let theta = domain.sample(&mut rng);
            let jac = model.predict_with_grads(&theta).unwrap();
            let pattern = model.activation_pattern(&theta).unwrap();
            for (i, (lo, hi)) in bounds.iter().enumerate() {
                let h = 1e-5 * (hi - lo);
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[i] += h;
                dn[i] -= h;
                // A step that crosses a ReLU kink has no meaningful difference quotient.
                if model.activation_pattern(&up).unwrap() != pattern
                    || model.activation_pattern(&dn).unwrap() != pattern
                {
                    excluded += 1;
                    continue;
                }
                let (pu, pd) = (model.predict(&up).unwrap(), model.predict(&dn).unwrap());
                let fd = (pu.objective - pd.objective) / (2.0 * h);
                worst = worst.max(relative_error(jac.grad_objective[i], fd));
                for (j, g) in jac.grad_measures.iter().enumerate() {
                    let fd = (pu.measures[j] - pd.measures[j]) / (2.0 * h);
                    worst = worst.max(relative_error(g[i], fd));
                }
                checked += 1 + jac.grad_measures.len();
            }
        }
    }
    let pass = worst < 1e-4 && start.elapsed().as_secs() < 60;
    assert!(verdict(
        2,
        "surrogate gradient fidelity",
        pass,
        &format!(
            "50 inputs, {checked} partials, {excluded} coordinates excluded at kinks, \
             max relative error {worst:.2e} (< 1e-4)"
        ),
        start
    ));
}

#[test]
fn criterion_03_soft_value_iteration_matches_oracles() {
    let start = Instant::now();
    let g = GridSpec {
        origin: [0.0, 0.0],
        cell: 0.06,
        nx: 8,
        ny: 8,
    };
    let mut worst_q = 0.0f64;
    for (goal, obstacles) in [
        ((0, 0), vec![]),
        ((3, 4), vec![]),
        ((7, 2), vec![(5, 2), (6, 3)]),
    ] {
        let obs: Vec<usize> = obstacles.iter().map(|(x, y)| g.index(*x, *y)).collect();
        let q =
            soft_value_iteration(&g, g.index(goal.0, goal.1), &obs, &MdpParams::default()).unwrap();
        let oracle = common::oracle_soft_q(8, 8, goal, &obstacles, 0.001, 0.9999);
        for x in 0..8 {
            for y in 0..8 {
                if (x, y) == goal {
                    continue;
                }
                for (a, (dx, dy)) in ACTIONS.iter().enumerate() {
                    let ours = q.q[g.index(x, y)][a];
                    worst_q = match oracle[x][y][(dx + 1) as usize][(dy + 1) as usize] {
                        Some(o) => worst_q.max((ours - o).abs()),
                        None if ours == f64::NEG_INFINITY => worst_q,
                        None => f64::INFINITY,
                    };
                }
            }
        }
    }
    let mut worst_path = 0.0f64;
    for goal in [(0, 0), (5, 7)] {
        let q =
            soft_value_iteration(&g, g.index(goal.0, goal.1), &[], &MdpParams::default()).unwrap();
        let best = common::oracle_shortest_cost(8, 8, goal);
        for x in 0..8 {
            for y in 0..8 {
                let (mut s, mut cost, mut steps) = (g.index(x, y), 0.0, 0);
                while s != q.goal && steps <= 64 {
                    let a = q.greedy(s);
                    let t = g.step(s, a).unwrap();
                    cost += if t == q.goal {
                        -1.0
                    } else if a % 2 == 1 {
                        0.01 * 2f64.sqrt()
                    } else {
                        0.01
                    };
                    s = t;
                    steps += 1;
                }
                worst_path = worst_path.max((cost - best[x][y]).abs());
            }
        }
    }
    let pass = worst_q < 1e-6 && worst_path < 1e-9;
    assert!(verdict(
        3,
        "soft value iteration",
        pass,
        &format!("max |Q - oracle| {worst_q:.2e} (< 1e-6), greedy path cost gap {worst_path:.2e}"),
        start
    ));
}

#[test]
fn criterion_04_cma_es_maximizes_sphere() {
    let start = Instant::now();
    let mut results = Vec::new();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x0: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut es = CmaEs::new(x0, 0.5, 16).unwrap();
        let (mut evals, mut best) = (0, f64::NEG_INFINITY);
        while evals < 20_000 && best <= -1e-6 {
            let xs = es.ask(&mut rng);
            let f: Vec<f64> = xs
                .iter()
                .map(|x| -x.iter().map(|v| v * v).sum::<f64>())
                .collect();
            evals += xs.len();
            best = f.iter().copied().fold(best, f64::max);
            es.tell(&f).unwrap();
        }
        results.push((best, evals));
    }
    let pass = results.iter().all(|(b, e)| *b > -1e-6 && *e <= 20_000);
    let detail: Vec<String> = results
        .iter()
        .map(|(b, e)| format!("{b:.1e} after {e}"))
        .collect();
    assert!(verdict(
        4,
        "CMA-ES 9-D sphere",
        pass,
        &detail.join(", "),
        start
    ));
}

#[test]
fn criterion_05_archive_and_simulator_laws() {
    let start = Instant::now();
    let spec = ArchiveSpec::teleop();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut grid = GridArchive::new(spec.clone());
    let mut mae = CmaMaeArchive::new(spec.clone(), 1.0, 0.0).unwrap();
    let (mut monotone, mut last) = (true, 0.0);
    for i in 0..10_000 {
        let e = Elite::new(
            vec![i as f64],
            rng.random_range(0.0..10.0),
            vec![rng.random_range(-0.05..0.37), rng.random_range(-0.01..0.12)],
        );
        grid.add(e.clone()).unwrap();
        mae.add(e).unwrap();
        monotone &= grid.qd_score() >= last;
        last = grid.qd_score();
    }
    let cells = |a: &GridArchive| -> Vec<(usize, Elite)> {
        a.iter().map(|(i, e)| (i, e.clone())).collect()
    };
    let identical = cells(mae.result()) == cells(&grid) && cells(mae.soft()) == cells(&grid);

    let cfg = SimConfig::default();
    let mut sim_ok = true;
    let mut ticks = 0usize;
    for ep in 0..1000u64 {
        let domain = [
            Domain::Teleop,
            Domain::TeleopBlend,
            Domain::CollabI,
            Domain::CollabII,
        ][ep as usize % 4];
        let theta = domain.sample(&mut rng);
        let (fixed, _) = domain.repair(&theta).unwrap();
        let mut trace = Vec::new();
        let e = domain.simulate(&fixed, &cfg, ep, Some(&mut trace)).unwrap();
        for t in &trace {
            let sum: f64 = t.belief.iter().sum();
            sim_ok &= (sum - 1.0).abs() < 1e-9 && t.belief.iter().all(|b| *b >= 0.0);
        }
        ticks += trace.len();
        for g in std::iter::once(&e.robot_grid).chain(e.human_grid.as_ref()) {
            let sum: f64 = g.iter().sum();
            sim_ok &= (sum - 1.0).abs() < 1e-9 && g.iter().all(|v| *v >= 0.0);
        }
    }
    let pass = monotone && identical && sim_ok;
    assert!(verdict(
        5,
        "archive laws",
        pass,
        &format!(
            "QD monotone {monotone} over 10000 offers, alpha=1 equals MAP-Elites {identical}, \
             belief/occupancy invariants {sim_ok} over 1000 episodes ({ticks} ticks)"
        ),
        start
    ));
}

#[test]
fn criterion_06_teleop_ordering() {
    let start = Instant::now();
    let dsas = mean_qd(Domain::Teleop, Algorithm::Dsas, 2000, None);
    let me = mean_qd(Domain::Teleop, Algorithm::MapElites, 2000, None);
    let random = mean_qd(Domain::Teleop, Algorithm::Random, 2000, None);
    let (d, m, r) = (mean(&dsas), mean(&me), mean(&random));
    let pass = d > m && m > r && d >= 1.3 * r && start.elapsed().as_secs() < 3600;
    assert!(verdict(
        6,
        "teleop ordering DSAS > MAP-Elites > random, DSAS >= 1.3x random",
        pass,
        &format!(
            "mean QD at 2000 evals: DSAS {d:.1} {dsas:.1?}, MAP-Elites {m:.1} {me:.1?}, \
             random {r:.1} {random:.1?}, ratio {:.3}",
            d / r
        ),
        start
    ));
}

#[test]
fn criterion_07_collab_ordering() {
    let start = Instant::now();
    let sas = mean_qd(Domain::CollabI, Algorithm::Sas, 1000, None);
    let cma = mean_qd(Domain::CollabI, Algorithm::CmaMae, 1000, None);
    let random = mean_qd(Domain::CollabI, Algorithm::Random, 1000, None);
    let (s, c, r) = (mean(&sas), mean(&cma), mean(&random));
    let pass = s >= 1.2 * r && s > c && start.elapsed().as_secs() < 3 * 3600;
    assert!(verdict(
        7,
        "collab-I SAS >= 1.2x random and SAS > CMA-MAE",
        pass,
        &format!(
            "mean QD at 1000 evals: SAS {s:.1} {sas:.1?}, CMA-MAE {c:.1} {cma:.1?}, \
             random {r:.1} {random:.1?}, ratio {:.3}",
            s / r
        ),
        start
    ));
}

#[test]
fn criterion_08_regularization_helps_cma_mae() {
    let start = Instant::now();
    let reg = mean_qd(Domain::CollabI, Algorithm::CmaMae, 1000, None);
    let unreg = mean_qd(Domain::CollabI, Algorithm::CmaMae, 1000, Some(0.0));
    let (a, b) = (mean(&reg), mean(&unreg));
    assert!(verdict(
        8,
        "CMA-MAE regularized >= unregularized (collab-I)",
        a >= b,
        &format!("mean QD at 1000 evals: weight 100 {a:.1} {reg:.1?}, weight 0 {b:.1} {unreg:.1?}"),
        start
    ));
}

#[test]
fn criterion_09_surrogate_beats_mean_baseline() {
    let start = Instant::now();
    // The model from one run is scored on the dataset of another.
    let trained = run(Domain::Teleop, Algorithm::Sas, 1000, 0);
    let test = run(Domain::Teleop, Algorithm::Sas, 1000, 1).dataset;
    let model = trained.model.as_ref().unwrap();
    let metrics = model
        .evaluate_model(&test, &Domain::Teleop.archive_spec())
        .unwrap();
    let train_mean = mean(
        &trained
            .dataset
            .iter()
            .map(|s| s.objective)
            .collect::<Vec<_>>(),
    );
    let baseline = mean(
        &test
            .iter()
            .map(|s| (s.objective - train_mean).abs())
            .collect::<Vec<_>>(),
    );
    let mae = metrics.mae[0];
    let pass = mae <= 0.8 * baseline
        && metrics.cell_hit_rate.is_finite()
        && metrics.mean_manhattan.is_finite();
    assert!(verdict(
        9,
        "surrogate objective MAE >= 20% below mean baseline",
        pass,
        &format!(
            "held-out MAE {mae:.3} vs baseline {baseline:.3} ({:.0}% lower), measure MAE {:.4?}, \
             hit rate {:.3}, Manhattan {:.2}",
            100.0 * (1.0 - mae / baseline),
            &metrics.mae[1..],
            metrics.cell_hit_rate,
            metrics.mean_manhattan
        ),
        start
    ));
}

#[test]
fn criterion_10_runs_are_deterministic() {
    let start = Instant::now();
    let mut identical = true;
    let mut compared = Vec::new();
    for (domain, algorithm, budget) in [
        (Domain::Teleop, Algorithm::Dsas, 150),
        (Domain::CollabI, Algorithm::Sas, 150),
        (Domain::CollabII, Algorithm::CmaMae, 300),
        (Domain::Teleop, Algorithm::MapElites, 300),
        (Domain::CollabI, Algorithm::Random, 300),
    ] {
        let mut cfg = ExperimentConfig::new(domain, algorithm);
        cfg.budget = budget;
        cfg.seed = 11;
        cfg.search.exploit_iterations = 20;
        cfg.train.epochs = 10;
        let csvs: Vec<(String, String)> = [1, 3]
            .into_iter()
            .map(|workers| {
                let r = run_experiment(&cfg, workers, &mut NoObserver).unwrap();
                let n = domain.param_count();
                (
                    archive_csv(&r.final_archive, n),
                    archive_csv(&r.training_archive, n),
                )
            })
            .collect();
        identical &= csvs[0] == csvs[1];
        compared.push(format!("{algorithm}/{domain}"));
    }
    assert!(verdict(
        10,
        "determinism",
        identical,
        &format!(
            "byte-identical archive CSVs across reruns for {}",
            compared.join(", ")
        ),
        start
    ));
}
