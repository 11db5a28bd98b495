//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use sasgen_core::repair::{PlacedObject, Region, RepairProblem};

/// Exact minimum squared-edit cost over placements restricted to the lattice
/// of spacing `h` (in absolute coordinates), found by branch and bound.
pub fn grid_repair_cost(problem: &RepairProblem, h: f64) -> f64 {
    let mut lattice: Vec<[f64; 2]> = Vec::new();
    for r in &problem.regions {
        let (i0, i1) = (
            (r.x_min / h - 1e-9).ceil() as i64,
            (r.x_max / h + 1e-9).floor() as i64,
        );
        let (j0, j1) = (
            (r.y_min / h - 1e-9).ceil() as i64,
            (r.y_max / h + 1e-9).floor() as i64,
        );
        for i in i0..=i1 {
            for j in j0..=j1 {
                lattice.push([i as f64 * h, j as f64 * h]);
            }
        }
    }
    lattice.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lattice.dedup();
    let ranked: Vec<Vec<(f64, [f64; 2])>> = problem
        .objects
        .iter()
        .map(|o| {
            let mut v: Vec<(f64, [f64; 2])> = lattice
                .iter()
                .map(|p| {
                    (
                        (p[0] - o.position[0]).powi(2) + (p[1] - o.position[1]).powi(2),
                        *p,
                    )
                })
                .collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            v
        })
        .collect();
    // Lower bound on the cost of objects k.. when placed independently.
    let mut tail = vec![0.0; ranked.len() + 1];
    for k in (0..ranked.len()).rev() {
        tail[k] = tail[k + 1] + ranked[k][0].0;
    }
    let mut best = f64::INFINITY;
    let mut chosen: Vec<[f64; 2]> = Vec::new();
    search(problem, &ranked, &tail, 0, 0.0, &mut chosen, &mut best);
    best
}

fn separated(problem: &RepairProblem, i: usize, p: [f64; 2], j: usize, q: [f64; 2]) -> bool {
    let gap = problem.objects[i].half_side + problem.objects[j].half_side - 1e-12;
    (p[0] - q[0]).abs() >= gap || (p[1] - q[1]).abs() >= gap
}

fn search(
    problem: &RepairProblem,
    ranked: &[Vec<(f64, [f64; 2])>],
    tail: &[f64],
    k: usize,
    cost: f64,
    chosen: &mut Vec<[f64; 2]>,
    best: &mut f64,
) {
    if k == ranked.len() {
        *best = best.min(cost);
        return;
    }
    for (c, p) in &ranked[k] {
        if cost + c + tail[k + 1] >= *best {
            break;
        }
        if chosen
            .iter()
            .enumerate()
            .all(|(i, q)| separated(problem, i, *q, k, *p))
        {
            chosen.push(*p);
            search(problem, ranked, tail, k + 1, cost + c, chosen, best);
            chosen.pop();
        }
    }
}

pub fn desk_regions() -> Vec<Region> {
    vec![
        Region::new(0.0, 0.4, 0.0, 0.4),
        Region::new(0.6, 1.0, 0.0, 0.4),
    ]
}

pub fn random_desk_problem(rng: &mut impl rand::Rng) -> RepairProblem {
    RepairProblem {
        regions: desk_regions(),
        objects: (0..3)
            .map(|_| PlacedObject {
                position: [rng.random_range(-0.1..1.1), rng.random_range(-0.1..0.5)],
                half_side: 0.03,
            })
            .collect(),
    }
}

/// Soft Bellman values on an `nx × ny` 8-connected grid, coded directly from
/// the definitions with in-place (Gauss-Seidel) sweeps. Returns Q indexed as
/// `[x][y][dx + 1][dy + 1]`; off-grid moves and the goal's own entries are
/// `None`.
pub fn oracle_soft_q(
    nx: usize,
    ny: usize,
    goal: (usize, usize),
    obstacles: &[(usize, usize)],
    tau: f64,
    gamma: f64,
) -> Vec<Vec<[[Option<f64>; 3]; 3]>> {
    let reward = |to: (usize, usize), diagonal: bool| -> f64 {
        if to == goal {
            1.0
        } else if obstacles.contains(&to) {
            -1.0
        } else if diagonal {
            -0.01 * 2f64.sqrt()
        } else {
            -0.01
        }
    };
    let moves = |x: usize, y: usize| -> Vec<(i64, i64, (usize, usize))> {
        let mut out = Vec::new();
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                if tx >= 0 && ty >= 0 && (tx as usize) < nx && (ty as usize) < ny {
                    out.push((dx, dy, (tx as usize, ty as usize)));
                }
            }
        }
        out
    };
    let mut v = vec![vec![0.0f64; ny]; nx];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for x in 0..nx {
            for y in 0..ny {
                if (x, y) == goal {
                    continue;
                }
                let qs: Vec<f64> = moves(x, y)
                    .into_iter()
                    .map(|(dx, dy, t)| reward(t, dx != 0 && dy != 0) + gamma * v[t.0][t.1])
                    .collect();
                // Scaled log-sum-exp: τ·ln Σ exp(q/τ).
                let top = qs.iter().cloned().fold(f64::MIN, f64::max);
                let new = top + tau * qs.iter().map(|q| ((q - top) / tau).exp()).sum::<f64>().ln();
                change = change.max((new - v[x][y]).abs());
                v[x][y] = new;
            }
        }
        if change < 1e-12 {
            break;
        }
    }
    let mut q = vec![vec![[[None; 3]; 3]; ny]; nx];
    for x in 0..nx {
        for y in 0..ny {
            if (x, y) == goal {
                continue;
            }
            for (dx, dy, t) in moves(x, y) {
                q[x][y][(dx + 1) as usize][(dy + 1) as usize] =
                    Some(reward(t, dx != 0 && dy != 0) + gamma * v[t.0][t.1]);
            }
        }
    }
    q
}

/// Undiscounted minimum path cost to the goal on the 8-connected grid, with
/// per-move cost 0.01 (orthogonal) or 0.01·√2 (diagonal) and cost −1 for the
/// move that enters the goal. Bellman-Ford relaxation.
pub fn oracle_shortest_cost(nx: usize, ny: usize, goal: (usize, usize)) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; ny]; nx];
    d[goal.0][goal.1] = 0.0;
    loop {
        let mut changed = false;
        for x in 0..nx {
            for y in 0..ny {
                if (x, y) == goal {
                    continue;
                }
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) == (0, 0)
                            || tx < 0
                            || ty < 0
                            || tx as usize >= nx
                            || ty as usize >= ny
                        {
                            continue;
                        }
                        let t = (tx as usize, ty as usize);
                        let step = if t == goal {
                            -1.0
                        } else if dx != 0 && dy != 0 {
                            0.01 * 2f64.sqrt()
                        } else {
                            0.01
                        };
                        let c = step + d[t.0][t.1];
                        if c < d[x][y] - 1e-15 {
                            d[x][y] = c;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}
