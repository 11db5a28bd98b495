//! Dual active-set solver for `min ½‖x − x0‖²  s.t.  Aᵢ·x ≥ bᵢ`.
//!
//! This is the Goldfarb–Idnani method specialized to an identity Hessian, so
//! the unconstrained minimum is `x0` itself and the projection operators only
//! need the Gram matrix of the active constraint normals.

use nalgebra::{DMatrix, DVector};

/// One linear inequality `normal · x ≥ rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub normal: Vec<f64>,
    pub rhs: f64,
}

const FEAS_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 1000;

/// Returns the exact minimizer, or `None` when the constraints are infeasible.
pub fn project(x0: &[f64], constraints: &[Constraint]) -> Option<Vec<f64>> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let normals: Vec<DVector<f64>> = constraints
        .iter()
        .map(|c| DVector::from_column_slice(&c.normal))
        .collect();
    let slack = |x: &DVector<f64>, j: usize| normals[j].dot(x) - constraints[j].rhs;

    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();

    for _ in 0..MAX_ITERS {
        // Most violated constraint.
        let mut p = None;
        let mut worst = -FEAS_TOL;
        for j in 0..constraints.len() {
            if active.contains(&j) {
                continue;
            }
            let s = slack(&x, j);
            if s < worst {
                worst = s;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            return Some(x.iter().copied().collect());
        };
        let mut mult_p = 0.0;

        loop {
            let np = &normals[p];
            let (z, r) = directions(n, &normals, &active, np)?;
            // Largest step keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > 1e-14 {
                    let t = mult[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let zn = z.dot(np);
            let t2 = if z.norm() > 1e-14 && zn > 1e-14 {
                -slack(&x, p) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return None;
            }
            for (k, rk) in r.iter().enumerate() {
                mult[k] -= t * rk;
            }
            mult_p += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(p);
                mult.push(mult_p);
                break;
            }
            let k = drop.expect("finite partial step has a blocking multiplier");
            active.remove(k);
            mult.remove(k);
        }
    }
    None
}

/// Primal direction `z = (I − N (NᵀN)⁻¹ Nᵀ) n` and dual direction
/// `r = (NᵀN)⁻¹ Nᵀ n` for the active normals `N`.
fn directions(
    dim: usize,
    normals: &[DVector<f64>],
    active: &[usize],
    np: &DVector<f64>,
) -> Option<(DVector<f64>, Vec<f64>)> {
    if active.is_empty() {
        return Some((np.clone(), Vec::new()));
    }
    let nmat = DMatrix::from_fn(dim, active.len(), |i, k| normals[active[k]][i]);
    let gram = nmat.transpose() * &nmat;
    let inv = gram.try_inverse()?;
    let r = &inv * (nmat.transpose() * np);
    let z = np - &nmat * &r;
    Some((z, r.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(normal: &[f64], rhs: f64) -> Constraint {
        Constraint {
            normal: normal.to_vec(),
            rhs,
        }
    }

    #[test]
    fn feasible_point_is_its_own_projection() {
        let x = project(&[0.2, 0.3], &[c(&[1.0, 0.0], 0.0), c(&[0.0, 1.0], 0.0)]).unwrap();
        assert_eq!(x, vec![0.2, 0.3]);
    }

    #[test]
    fn projects_onto_a_halfspace() {
        // x + y >= 2 from the origin lands at (1, 1).
        let x = project(&[0.0, 0.0], &[c(&[1.0, 1.0], 2.0)]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projects_onto_a_corner() {
        // Box [0, 1]^2 from (2, -1) lands at (1, 0).
        let cons = [
            c(&[1.0, 0.0], 0.0),
            c(&[-1.0, 0.0], -1.0),
            c(&[0.0, 1.0], 0.0),
            c(&[0.0, -1.0], -1.0),
        ];
        let x = project(&[2.0, -1.0], &cons).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }

    #[test]
    fn satisfies_the_projection_inequality_on_random_polytopes() {
        // x is the projection of x0 iff (x0 - x)·(y - x) <= 0 for every feasible y.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let dim = rng.random_range(1..=4);
            let anchor: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cons: Vec<Constraint> = (0..rng.random_range(1..=8))
                .map(|_| {
                    let normal: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let at: f64 = normal.iter().zip(&anchor).map(|(a, b)| a * b).sum();
                    c(&normal, at - rng.random_range(0.0..0.5))
                })
                .collect();
            let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = project(&x0, &cons).expect("anchor is feasible");
            let feasible = |y: &[f64]| {
                cons.iter().all(|k| {
                    k.normal.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() >= k.rhs - 1e-10
                })
            };
            assert!(feasible(&x));
            for _ in 0..200 {
                let y: Vec<f64> = anchor
                    .iter()
                    .map(|a| a + rng.random_range(-2.0..2.0))
                    .collect();
                if feasible(&y) {
                    let ip: f64 = (0..dim).map(|i| (x0[i] - x[i]) * (y[i] - x[i])).sum();
                    assert!(ip <= 1e-9, "variational inequality violated: {ip}");
                }
            }
        }
    }

    #[test]
    fn detects_infeasibility() {
        let cons = [c(&[1.0], 1.0), c(&[-1.0], 0.0)];
        assert!(project(&[0.5], &cons).is_none());
    }
}
