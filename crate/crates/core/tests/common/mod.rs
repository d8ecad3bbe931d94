//! Independent oracles and instance generators shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use feasible_region::controller::{solve_qp, ConstraintSystem, SafetyParams};
use feasible_region::linalg::{MatKx2, Vec2};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Projection of `û` onto `{u : A u ≤ b}` by Dykstra's alternating
/// projections.
pub fn dykstra(u_hat: &Vec2, cs: &ConstraintSystem, max_cycles: usize) -> Vec2 {
    let m = cs.len();
    let mut x = *u_hat;
    let mut p = vec![Vec2::zeros(); m];
    for _ in 0..max_cycles {
        let mut change = 0.0f64;
        for j in 0..m {
            let a = cs.a.row(j);
            let y = x + p[j];
            let viol = a.dot(&y) - cs.b[j];
            let nx = if viol > 0.0 { y - a * (viol / a.norm_squared()) } else { y };
            let np = y - nx;
            change = change.max((nx - x).norm()).max((np - p[j]).norm());
            p[j] = np;
            x = nx;
        }
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// Rows whose residual at `u` is within `tol` of zero.
pub fn tight_rows(cs: &ConstraintSystem, u: &Vec2, tol: f64) -> Vec<usize> {
    (0..cs.len()).filter(|&j| (cs.a.row(j).dot(u) - cs.b[j]).abs() <= tol).collect()
}

/// Active set of the QP re-solved at nominal control `û`.
pub fn reproduced_active_set(u_hat: &Vec2, cs: &ConstraintSystem) -> Option<Vec<usize>> {
    let sol = solve_qp(u_hat, cs).ok()?;
    Some(tight_rows(cs, &sol.u_star, 1e-10 * (1.0 + cs.b_norm_inf())))
}

/// Whether `{η : N η ≤ r}` is non-empty.
///
/// A non-empty polyhedron has a minimal face `{N_S η = r_S}` lying entirely
/// inside it; the minimum-norm point of that face is found by enumerating
/// row subsets `S` (including the empty one).
pub struct EtaOracle {
    n: DMatrix<f64>,
    subsets: Vec<(Vec<usize>, DMatrix<f64>, DMatrix<f64>)>,
}

impl EtaOracle {
    pub fn new(n: DMatrix<f64>) -> Self {
        let k = n.nrows();
        let mut subsets = Vec::new();
        for mask in 0u32..(1 << k) {
            let s: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            if s.len() > n.ncols() {
                continue;
            }
            let ns = n.select_rows(s.iter());
            let pinv = if s.is_empty() {
                DMatrix::zeros(n.ncols(), 0)
            } else {
                ns.clone().pseudo_inverse(1e-12).expect("svd")
            };
            subsets.push((s, ns, pinv));
        }
        Self { n, subsets }
    }

    pub fn feasible(&self, r: &DVector<f64>, tol: f64) -> bool {
        let scale = 1.0 + r.amax();
        for (s, ns, pinv) in &self.subsets {
            let rs = DVector::from_iterator(s.len(), s.iter().map(|&i| r[i]));
            let eta = pinv * &rs;
            if s.is_empty() || (ns * &eta - &rs).amax() <= tol * scale {
                if (&self.n * &eta - r).iter().all(|v| *v <= tol * scale) {
                    return true;
                }
            }
        }
        false
    }
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec2 {
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    Vec2::new(a.cos(), a.sin())
}

/// Robot at `x` with obstacles strictly outside the safety distance.
pub struct Geometry {
    pub x: Vec2,
    pub obstacles: Vec<Vec2>,
    pub safety: SafetyParams,
    pub gain: f64,
    pub theta: Vec2,
}

pub fn random_geometry<R: Rng>(rng: &mut R, max_obstacles: usize) -> Geometry {
    let safety = SafetyParams {
        safety_distance: rng.gen_range(0.2..1.0),
        gamma: rng.gen_range(0.5..5.0),
        epsilon: 1e-6,
    };
    let x = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    let m = rng.gen_range(0..=max_obstacles);
    let obstacles = (0..m)
        .map(|_| x + random_unit(rng) * rng.gen_range(safety.safety_distance + 0.01..4.0))
        .collect();
    let theta = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    Geometry { x, obstacles, safety, gain: rng.gen_range(0.5..2.0), theta }
}

/// Constraint system built so that `u*` has a prescribed active block.
pub struct Constructed {
    pub x: Vec2,
    pub gain: f64,
    pub theta: Vec2,
    pub cs: ConstraintSystem,
    pub u_star: Vec2,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// no active rows
    A,
    /// one active row
    B,
    /// 2 to 4 positively parallel active rows
    C,
    /// two independent active rows
    D,
    /// 3 or 4 rows through a common vertex
    E,
}

pub fn constructed<R: Rng>(rng: &mut R, shape: Shape) -> Constructed {
    let x = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let gain = rng.gen_range(0.5..2.0);
    let u_star = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let mut rows: Vec<Vec2> = Vec::new();
    match shape {
        Shape::A => {}
        Shape::B => rows.push(random_unit(rng) * rng.gen_range(0.5..3.0)),
        Shape::C => {
            let e = random_unit(rng);
            for _ in 0..rng.gen_range(2..=4) {
                rows.push(e * rng.gen_range(0.5..3.0));
            }
        }
        Shape::D | Shape::E => {
            let a1 = random_unit(rng);
            let ang: f64 = rng.gen_range(0.4..2.7);
            let a2 = Vec2::new(a1.x * ang.cos() - a1.y * ang.sin(), a1.x * ang.sin() + a1.y * ang.cos());
            rows.push(a1 * rng.gen_range(0.5..3.0));
            rows.push(a2 * rng.gen_range(0.5..3.0));
            if shape == Shape::E {
                for _ in 0..rng.gen_range(1..=2) {
                    let (s, t): (f64, f64) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
                    rows.push(a1 * s + a2 * t);
                }
            }
        }
    }
    let mu: Vec<f64> = rows.iter().map(|_| rng.gen_range(0.3..3.0)).collect();
    let pull = rows.iter().zip(&mu).fold(Vec2::zeros(), |acc, (a, m)| acc + a * (0.5 * m));
    let u_hat = u_star + pull;
    let theta = x + u_hat / gain;
    let k = rows.len();
    let mut b: Vec<f64> = rows.iter().map(|a| a.dot(&u_star)).collect();
    let mut all = rows;
    let n_inactive = if shape == Shape::A { rng.gen_range(1..=4) } else { rng.gen_range(0..=3) };
    for _ in 0..n_inactive {
        let a = random_unit(rng) * rng.gen_range(0.5..3.0);
        let slack = rng.gen_range(0.2..3.0);
        // keep case A instances unconstrained at û
        let floor = if shape == Shape::A { a.dot(&u_hat).max(a.dot(&u_star)) } else { a.dot(&u_star) };
        b.push(floor + slack);
        all.push(a);
    }
    let cs = ConstraintSystem::new(MatKx2::new(all), b);
    Constructed { x, gain, theta, cs, u_star, active: (0..k).collect() }
}
