//! Robot-side control: the nominal task controller, the barrier-function
//! constraints and an exact solver for the resulting two-variable QP
//!
//! ```text
//! u* = argmin ‖u − û‖²   s.t.   A u ≤ b
//! ```

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{pseudoinverse, MatKx2, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("singular constraint: obstacle {index} coincides with the robot")]
    SingularConstraint { index: usize },
    #[error("QP infeasible")]
    QpInfeasible,
}

/// Family of nominal controllers `û(x) = C(x) θ + d(x)`, without `θ`.
///
/// This is what the observer is assumed to know about a robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskFamily {
    /// Proportional goal reaching, `û = k_p (θ − x)` with `θ` the goal.
    GoalReaching { gain: f64 },
}

impl TaskFamily {
    pub fn goal_reaching(gain: f64) -> Self {
        assert!(gain > 0.0, "gain must be positive");
        TaskFamily::GoalReaching { gain }
    }

    /// `C(x)`.
    pub fn task_matrix(&self, _x: &Vec2) -> Matrix2<f64> {
        match *self {
            TaskFamily::GoalReaching { gain } => Matrix2::identity() * gain,
        }
    }

    /// `d(x)`.
    pub fn task_offset(&self, x: &Vec2) -> Vec2 {
        match *self {
            TaskFamily::GoalReaching { gain } => -x * gain,
        }
    }

    pub fn nominal(&self, x: &Vec2, theta: &Vec2) -> Vec2 {
        self.task_matrix(x) * theta + self.task_offset(x)
    }
}

/// A task family together with the robot's private parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub family: TaskFamily,
    pub theta: Vec2,
}

impl TaskModel {
    pub fn goal_reaching(gain: f64, goal: Vec2) -> Self {
        Self { family: TaskFamily::goal_reaching(gain), theta: goal }
    }
}

pub fn nominal_control(task: &TaskModel, x: &Vec2) -> Vec2 {
    task.family.nominal(x, &task.theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Minimum separation `D_s` (m).
    pub safety_distance: f64,
    /// Barrier rate `γ` (1/s).
    pub gamma: f64,
    /// Base activity threshold; the observer scales it by `1 + ‖b‖∞`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-6
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self { safety_distance: 0.5, gamma: 2.0, epsilon: default_epsilon() }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.safety_distance > 0.0 && self.gamma > 0.0 && self.epsilon > 0.0) {
            return Err(format!("safety parameters must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// `A u ≤ b`, one row per obstacle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSystem {
    pub a: MatKx2,
    pub b: Vec<f64>,
}

impl ConstraintSystem {
    pub fn new(a: MatKx2, b: Vec<f64>) -> Self {
        assert_eq!(a.nrows(), b.len());
        Self { a, b }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `aⱼ·u − bⱼ` for every row.
    pub fn residuals(&self, u: &Vec2) -> Vec<f64> {
        self.a.rows().iter().zip(&self.b).map(|(a, b)| a.dot(u) - b).collect()
    }

    pub fn b_norm_inf(&self) -> f64 {
        self.b.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn select(&self, indices: &[usize]) -> ConstraintSystem {
        ConstraintSystem {
            a: self.a.select(indices),
            b: indices.iter().map(|&i| self.b[i]).collect(),
        }
    }

    /// Scale used by feasibility tolerances.
    fn scale(&self, u_hat: &Vec2) -> f64 {
        1.0 + self.b_norm_inf() + self.a.norm_inf() * u_hat.norm()
    }
}

/// Row `j`: `aⱼ = −(x − xⱼ)`, `bⱼ = (γ/2)(‖x − xⱼ‖² − D_s²)`.
pub fn build_constraints(
    x: &Vec2,
    obstacles: &[Vec2],
    sp: &SafetyParams,
) -> Result<ConstraintSystem, ControlError> {
    let mut rows = Vec::with_capacity(obstacles.len());
    let mut b = Vec::with_capacity(obstacles.len());
    for (index, xo) in obstacles.iter().enumerate() {
        let dx = x - xo;
        let d2 = dx.norm_squared();
        if d2 == 0.0 {
            return Err(ControlError::SingularConstraint { index });
        }
        rows.push(-dx);
        b.push(0.5 * sp.gamma * (d2 - sp.safety_distance * sp.safety_distance));
    }
    Ok(ConstraintSystem::new(MatKx2::new(rows), b))
}

/// Primal-dual solution of the QP.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub u_star: Vec2,
    pub mu: Vec<f64>,
    /// Rows tight at `u_star`.
    pub active_indices: Vec<usize>,
}

struct Candidate {
    u: Vec2,
    /// Multipliers on `support`.
    mu: Vec<f64>,
    support: Vec<usize>,
}

/// Exact projection of `û` onto `{u : A u ≤ b}` by active-set enumeration.
///
/// Candidates are the unconstrained optimum, the projection onto every
/// single constraint line and every vertex formed by two independent rows.
/// The projection sits in the relative interior of one face of the feasible
/// polygon and that face's affine hull is one of those candidates, so the
/// feasible candidate nearest `û` is the optimum. Ties keep the smallest
/// support.
///
/// Multipliers are the minimum-norm solution of `A_tightᵀ μ = 2(û − u*)`
/// when it is non-negative; otherwise the winning candidate's multipliers
/// (which are non-negative by construction) are reported.
pub fn solve_qp(u_hat: &Vec2, cs: &ConstraintSystem) -> Result<KktSolution, ControlError> {
    let m = cs.len();
    let scale = cs.scale(u_hat);
    let feas_tol = 1e-11 * scale;
    let feasible = |u: &Vec2| cs.residuals(u).iter().all(|r| *r <= feas_tol);

    let mut best: Option<(f64, Candidate)> = None;
    let mut consider = |cand: Candidate| {
        if !feasible(&cand.u) {
            return;
        }
        let dist = (cand.u - u_hat).norm_squared();
        let better = match &best {
            None => true,
            // Strictly nearer, beyond rounding; equal distances keep the
            // earlier (smaller) support.
            Some((d, _)) => dist < *d - 1e-14 * scale * scale,
        };
        if better {
            best = Some((dist, cand));
        }
    };

    consider(Candidate { u: *u_hat, mu: Vec::new(), support: Vec::new() });

    for j in 0..m {
        let a = cs.a.row(j);
        let n2 = a.norm_squared();
        let viol = a.dot(u_hat) - cs.b[j];
        if viol <= 0.0 {
            continue;
        }
        let u = u_hat - a * (viol / n2);
        consider(Candidate { u, mu: vec![2.0 * viol / n2], support: vec![j] });
    }

    for i in 0..m {
        for j in (i + 1)..m {
            let (ai, aj) = (cs.a.row(i), cs.a.row(j));
            let mat = Matrix2::new(ai.x, ai.y, aj.x, aj.y);
            let det = mat.determinant();
            if det.abs() <= 1e-12 * ai.norm() * aj.norm() {
                continue;
            }
            let Some(inv) = mat.try_inverse() else { continue };
            let u = inv * Vec2::new(cs.b[i], cs.b[j]);
            // 2(û − u) = [aᵢ aⱼ] μ
            let mu = inv.transpose() * ((u_hat - u) * 2.0);
            if mu.x < -1e-12 * scale || mu.y < -1e-12 * scale {
                continue;
            }
            consider(Candidate { u, mu: vec![mu.x.max(0.0), mu.y.max(0.0)], support: vec![i, j] });
        }
    }

    let (_, cand) = best.ok_or(ControlError::QpInfeasible)?;
    let u_star = cand.u;
    let residuals = cs.residuals(&u_star);
    let tight_tol = 1e-9 * scale;
    let active_indices: Vec<usize> =
        (0..m).filter(|&j| residuals[j].abs() <= tight_tol).collect();

    let mut mu = vec![0.0; m];
    let w = (u_hat - u_star) * 2.0;
    let mut from_pinv = false;
    if !active_indices.is_empty() && w.norm() > 0.0 {
        let pinv = pseudoinverse(&cs.a.select(&active_indices)).transpose();
        let sol = pinv * nalgebra::DVector::from_column_slice(w.as_slice());
        if sol.iter().all(|v| *v >= -1e-12 * scale) {
            let stat = cs.a.select(&active_indices).tr_mul(sol.as_slice()) - w;
            if stat.norm() <= 1e-10 * scale {
                for (k, &j) in active_indices.iter().enumerate() {
                    mu[j] = sol[k].max(0.0);
                }
                from_pinv = true;
            }
        }
    }
    if !from_pinv {
        for (k, &j) in cand.support.iter().enumerate() {
            mu[j] = cand.mu[k];
        }
    }

    Ok(KktSolution { u_star, mu, active_indices })
}
