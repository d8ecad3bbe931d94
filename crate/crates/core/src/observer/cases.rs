//! Closed-form control models and instantaneous feasible sets for each
//! active-set configuration.
//!
//! Notation: `C`, `d` are the task matrix and offset of the hypothesized
//! task family at the measured position; `G`, `f` the affine control model
//! `u* = Gθ + f` (cases A–C) and `G̃ = C − G`, `f̃ = d − f` the part of the
//! nominal control absorbed by the multipliers.

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2};

use super::{AffineControlModel, ObserverError};
use crate::controller::ConstraintSystem;
use crate::linalg::{pseudoinverse, rotate90, thin_svd, MatKx2, Vec2};
use crate::polytope::{eliminate_eta, Halfspace, HalfspaceSet};

fn row(v: RowVector2<f64>) -> Vec<f64> {
    vec![v[0], v[1]]
}

/// No active constraint: `u* = û = Cθ + d`.
pub fn decompose_case_a(c: &Matrix2<f64>, d: &Vec2) -> AffineControlModel {
    AffineControlModel::new(*c, *d)
}

/// One active row `aᵢ·u = bᵢ`:
/// `G = V₂V₂ᵀC`, `f = V₁ bᵢ/‖aᵢ‖ + V₂V₂ᵀd` with `V₁ = aᵢ/‖aᵢ‖`, `V₂ = R₉₀V₁`.
pub fn decompose_case_b(
    a_i: &Vec2,
    b_i: f64,
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<AffineControlModel, ObserverError> {
    let n = a_i.norm();
    if n == 0.0 {
        return Err(ObserverError::SingularConstraint);
    }
    let v1 = a_i / n;
    let v2 = rotate90(&v1);
    let p2 = v2 * v2.transpose();
    Ok(AffineControlModel::new(p2 * c, v1 * (b_i / n) + p2 * d))
}

/// `K ≥ 2` active rows of rank one. Returns the model and the norm of the
/// component of `b_ac` outside `range(A_ac)`, which is zero for consistent
/// data; the model always uses the projected right-hand side.
pub fn decompose_case_c(
    a_ac: &MatKx2,
    b_ac: &[f64],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<(AffineControlModel, f64), ObserverError> {
    let svd = thin_svd(a_ac);
    let s1 = svd.sigma_max();
    if s1 == 0.0 {
        return Err(ObserverError::SingularConstraint);
    }
    let u1 = svd.u_col(0);
    let v1 = svd.v_col(0);
    let v2 = svd.v_col(1);
    let u1b: f64 = u1.iter().zip(b_ac).map(|(u, b)| u * b).sum();
    let inconsistency = b_ac
        .iter()
        .zip(&u1)
        .map(|(b, u)| (b - u1b * u).powi(2))
        .sum::<f64>()
        .sqrt();
    let p2 = v2 * v2.transpose();
    let model = AffineControlModel::new(p2 * c, v1 * (u1b / s1) + p2 * d);
    Ok((model, inconsistency))
}

/// Rows `(aⱼᵀG)θ < bⱼ − aⱼᵀf` for the inactive constraints.
pub fn inactive_rows(model: &AffineControlModel, cs: &ConstraintSystem, inactive: &[usize]) -> Vec<Halfspace> {
    inactive
        .iter()
        .map(|&j| {
            let a = cs.a.row(j);
            Halfspace::strict(row(a.transpose() * model.g), cs.b[j] - a.dot(&model.f))
        })
        .collect()
}

/// Case A: every constraint is inactive, `(AC)θ < b − Ad`.
pub fn omega_case_a(cs: &ConstraintSystem, c: &Matrix2<f64>, d: &Vec2) -> HalfspaceSet {
    let all: Vec<usize> = (0..cs.len()).collect();
    let rows = inactive_rows(&decompose_case_a(c, d), cs, &all);
    HalfspaceSet::from_rows(2, rows).expect("planar rows")
}

/// Case B: inactive rows plus `μᵢ ≥ 0 ⇔ −aᵢᵀG̃θ ≤ aᵢᵀf̃`.
pub fn omega_case_b(
    model: &AffineControlModel,
    cs: &ConstraintSystem,
    active: usize,
    inactive: &[usize],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> HalfspaceSet {
    let a = cs.a.row(active);
    let g_res = c - model.g;
    let f_res = d - model.f;
    let mut rows = inactive_rows(model, cs, inactive);
    rows.push(Halfspace::new(row(-(a.transpose() * g_res)), a.dot(&f_res)));
    HalfspaceSet::from_rows(2, rows).expect("planar rows")
}

/// Case C: inactive rows plus `μ ⪰ 0` with
/// `μ = 2Ṽ₁Σ̃⁻¹Ũ₁ᵀ(G̃θ + f̃) + Ṽ₂η`, `η ∈ R^{K−1}` projected out.
///
/// The SVD of `A_acᵀ` is read off the SVD of `A_ac`: `Ũ = V`, `Ṽ = U`.
pub fn omega_case_c(
    cs: &ConstraintSystem,
    active: &[usize],
    inactive: &[usize],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<HalfspaceSet, ObserverError> {
    let sub = cs.select(active);
    let (model, _) = decompose_case_c(&sub.a, &sub.b, c, d)?;
    let svd = thin_svd(&sub.a);
    let k = active.len();
    let s1 = svd.sigma_max();
    let v1 = svd.v_col(0);
    let g_res = c - model.g;
    let f_res = d - model.f;
    let theta_part = v1.transpose() * g_res;
    let const_part = v1.dot(&f_res);

    let mut lifted = HalfspaceSet::new(2 + k - 1);
    for r in 0..k {
        let w = 2.0 * svd.u[(r, 0)] / s1;
        let mut normal = vec![-w * theta_part[0], -w * theta_part[1]];
        normal.extend((1..k).map(|col| -svd.u[(r, col)]));
        lifted.push(Halfspace::new(normal, w * const_part));
    }
    let mut out = eliminate_eta(&lifted, k - 1)?;
    out.extend(HalfspaceSet::from_rows(2, inactive_rows(&model, cs, inactive)).expect("planar rows"));
    Ok(out)
}

/// Case D: two independent active rows,
/// `−A_ac⁻ᵀCθ ⪯ A_ac⁻ᵀ(d − A_ac⁻¹b_ac)`. Inactive rows carry no information.
pub fn omega_case_d(
    cs: &ConstraintSystem,
    active: &[usize],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<HalfspaceSet, ObserverError> {
    assert_eq!(active.len(), 2, "case D has exactly two active rows");
    let (a0, a1) = (cs.a.row(active[0]), cs.a.row(active[1]));
    let a = Matrix2::new(a0.x, a0.y, a1.x, a1.y);
    let inv = a.try_inverse().ok_or(ObserverError::SingularConstraint)?;
    let u_star = inv * Vec2::new(cs.b[active[0]], cs.b[active[1]]);
    let inv_t = inv.transpose();
    let lhs = -(inv_t * c);
    let rhs = inv_t * (d - u_star);
    let rows = (0..2)
        .map(|r| Halfspace::new(row(lhs.row(r).into_owned()), rhs[r]))
        .collect();
    Ok(HalfspaceSet::from_rows(2, rows).expect("planar rows"))
}

/// Case E: `K > 2` active rows of rank two,
/// `μ = 2Ṽ₁Σ̃ₘ⁻¹Ũᵀ(Cθ + d − A_ac†b_ac) + Ṽ₂η ⪰ 0`, `η ∈ R^{K−2}` projected out.
pub fn omega_case_e(
    cs: &ConstraintSystem,
    active: &[usize],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<HalfspaceSet, ObserverError> {
    let sub = cs.select(active);
    let k = active.len();
    assert!(k >= 2, "case E needs at least two active rows");
    let svd = thin_svd(&sub.a);
    let (s1, s2) = (svd.singular_values[0], svd.singular_values[1]);
    if s2 == 0.0 {
        return Err(ObserverError::SingularConstraint);
    }
    let u_star = pseudoinverse(&sub.a) * DVector::from_column_slice(&sub.b);
    let u_star = Vec2::new(u_star[0], u_star[1]);

    // Ṽ₁ Σ̃ₘ⁻¹ Ũᵀ = pinv(A_acᵀ), a K×2 map.
    let vt = svd.v.transpose();
    let map = DMatrix::from_fn(k, 2, |r, col| {
        svd.u[(r, 0)] / s1 * vt[(0, col)] + svd.u[(r, 1)] / s2 * vt[(1, col)]
    });
    let off = d - u_star;

    let mut lifted = HalfspaceSet::new(2 + k - 2);
    for r in 0..k {
        let m_row = RowVector2::new(map[(r, 0)], map[(r, 1)]);
        let theta_part = m_row * c * 2.0;
        let mut normal = vec![-theta_part[0], -theta_part[1]];
        normal.extend((2..k).map(|col| -svd.u[(r, col)]));
        lifted.push(Halfspace::new(normal, 2.0 * m_row.dot(&off.transpose())));
    }
    Ok(eliminate_eta(&lifted, k - 2)?)
}
