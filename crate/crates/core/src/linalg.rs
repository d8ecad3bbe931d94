//! Small dense linear algebra for matrices with two columns.
//!
//! Every constraint block handled by the identifier is `K x 2` (one row per
//! obstacle, two control components), so the SVD is computed in closed form
//! from the 2x2 Gram matrix rather than through a general-purpose routine.

use nalgebra::{DMatrix, Matrix2, Vector2};

pub type Vec2 = Vector2<f64>;

/// Relative singular-value cutoff used for rank decisions when the caller
/// does not supply one.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// A `K x 2` matrix stored row by row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatKx2 {
    rows: Vec<Vec2>,
}

impl MatKx2 {
    pub fn new(rows: Vec<Vec2>) -> Self {
        debug_assert!(rows.iter().all(|r| r.iter().all(|v| v.is_finite())));
        Self { rows }
    }

    pub fn from_slice(rows: &[[f64; 2]]) -> Self {
        Self::new(rows.iter().map(|r| Vec2::new(r[0], r[1])).collect())
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec2] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> Vec2 {
        self.rows[i]
    }

    /// `A v` as a K-vector.
    pub fn mul_vec(&self, v: &Vec2) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(v)).collect()
    }

    /// `Aᵀ y` for a K-vector `y`.
    pub fn tr_mul(&self, y: &[f64]) -> Vec2 {
        assert_eq!(y.len(), self.rows.len());
        self.rows
            .iter()
            .zip(y)
            .fold(Vec2::zeros(), |acc, (r, &w)| acc + r * w)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), 2, |i, j| self.rows[i][j])
    }

    /// Max-abs entry.
    pub fn norm_inf(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn select(&self, indices: &[usize]) -> MatKx2 {
        MatKx2::new(indices.iter().map(|&i| self.rows[i]).collect())
    }
}

/// `A = U Σ Vᵀ` for a `K x 2` matrix.
///
/// `u` is a full `K x K` orthogonal matrix whose leading columns pair with
/// `singular_values` (length `min(K, 2)`); the trailing columns span the left
/// null space. Reading the same factors transposed gives the SVD of `Aᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: Matrix2<f64>,
}

impl ThinSvd {
    pub fn v_col(&self, i: usize) -> Vec2 {
        self.v.column(i).into_owned()
    }

    pub fn u_col(&self, i: usize) -> Vec<f64> {
        self.u.column(i).iter().copied().collect()
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Rebuilds `U Σ Vᵀ` (useful for checks).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let k = self.u.nrows();
        let mut out = DMatrix::zeros(k, 2);
        for (i, &s) in self.singular_values.iter().enumerate() {
            let ui = self.u.column(i);
            let vi = self.v.column(i);
            for r in 0..k {
                for c in 0..2 {
                    out[(r, c)] += s * ui[r] * vi[c];
                }
            }
        }
        out
    }
}

/// Counter-clockwise quarter turn.
pub fn rotate90(v: &Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

fn first_nonzero_negative(v: &[f64]) -> bool {
    v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
}

/// Closed-form SVD of a `K x 2` matrix.
///
/// The right singular vectors come from the Jacobi rotation angle that
/// diagonalizes `AᵀA`; the singular values are then measured directly as
/// `‖A vᵢ‖`, which keeps small singular values accurate to roughly machine
/// precision times `σ₁` instead of its square root.
///
/// Each column of `V` is signed so its first nonzero entry is positive, and
/// the paired `U` column is flipped with it. The zero matrix yields zero
/// singular values with `U = I`, `V = I`.
pub fn thin_svd(a: &MatKx2) -> ThinSvd {
    let k = a.nrows();
    let r = k.min(2);
    if k == 0 {
        return ThinSvd {
            u: DMatrix::zeros(0, 0),
            singular_values: Vec::new(),
            v: Matrix2::identity(),
        };
    }

    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for row in a.rows() {
        gxx += row.x * row.x;
        gxy += row.x * row.y;
        gyy += row.y * row.y;
    }
    if gxx == 0.0 && gyy == 0.0 {
        return ThinSvd {
            u: DMatrix::identity(k, k),
            singular_values: vec![0.0; r],
            v: Matrix2::identity(),
        };
    }

    let phi = 0.5 * (2.0 * gxy).atan2(gxx - gyy);
    let mut v1 = Vec2::new(phi.cos(), phi.sin());
    let mut v2 = rotate90(&v1);
    let mut av1 = a.mul_vec(&v1);
    let mut av2 = a.mul_vec(&v2);
    if norm(&av2) > norm(&av1) {
        std::mem::swap(&mut v1, &mut v2);
        std::mem::swap(&mut av1, &mut av2);
    }

    let s1 = norm(&av1);
    let mut u1: Vec<f64> = av1.iter().map(|x| x / s1).collect();
    let mut cols = Vec::with_capacity(k);
    let mut sigmas = vec![s1];

    if first_nonzero_negative(v1.as_slice()) {
        v1 = -v1;
        u1.iter_mut().for_each(|x| *x = -*x);
    }
    cols.push(u1.clone());

    if k >= 2 {
        // Re-orthogonalize against u1; the dropped component is O(eps * s1).
        let proj = dot(&u1, &av2);
        let mut raw: Vec<f64> = av2.iter().zip(&u1).map(|(x, u)| x - proj * u).collect();
        let s2 = norm(&raw);
        sigmas.push(s2);
        if s2 > f64::EPSILON * s1 * (k as f64) {
            raw.iter_mut().for_each(|x| *x /= s2);
            if first_nonzero_negative(v2.as_slice()) {
                v2 = -v2;
                raw.iter_mut().for_each(|x| *x = -*x);
            }
            cols.push(raw);
        } else if first_nonzero_negative(v2.as_slice()) {
            v2 = -v2;
        }
    } else if first_nonzero_negative(v2.as_slice()) {
        v2 = -v2;
    }

    complete_basis(&mut cols, k);
    let u = DMatrix::from_fn(k, k, |i, j| cols[j][i]);
    ThinSvd {
        u,
        singular_values: sigmas,
        v: Matrix2::from_columns(&[v1, v2]),
    }
}

/// Extends orthonormal `cols` to a basis of `R^k` with modified Gram-Schmidt
/// over the standard basis, always taking the candidate with the largest
/// residual.
fn complete_basis(cols: &mut Vec<Vec<f64>>, k: usize) {
    while cols.len() < k {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..k {
            let mut cand = vec![0.0; k];
            cand[e] = 1.0;
            for _ in 0..2 {
                for c in cols.iter() {
                    let p = dot(c, &cand);
                    cand.iter_mut().zip(c).for_each(|(x, ci)| *x -= p * ci);
                }
            }
            let n = norm(&cand);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, cand));
            }
        }
        let (n, mut cand) = best.expect("k > 0");
        cand.iter_mut().for_each(|x| *x /= n);
        cols.push(cand);
    }
}

/// Number of singular values above `rel_tol * σ₁` (0 when `σ₁ = 0`).
pub fn rank_with_tol(svd: &ThinSvd, rel_tol: f64) -> usize {
    let s1 = svd.sigma_max();
    if s1 == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * s1)
        .count()
}

/// Moore-Penrose pseudoinverse (`2 x K`) with the default rank cutoff.
pub fn pseudoinverse(a: &MatKx2) -> DMatrix<f64> {
    pseudoinverse_with_tol(a, DEFAULT_RANK_TOL)
}

pub fn pseudoinverse_with_tol(a: &MatKx2, rel_tol: f64) -> DMatrix<f64> {
    let svd = thin_svd(a);
    let k = a.nrows();
    let mut out = DMatrix::zeros(2, k);
    let s1 = svd.sigma_max();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s1 == 0.0 || s <= rel_tol * s1 {
            continue;
        }
        let vi = svd.v.column(i);
        let ui = svd.u.column(i);
        for r in 0..2 {
            for c in 0..k {
                out[(r, c)] += vi[r] * ui[c] / s;
            }
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    fn check_factorization(a: &MatKx2, tol: f64) {
        let svd = thin_svd(a);
        let k = a.nrows();
        let utu = svd.u.transpose() * &svd.u;
        assert!(max_abs(&(utu - DMatrix::identity(k, k))) < tol);
        let vtv = svd.v.transpose() * svd.v;
        assert!((vtv - Matrix2::identity()).abs().max() < tol);
        let err = max_abs(&(svd.reconstruct() - a.to_dmatrix()));
        assert!(err <= tol * a.norm_inf().max(1.0), "reconstruction {err}");
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(svd.singular_values.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn unit_row() {
        let svd = thin_svd(&MatKx2::from_slice(&[[1.0, 0.0]]));
        assert_eq!(svd.singular_values.len(), 1);
        assert!((svd.singular_values[0] - 1.0).abs() < 1e-15);
        assert!((svd.v_col(0) - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((svd.v_col(1).abs() - Vec2::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn single_row_matches_quarter_turn_construction() {
        let a = Vec2::new(-3.0, 4.0);
        let svd = thin_svd(&MatKx2::new(vec![a]));
        let v1 = a / a.norm();
        let v2 = rotate90(&v1);
        let got1 = svd.v_col(0);
        let got2 = svd.v_col(1);
        assert!((got1 - v1).norm() < 1e-14 || (got1 + v1).norm() < 1e-14);
        assert!((got2 - v2).norm() < 1e-14 || (got2 + v2).norm() < 1e-14);
        assert!((svd.singular_values[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_column() {
        let svd = thin_svd(&MatKx2::from_slice(&[[1.0, 0.0], [2.0, 0.0]]));
        assert!((svd.singular_values[0] - 5f64.sqrt()).abs() < 1e-14);
        assert_eq!(svd.singular_values[1], 0.0);
        assert!((svd.v_col(0) - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        let u1 = svd.u_col(0);
        let s5 = 5f64.sqrt();
        assert!((u1[0] - 1.0 / s5).abs() < 1e-15 && (u1[1] - 2.0 / s5).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_is_deterministic() {
        let svd = thin_svd(&MatKx2::from_slice(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]));
        assert_eq!(svd.singular_values, vec![0.0, 0.0]);
        assert_eq!(svd.v, Matrix2::identity());
        assert_eq!(svd.u, DMatrix::identity(3, 3));
        assert_eq!(rank_with_tol(&svd, 1e-8), 0);
    }

    #[test]
    fn sign_convention() {
        let svd = thin_svd(&MatKx2::from_slice(&[[-1.0, -2.0], [0.5, -3.0], [2.0, 1.0]]));
        for c in 0..2 {
            let col = svd.v_col(c);
            assert!(!first_nonzero_negative(col.as_slice()));
        }
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=16);
            let rows = (0..k)
                .map(|_| Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            check_factorization(&MatKx2::new(rows), 1e-10);
        }
    }

    #[test]
    fn rank_deficient_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let k = rng.gen_range(2..=16);
            let dir = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let rows = (0..k).map(|_| dir * rng.gen_range(-3.0..3.0)).collect();
            let a = MatKx2::new(rows);
            check_factorization(&a, 1e-10);
            assert_eq!(rank_with_tol(&thin_svd(&a), DEFAULT_RANK_TOL), 1);
        }
    }

    #[test]
    fn rank_examples() {
        let mk = |s: Vec<f64>| ThinSvd {
            u: DMatrix::identity(2, 2),
            singular_values: s,
            v: Matrix2::identity(),
        };
        assert_eq!(rank_with_tol(&mk(vec![5f64.sqrt(), 0.0]), 1e-8), 1);
        assert_eq!(rank_with_tol(&mk(vec![1.0, 1.0]), 1e-8), 2);
        assert_eq!(rank_with_tol(&mk(vec![1.0, 1e-12]), 1e-8), 1);
    }

    fn penrose(a: &MatKx2, tol: f64) {
        let am = a.to_dmatrix();
        let p = pseudoinverse(a);
        assert!(max_abs(&(&am * &p * &am - &am)) < tol);
        assert!(max_abs(&(&p * &am * &p - &p)) < tol);
        let ap = &am * &p;
        assert!(max_abs(&(&ap - ap.transpose())) < tol);
        let pa = &p * &am;
        assert!(max_abs(&(&pa - pa.transpose())) < tol);
    }

    #[test]
    fn pseudoinverse_examples() {
        let id = pseudoinverse(&MatKx2::from_slice(&[[1.0, 0.0], [0.0, 1.0]]));
        assert!(max_abs(&(id - DMatrix::identity(2, 2))) < 1e-15);
        let col = pseudoinverse(&MatKx2::from_slice(&[[1.0, 0.0]]));
        assert_eq!(col.shape(), (2, 1));
        assert!((col[(0, 0)] - 1.0).abs() < 1e-15 && col[(1, 0)].abs() < 1e-15);
        penrose(&MatKx2::from_slice(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), 1e-9);
        let z = pseudoinverse(&MatKx2::from_slice(&[[0.0, 0.0]]));
        assert_eq!(z, DMatrix::zeros(2, 1));
    }

    #[test]
    fn pseudoinverse_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.gen_range(2..=10);
            let a = MatKx2::new(
                (0..k)
                    .map(|_| Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
                    .collect(),
            );
            penrose(&a, 1e-9);
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let am = a.to_dmatrix();
            let ata = am.transpose() * &am;
            let Some(inv) = ata.clone().try_inverse() else { continue };
            if ata.norm() * inv.norm() > 1e8 {
                continue;
            }
            let bv = nalgebra::DVector::from_vec(b.clone());
            let expected = inv * am.transpose() * &bv;
            let got = pseudoinverse(&a) * bv;
            assert!((expected - got).norm() < 1e-9);
        }
    }

    #[test]
    fn rotate_examples() {
        assert_eq!(rotate90(&Vec2::new(1.0, 0.0)), Vec2::new(0.0, 1.0));
        assert_eq!(rotate90(&Vec2::new(0.0, 1.0)), Vec2::new(-1.0, 0.0));
        let r = rotate90(&Vec2::new(3.0, 4.0));
        assert_eq!(r, Vec2::new(-4.0, 3.0));
        assert_eq!(r.dot(&Vec2::new(3.0, 4.0)), 0.0);
    }

    proptest! {
        #[test]
        fn rank_is_permutation_invariant(
            rows in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..10),
            shift in 0usize..10,
        ) {
            let a = MatKx2::new(rows.iter().map(|&(x, y)| Vec2::new(x, y)).collect());
            let mut permuted = a.rows().to_vec();
            let n = permuted.len();
            permuted.rotate_left(shift % n);
            permuted.reverse();
            let r1 = rank_with_tol(&thin_svd(&a), DEFAULT_RANK_TOL);
            let r2 = rank_with_tol(&thin_svd(&MatKx2::new(permuted)), DEFAULT_RANK_TOL);
            prop_assert_eq!(r1, r2);
        }
    }
}
