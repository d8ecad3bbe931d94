//! Parameter-space geometry: halfspace systems, Fourier-Motzkin projection
//! and convex polygons in the plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vec2;

/// Default cap on intermediate rows during Fourier-Motzkin elimination.
pub const FM_ROW_CAP: usize = 4096;

const FM_ZERO: f64 = 1e-11;
const DEDUP_TOL: f64 = 1e-10;
const VERTEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("unbounded region")]
    Unbounded,
    #[error("projection blow-up: {rows} rows exceeds cap {cap}")]
    ProjectionBlowUp { rows: usize, cap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `normal · v <= offset`. `strict` only records how the row was derived;
/// every geometric operation treats the row as closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
    #[serde(default)]
    pub strict: bool,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset, strict: false }
    }

    pub fn strict(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset, strict: true }
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// `normal · v - offset` (non-positive inside).
    pub fn residual(&self, v: &[f64]) -> f64 {
        self.normal.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }

    pub fn normal_norm(&self) -> f64 {
        self.normal.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Signed Euclidean distance to the boundary; `None` for constant rows.
    pub fn signed_distance(&self, v: &[f64]) -> Option<f64> {
        let n = self.normal_norm();
        (n > FM_ZERO).then(|| self.residual(v) / n)
    }

    pub fn is_constant(&self) -> bool {
        self.normal_norm() <= FM_ZERO
    }

    /// Scales to a unit normal. Constant rows are returned with a zero normal
    /// and their offset untouched.
    pub fn normalized(&self) -> Self {
        let n = self.normal_norm();
        if n <= FM_ZERO {
            return Self {
                normal: vec![0.0; self.dim()],
                offset: self.offset,
                strict: self.strict,
            };
        }
        Self {
            normal: self.normal.iter().map(|x| x / n).collect(),
            offset: self.offset / n,
            strict: self.strict,
        }
    }

    fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.offset - other.offset).abs() <= tol
            && self
                .normal
                .iter()
                .zip(&other.normal)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// An ordered list of halfspaces over a common variable list
/// (parameters first, then any auxiliary variables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSet {
    dim: usize,
    rows: Vec<Halfspace>,
}

impl HalfspaceSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: Vec<Halfspace>) -> Result<Self, GeometryError> {
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        Ok(Self { dim, rows })
    }

    /// The constant row `0 <= -1`: no point satisfies it.
    pub fn infeasible(dim: usize) -> Self {
        Self { dim, rows: vec![Halfspace::new(vec![0.0; dim], -1.0)] }
    }

    pub fn push(&mut self, row: Halfspace) {
        assert_eq!(row.dim(), self.dim, "halfspace dimension mismatch");
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: HalfspaceSet) {
        assert_eq!(other.dim, self.dim);
        self.rows.extend(other.rows);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Halfspace] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when some constant row reads `0 <= c` with `c < 0`.
    pub fn is_infeasible(&self) -> bool {
        self.rows.iter().any(|r| r.is_constant() && r.offset < -FM_ZERO)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.rows.iter().all(|r| match r.signed_distance(v) {
            Some(d) => d <= tol,
            None => r.offset >= -tol,
        })
    }

    /// Unit-normal rows with trivially true constant rows and near-duplicates
    /// dropped. An infeasible constant row collapses the set to
    /// [`HalfspaceSet::infeasible`].
    pub fn normalized_dedup(&self) -> Self {
        let mut out: Vec<Halfspace> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let n = r.normalized();
            if n.is_constant() {
                if n.offset < -FM_ZERO {
                    return Self::infeasible(self.dim);
                }
                continue;
            }
            if !out.iter().any(|o| o.approx_eq(&n, DEDUP_TOL)) {
                out.push(n);
            }
        }
        Self { dim: self.dim, rows: out }
    }
}

/// A convex polygon with counter-clockwise vertices, or the whole plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    unbounded: bool,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self { vertices: Vec::new(), unbounded: false }
    }

    pub fn whole_plane() -> Self {
        Self { vertices: Vec::new(), unbounded: true }
    }

    /// Axis-aligned box `[min.x, max.x] x [min.y, max.y]`.
    pub fn from_box(min: Vec2, max: Vec2) -> Self {
        assert!(min.x <= max.x && min.y <= max.y, "inverted box");
        Self::from_vertices(vec![
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ])
    }

    /// Builds from the vertices of a convex polygon in either orientation.
    pub fn from_vertices(vertices: Vec<Vec2>) -> Self {
        Self { vertices: normalize_ring(vertices), unbounded: false }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn is_unbounded(&self) -> bool {
        self.unbounded
    }

    pub fn is_empty(&self) -> bool {
        !self.unbounded && self.vertices.is_empty()
    }

    /// Axis-aligned bounding box, `None` when empty or unbounded.
    pub fn bounds(&self) -> Option<(Vec2, Vec2)> {
        if self.unbounded || self.vertices.is_empty() {
            return None;
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Some((lo, hi))
    }

    fn scale(&self) -> f64 {
        self.vertices
            .iter()
            .fold(1.0, |m: f64, v| m.max(v.x.abs()).max(v.y.abs()))
    }
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn signed_area2(v: &[Vec2]) -> f64 {
    let n = v.len();
    (0..n).map(|i| cross(&v[i], &v[(i + 1) % n])).sum()
}

/// Drops repeated and collinear vertices and orients the ring CCW.
fn normalize_ring(mut v: Vec<Vec2>) -> Vec<Vec2> {
    let scale = v
        .iter()
        .fold(1.0, |m: f64, p| m.max(p.x.abs()).max(p.y.abs()));
    let dup = VERTEX_TOL * scale;

    let mut changed = true;
    while changed && v.len() >= 2 {
        changed = false;
        let mut out: Vec<Vec2> = Vec::with_capacity(v.len());
        for p in &v {
            if out.last().is_none_or(|q| (p - q).norm() > dup) {
                out.push(*p);
            }
        }
        while out.len() >= 2 && (out[0] - out[out.len() - 1]).norm() <= dup {
            out.pop();
        }
        if out.len() != v.len() {
            changed = true;
        }
        v = out;
        if v.len() < 3 {
            break;
        }
        let n = v.len();
        for i in 0..n {
            let prev = v[(i + n - 1) % n];
            let next = v[(i + 1) % n];
            let e1 = v[i] - prev;
            let e2 = next - v[i];
            let c = cross(&e1, &e2);
            if c.abs() <= VERTEX_TOL * e1.norm() * e2.norm() && e1.dot(&e2) >= 0.0 {
                v.remove(i);
                changed = true;
                break;
            }
        }
    }
    if v.len() >= 3 && signed_area2(&v) < 0.0 {
        v.reverse();
    }
    v
}

fn check_planar(hs: &Halfspace) {
    assert_eq!(hs.dim(), 2, "polygon clipping needs a 2-D halfspace");
}

/// `poly ∩ {v : normal · v <= offset}`; an empty intersection is the empty
/// polygon. Panics if `poly` is unbounded.
pub fn clip(poly: &ConvexPolygon, hs: &Halfspace) -> ConvexPolygon {
    check_planar(hs);
    assert!(!poly.is_unbounded(), "clip needs a bounded polygon");
    if poly.vertices.is_empty() {
        return ConvexPolygon::empty();
    }
    let nn = hs.normal_norm();
    if nn <= FM_ZERO {
        return if hs.offset >= -FM_ZERO { poly.clone() } else { ConvexPolygon::empty() };
    }
    let n = Vec2::new(hs.normal[0] / nn, hs.normal[1] / nn);
    let c = hs.offset / nn;
    let tol = VERTEX_TOL * poly.scale();
    let s: Vec<f64> = poly.vertices.iter().map(|v| n.dot(v) - c).collect();

    if s.iter().all(|&x| x <= tol) {
        return poly.clone();
    }
    if s.iter().all(|&x| x > tol) {
        return ConvexPolygon::empty();
    }

    let k = poly.vertices.len();
    let mut out = Vec::with_capacity(k + 1);
    for i in 0..k {
        let j = (i + 1) % k;
        let (p, q) = (poly.vertices[i], poly.vertices[j]);
        let (sp, sq) = (s[i], s[j]);
        let p_in = sp <= tol;
        let q_in = sq <= tol;
        if p_in {
            out.push(p);
        }
        if p_in != q_in {
            let t = (sp / (sp - sq)).clamp(0.0, 1.0);
            out.push(p + (q - p) * t);
        }
    }
    ConvexPolygon::from_vertices(out)
}

/// Clips by every row in turn.
pub fn intersect_all(poly: &ConvexPolygon, hss: &HalfspaceSet) -> ConvexPolygon {
    assert_eq!(hss.dim(), 2, "eliminate auxiliary variables first");
    let mut cur = poly.clone();
    for row in hss.rows() {
        if cur.is_empty() {
            break;
        }
        cur = clip(&cur, row);
    }
    cur
}

/// Shoelace area; zero for empty and degenerate polygons.
pub fn area(poly: &ConvexPolygon) -> Result<f64, GeometryError> {
    if poly.unbounded {
        return Err(GeometryError::Unbounded);
    }
    if poly.vertices.len() < 3 {
        return Ok(0.0);
    }
    Ok((0.5 * signed_area2(&poly.vertices)).max(0.0))
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// True iff `point` lies within `tol` of the closed polygon.
pub fn contains(poly: &ConvexPolygon, point: &Vec2, tol: f64) -> bool {
    if poly.unbounded {
        return true;
    }
    let v = &poly.vertices;
    match v.len() {
        0 => false,
        1 => (point - v[0]).norm() <= tol,
        2 => segment_distance(point, &v[0], &v[1]) <= tol,
        n => (0..n).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            let e = b - a;
            cross(&e, &(point - a)) / e.norm() >= -tol
        }),
    }
}

struct FmRow {
    coeffs: Vec<f64>,
    offset: f64,
    strict: bool,
    history: u128,
}

enum Normalized {
    Row(FmRow),
    AlwaysTrue,
    Infeasible,
}

fn normalize_fm(mut row: FmRow) -> Normalized {
    let n = row.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= FM_ZERO {
        return if row.offset < -FM_ZERO { Normalized::Infeasible } else { Normalized::AlwaysTrue };
    }
    row.coeffs.iter_mut().for_each(|x| {
        *x /= n;
        if x.abs() <= FM_ZERO {
            *x = 0.0;
        }
    });
    row.offset /= n;
    Normalized::Row(row)
}

fn push_dedup(rows: &mut Vec<FmRow>, row: FmRow) {
    let dup = rows.iter_mut().find(|r| {
        (r.offset - row.offset).abs() <= DEDUP_TOL
            && r.coeffs.iter().zip(&row.coeffs).all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
    });
    match dup {
        Some(existing) => {
            if row.history.count_ones() < existing.history.count_ones() {
                existing.history = row.history;
            }
            existing.strict &= row.strict;
        }
        None => rows.push(row),
    }
}

/// Fourier-Motzkin elimination of the trailing `num_eta` variables with the
/// default row cap.
pub fn eliminate_eta(hss: &HalfspaceSet, num_eta: usize) -> Result<HalfspaceSet, GeometryError> {
    eliminate_eta_capped(hss, num_eta, FM_ROW_CAP)
}

/// Projects `hss` onto its leading `dim - num_eta` variables.
///
/// Rows are unit-normalized and deduplicated after every pass, and pairs whose
/// ancestry exceeds `eliminated + 1` original rows are discarded (Chernikov's
/// rule), which only removes rows implied by the rest. An infeasible system
/// comes back as [`HalfspaceSet::infeasible`].
pub fn eliminate_eta_capped(
    hss: &HalfspaceSet,
    num_eta: usize,
    cap: usize,
) -> Result<HalfspaceSet, GeometryError> {
    assert!(num_eta <= hss.dim(), "cannot eliminate more variables than exist");
    let keep = hss.dim() - num_eta;
    let track = hss.len() <= 128;

    let mut rows: Vec<FmRow> = Vec::with_capacity(hss.len());
    for (i, r) in hss.rows().iter().enumerate() {
        let row = FmRow {
            coeffs: r.normal.clone(),
            offset: r.offset,
            strict: r.strict,
            history: if track { 1u128 << i } else { 0 },
        };
        match normalize_fm(row) {
            Normalized::Row(row) => push_dedup(&mut rows, row),
            Normalized::AlwaysTrue => {}
            Normalized::Infeasible => return Ok(HalfspaceSet::infeasible(keep)),
        }
    }

    for step in 0..num_eta {
        let var = hss.dim() - 1 - step;
        let (mut zero, mut pos, mut neg) = (Vec::new(), Vec::new(), Vec::new());
        for row in rows {
            let c = row.coeffs[var];
            if c.abs() <= FM_ZERO {
                zero.push(row);
            } else if c > 0.0 {
                pos.push(row);
            } else {
                neg.push(row);
            }
        }

        let mut next: Vec<FmRow> = Vec::with_capacity(zero.len() + pos.len() * neg.len());
        for mut row in zero {
            row.coeffs.truncate(var);
            push_dedup(&mut next, row);
        }
        let max_history = (step + 2) as u32;
        for p in &pos {
            for q in &neg {
                let history = p.history | q.history;
                if track && history.count_ones() > max_history {
                    continue;
                }
                let (wp, wq) = (1.0 / p.coeffs[var], -1.0 / q.coeffs[var]);
                let combined = FmRow {
                    coeffs: (0..var).map(|k| wp * p.coeffs[k] + wq * q.coeffs[k]).collect(),
                    offset: wp * p.offset + wq * q.offset,
                    strict: p.strict || q.strict,
                    history,
                };
                match normalize_fm(combined) {
                    Normalized::Row(row) => push_dedup(&mut next, row),
                    Normalized::AlwaysTrue => {}
                    Normalized::Infeasible => return Ok(HalfspaceSet::infeasible(keep)),
                }
                if next.len() > cap {
                    return Err(GeometryError::ProjectionBlowUp { rows: next.len(), cap });
                }
            }
        }
        rows = next;
    }

    Ok(HalfspaceSet {
        dim: keep,
        rows: rows
            .into_iter()
            .map(|r| Halfspace { normal: r.coeffs, offset: r.offset, strict: r.strict })
            .collect(),
    })
}

/// Drops rows that do not change the region once it is clipped to `bbox`.
pub fn remove_redundant(hss: &HalfspaceSet, bbox: &ConvexPolygon) -> HalfspaceSet {
    assert_eq!(hss.dim(), 2);
    let reference = area(&intersect_all(bbox, hss)).unwrap_or(0.0);
    let mut kept: Vec<Halfspace> = hss.rows().to_vec();
    let mut i = 0;
    while i < kept.len() {
        let without = HalfspaceSet {
            dim: 2,
            rows: kept.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect(),
        };
        let a = area(&intersect_all(bbox, &without)).unwrap_or(0.0);
        if (a - reference).abs() <= 1e-12 * reference.max(1.0) {
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    HalfspaceSet { dim: 2, rows: kept }
}
