//! Feasible-region identification of a robot's task parameter.
//!
//! Each measurement (ego position, ego velocity, obstacle positions) is
//! turned into an instantaneous feasible set `Ω(t)` from the KKT conditions
//! of the robot's QP, and the running estimate is `Θ(t) = Θ₀ ∩ ⋂ Ω(τ)`.
//! One [`RegionEstimate`] is kept per robot.

pub mod cases;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{build_constraints, ConstraintSystem, ControlError, SafetyParams, TaskFamily};
use crate::linalg::{rank_with_tol, thin_svd, MatKx2, Vec2, DEFAULT_RANK_TOL};
use crate::polytope::{self, ConvexPolygon, GeometryError, HalfspaceSet};

pub use cases::{
    decompose_case_a, decompose_case_b, decompose_case_c, omega_case_a, omega_case_b, omega_case_c,
    omega_case_d, omega_case_e,
};

/// Width of the band around `rank_tol` (as a factor either way) in which
/// the rank-one and rank-two readings of an active block are both computed.
const RANK_AMBIGUITY_FACTOR: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("singular constraint in active block")]
    SingularConstraint,
    #[error("contradiction at t = {t}: feasible region became empty")]
    Contradiction { t: f64 },
    #[error("measurement time {t} does not follow {previous}")]
    NonMonotoneTime { t: f64, previous: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    pub x: Vec2,
    pub u_star: Vec2,
    pub obstacle_positions: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseId {
    A,
    B,
    C,
    D,
    E,
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Output of [`detect_active_set`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveSplit {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    /// Some row is violated by more than `ε`: the measurement cannot come
    /// from the assumed controller.
    pub inconsistent: bool,
}

/// Active set from residuals: `j` is active iff `|aⱼ·u* − bⱼ| < ε`.
pub fn detect_active_set(cs: &ConstraintSystem, u_star: &Vec2, epsilon: f64) -> ActiveSplit {
    assert!(epsilon > 0.0);
    let mut split = ActiveSplit::default();
    for (j, r) in cs.residuals(u_star).into_iter().enumerate() {
        if r.abs() < epsilon {
            split.active.push(j);
        } else {
            if r > 0.0 {
                split.inconsistent = true;
            }
            split.inactive.push(j);
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseClassification {
    pub case_id: CaseId,
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub k: usize,
    pub rank: Option<usize>,
    /// `σ₂/σ₁` of the active block when `K ≥ 2`.
    pub sigma_ratio: Option<f64>,
}

impl CaseClassification {
    /// The second singular value sits close enough to the rank threshold
    /// that the other reading is also plausible.
    pub fn is_rank_ambiguous(&self, rank_tol: f64) -> bool {
        self.sigma_ratio.is_some_and(|r| {
            r > rank_tol / RANK_AMBIGUITY_FACTOR && r <= rank_tol * RANK_AMBIGUITY_FACTOR
        })
    }
}

fn case_for(k: usize, rank: usize) -> CaseId {
    match (k, rank) {
        (0, _) => CaseId::A,
        (1, _) => CaseId::B,
        (_, 1) => CaseId::C,
        (2, _) => CaseId::D,
        _ => CaseId::E,
    }
}

/// Table mapping from active count and rank to a case.
pub fn classify(a_ac: &MatKx2, rank_tol: f64) -> (CaseId, Option<usize>, Option<f64>) {
    let k = a_ac.nrows();
    if k == 0 {
        return (CaseId::A, None, None);
    }
    let svd = thin_svd(a_ac);
    let rank = rank_with_tol(&svd, rank_tol).max(1);
    let ratio = (k >= 2).then(|| svd.singular_values[1] / svd.sigma_max());
    (case_for(k, rank), Some(rank), ratio)
}

pub fn classify_split(cs: &ConstraintSystem, split: &ActiveSplit, rank_tol: f64) -> CaseClassification {
    let (case_id, rank, sigma_ratio) = classify(&cs.a.select(&split.active), rank_tol);
    CaseClassification {
        case_id,
        active: split.active.clone(),
        inactive: split.inactive.clone(),
        k: split.active.len(),
        rank,
        sigma_ratio,
    }
}

/// `u* = Gθ + f`; undefined in cases D and E where `u*` does not depend on `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineControlModel {
    pub g: Matrix2<f64>,
    pub f: Vec2,
    pub defined: bool,
}

impl AffineControlModel {
    pub fn new(g: Matrix2<f64>, f: Vec2) -> Self {
        Self { g, f, defined: true }
    }

    pub fn undefined() -> Self {
        Self { g: Matrix2::zeros(), f: Vec2::zeros(), defined: false }
    }

    pub fn predict(&self, theta: &Vec2) -> Vec2 {
        self.g * theta + self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    pub task: TaskFamily,
    pub safety: SafetyParams,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    /// Intersect `Ω` into `Θ` on every `cadence`-th measurement.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Multiplies the activity threshold; raised when velocities come from
    /// finite differences rather than the controller itself.
    #[serde(default = "default_epsilon_scale")]
    pub epsilon_scale: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}
fn default_cadence() -> usize {
    1
}
fn default_epsilon_scale() -> f64 {
    1.0
}

/// Threshold inflation used with finite-difference velocities.
pub const FINITE_DIFFERENCE_EPSILON_SCALE: f64 = 1e3;

impl ObserverConfig {
    pub fn new(task: TaskFamily, safety: SafetyParams) -> Self {
        Self {
            task,
            safety,
            rank_tol: DEFAULT_RANK_TOL,
            cadence: 1,
            epsilon_scale: 1.0,
        }
    }

    /// Activity threshold for one constraint system: `ε (1 + ‖b‖∞)`.
    pub fn epsilon_for(&self, cs: &ConstraintSystem) -> f64 {
        self.safety.epsilon * self.epsilon_scale * (1.0 + cs.b_norm_inf())
    }
}

/// Everything derived from one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaStep {
    pub classification: CaseClassification,
    pub model: AffineControlModel,
    /// Parameter-only rows, unit-normalized and deduplicated.
    pub rows: HalfspaceSet,
    /// The rank reading was ambiguous; only rows common to both readings kept.
    pub rank_ambiguous: bool,
    /// Norm of the out-of-range part of `b_ac` in case C.
    pub inconsistency: f64,
}

fn omega_for_case(
    case_id: CaseId,
    cs: &ConstraintSystem,
    active: &[usize],
    inactive: &[usize],
    c: &Matrix2<f64>,
    d: &Vec2,
) -> Result<(AffineControlModel, HalfspaceSet, f64), ObserverError> {
    Ok(match case_id {
        CaseId::A => (decompose_case_a(c, d), omega_case_a(cs, c, d), 0.0),
        CaseId::B => {
            let i = active[0];
            let model = decompose_case_b(&cs.a.row(i), cs.b[i], c, d)?;
            (model, omega_case_b(&model, cs, i, inactive, c, d), 0.0)
        }
        CaseId::C => {
            let sub = cs.select(active);
            let (model, incons) = decompose_case_c(&sub.a, &sub.b, c, d)?;
            (model, omega_case_c(cs, active, inactive, c, d)?, incons)
        }
        CaseId::D => (AffineControlModel::undefined(), omega_case_d(cs, active, c, d)?, 0.0),
        CaseId::E => (AffineControlModel::undefined(), omega_case_e(cs, active, c, d)?, 0.0),
    })
}

fn common_rows(a: &HalfspaceSet, b: &HalfspaceSet) -> HalfspaceSet {
    let rows = a
        .rows()
        .iter()
        .filter(|r| {
            b.rows().iter().any(|s| {
                (r.offset - s.offset).abs() <= 1e-9
                    && r.normal.iter().zip(&s.normal).all(|(x, y)| (x - y).abs() <= 1e-9)
            })
        })
        .cloned()
        .collect();
    HalfspaceSet::from_rows(a.dim(), rows).expect("same dimension")
}

/// Builds `Ω(t)` for one measurement: constraints, active set, case and
/// case-specific rows.
pub fn compute_omega(m: &Measurement, cfg: &ObserverConfig) -> Result<OmegaStep, ObserverError> {
    let cs = build_constraints(&m.x, &m.obstacle_positions, &cfg.safety)?;
    omega_for_system(&cs, &m.x, &m.u_star, cfg)
}

/// Same as [`compute_omega`] for an explicit constraint system.
pub fn omega_for_system(
    cs: &ConstraintSystem,
    x: &Vec2,
    u_star: &Vec2,
    cfg: &ObserverConfig,
) -> Result<OmegaStep, ObserverError> {
    let split = detect_active_set(cs, u_star, cfg.epsilon_for(cs));
    omega_from_split(x, cfg, cs, &split)
}

fn omega_from_split(
    x: &Vec2,
    cfg: &ObserverConfig,
    cs: &ConstraintSystem,
    split: &ActiveSplit,
) -> Result<OmegaStep, ObserverError> {
    let classification = classify_split(cs, split, cfg.rank_tol);
    let c = cfg.task.task_matrix(x);
    let d = cfg.task.task_offset(x);
    let (active, inactive) = (&classification.active, &classification.inactive);

    let ambiguous = classification.is_rank_ambiguous(cfg.rank_tol);
    let (model, rows, inconsistency) = if ambiguous {
        let k = classification.k;
        let (_, rank_one, _) = omega_for_case(CaseId::C, cs, active, inactive, &c, &d)?;
        let full = case_for(k, 2);
        let (_, rank_two, _) = omega_for_case(full, cs, active, inactive, &c, &d)?;
        let rows = common_rows(&rank_one.normalized_dedup(), &rank_two.normalized_dedup());
        (AffineControlModel::undefined(), rows, 0.0)
    } else {
        let (model, rows, incons) =
            omega_for_case(classification.case_id, cs, active, inactive, &c, &d)?;
        (model, rows.normalized_dedup(), incons)
    };
    if inconsistency > cfg.epsilon_for(cs) {
        log::warn!("active right-hand side inconsistent by {inconsistency:e}");
    }

    Ok(OmegaStep { classification, model, rows, rank_ambiguous: ambiguous, inconsistency })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Applied,
    /// Off-cadence measurement; `Ω` computed but not intersected.
    SkippedCadence,
    /// Residuals contradict the assumed controller; nothing applied.
    SkippedInconsistent,
}

/// Per-step log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub case_id: Option<CaseId>,
    pub active: Vec<usize>,
    pub omega_rows: HalfspaceSet,
    pub polygon: ConvexPolygon,
    pub area: f64,
    pub status: StepStatus,
}

/// `Θ(t)` together with its history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimate {
    pub theta_polygon: ConvexPolygon,
    pub omega_log: Vec<(f64, HalfspaceSet)>,
    pub area_history: Vec<(f64, f64)>,
    steps_seen: usize,
}

impl RegionEstimate {
    /// Starts from the prior box `Θ₀`.
    pub fn new(theta0: ConvexPolygon) -> Self {
        assert!(!theta0.is_unbounded(), "Θ₀ must be bounded");
        Self {
            theta_polygon: theta0,
            omega_log: Vec::new(),
            area_history: Vec::new(),
            steps_seen: 0,
        }
    }

    pub fn from_box(min: Vec2, max: Vec2) -> Self {
        Self::new(ConvexPolygon::from_box(min, max))
    }

    pub fn area(&self) -> f64 {
        polytope::area(&self.theta_polygon).expect("bounded")
    }

    /// Folds one measurement into the estimate.
    ///
    /// On a contradiction (the region would become empty) the estimate is
    /// left unchanged and the error returned.
    pub fn step(&mut self, m: &Measurement, cfg: &ObserverConfig) -> Result<StepRecord, ObserverError> {
        if let Some(&(prev, _)) = self.area_history.last() {
            if m.t <= prev {
                return Err(ObserverError::NonMonotoneTime { t: m.t, previous: prev });
            }
        }
        let on_cadence = self.steps_seen % cfg.cadence.max(1) == 0;

        let cs = build_constraints(&m.x, &m.obstacle_positions, &cfg.safety)?;
        let split = detect_active_set(&cs, &m.u_star, cfg.epsilon_for(&cs));
        if split.inconsistent {
            log::warn!("t = {}: measurement violates a constraint, step skipped", m.t);
            let record = self.record(m.t, None, split.active, HalfspaceSet::new(2), StepStatus::SkippedInconsistent);
            return Ok(record);
        }
        let omega = omega_from_split(&m.x, cfg, &cs, &split)?;
        let case_id = Some(omega.classification.case_id);
        let active = omega.classification.active.clone();

        if !on_cadence {
            return Ok(self.record(m.t, case_id, active, omega.rows, StepStatus::SkippedCadence));
        }
        let next = polytope::intersect_all(&self.theta_polygon, &omega.rows);
        if next.is_empty() {
            return Err(ObserverError::Contradiction { t: m.t });
        }
        self.theta_polygon = next;
        self.omega_log.push((m.t, omega.rows.clone()));
        Ok(self.record(m.t, case_id, active, omega.rows, StepStatus::Applied))
    }

    fn record(
        &mut self,
        t: f64,
        case_id: Option<CaseId>,
        active: Vec<usize>,
        omega_rows: HalfspaceSet,
        status: StepStatus,
    ) -> StepRecord {
        let area = self.area();
        self.steps_seen += 1;
        self.area_history.push((t, area));
        StepRecord {
            t,
            case_id,
            active,
            omega_rows,
            polygon: self.theta_polygon.clone(),
            area,
            status,
        }
    }
}
