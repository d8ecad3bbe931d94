//! Unscented Kalman filter over the task parameter, used as a baseline.
//!
//! The state is `θ` alone with a random-walk model; the measurement is the
//! robot's safe control `u* = QP(Cθ + d, A, b)`, which is piecewise affine
//! in `θ`.

use nalgebra::{Matrix2, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{build_constraints, solve_qp, ControlError, SafetyParams, TaskFamily};
use crate::linalg::Vec2;
use crate::observer::Measurement;

const N: usize = 2;
const NSIGMA: usize = 2 * N + 1;
const COV_JITTER: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UkfError {
    #[error("measurement model failed: {0}")]
    Measurement(#[from] ControlError),
    #[error("covariance lost positive definiteness")]
    NotPositiveDefinite,
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfParams {
    /// Process noise `Q = q I`.
    pub q: f64,
    /// Measurement noise `R = r I`.
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { q: 1e-8, r: 1e-6, alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

impl UkfParams {
    fn lambda(&self) -> f64 {
        self.alpha * self.alpha * (N as f64 + self.kappa) - N as f64
    }

    /// Mean and covariance weights.
    pub fn weights(&self) -> ([f64; NSIGMA], [f64; NSIGMA]) {
        let lam = self.lambda();
        let s = N as f64 + lam;
        let mut wm = [0.5 / s; NSIGMA];
        let mut wc = wm;
        wm[0] = lam / s;
        wc[0] = lam / s + (1.0 - self.alpha * self.alpha + self.beta);
        (wm, wc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfState {
    pub mean: Vec2,
    pub cov: Matrix2<f64>,
}

impl UkfState {
    pub fn new(mean: Vec2, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }

    /// Centre of the box with the variance of a uniform distribution over it.
    pub fn from_box(min: Vec2, max: Vec2) -> Self {
        let side = max - min;
        let cov = Matrix2::from_diagonal(&side.component_mul(&side).scale(1.0 / 12.0));
        Self { mean: (min + max) * 0.5, cov }
    }

    pub fn error_norm(&self, truth: &Vec2) -> f64 {
        (self.mean - truth).norm()
    }
}

fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// Random walk: mean unchanged, `P ← P + Q`.
pub fn predict(state: &UkfState, params: &UkfParams) -> UkfState {
    UkfState { mean: state.mean, cov: state.cov + Matrix2::identity() * params.q }
}

pub fn sigma_points(state: &UkfState, params: &UkfParams) -> Result<[Vec2; NSIGMA], UkfError> {
    let scaled = state.cov * (N as f64 + params.lambda());
    let chol = scaled
        .cholesky()
        .or_else(|| (scaled + Matrix2::identity() * COV_JITTER).cholesky())
        .ok_or(UkfError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut pts = [state.mean; NSIGMA];
    for i in 0..N {
        let col: Vec2 = l.column(i).into();
        pts[1 + i] = state.mean + col;
        pts[1 + N + i] = state.mean - col;
    }
    Ok(pts)
}

/// One predict/update cycle against measurement `y` through `h`.
pub fn ukf_step<F>(state: &UkfState, y: &Vec2, params: &UkfParams, h: F) -> Result<UkfState, UkfError>
where
    F: Fn(&Vec2) -> Result<Vec2, UkfError>,
{
    let prior = predict(state, params);
    let chi = sigma_points(&prior, params)?;
    let (wm, wc) = params.weights();
    let mut ys = [Vec2::zeros(); NSIGMA];
    for (yi, x) in ys.iter_mut().zip(&chi) {
        *yi = h(x)?;
    }

    // Sums shifted by the centre point; the weights are large with small α.
    let y0 = ys[0];
    let y_hat = y0 + (1..NSIGMA).fold(Vec2::zeros(), |acc, i| acc + (ys[i] - y0) * wm[i]);
    let mut pyy = Matrix2::identity() * params.r;
    let mut pxy = Matrix2::zeros();
    for i in 0..NSIGMA {
        let dy = ys[i] - y_hat;
        let dx = chi[i] - prior.mean;
        pyy += dy * dy.transpose() * wc[i];
        pxy += dx * dy.transpose() * wc[i];
    }
    let pyy = symmetrize(&pyy);
    let pyy_inv = pyy.try_inverse().ok_or(UkfError::SingularInnovation)?;
    let gain = pxy * pyy_inv;
    let mean = prior.mean + gain * (y - y_hat);
    let cov: SMatrix<f64, 2, 2> = prior.cov - gain * pyy * gain.transpose();
    let cov = symmetrize(&cov) + Matrix2::identity() * COV_JITTER;
    if cov.cholesky().is_none() {
        return Err(UkfError::NotPositiveDefinite);
    }
    Ok(UkfState { mean, cov })
}

/// UKF that uses the hypothesized task family and the QP as its
/// measurement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpUkf {
    pub state: UkfState,
    pub params: UkfParams,
    pub task: TaskFamily,
    pub safety: SafetyParams,
}

impl QpUkf {
    pub fn new(state: UkfState, params: UkfParams, task: TaskFamily, safety: SafetyParams) -> Self {
        Self { state, params, task, safety }
    }

    /// Updates from one measurement. On failure the state is left unchanged.
    pub fn update(&mut self, m: &Measurement) -> Result<(), UkfError> {
        let cs = build_constraints(&m.x, &m.obstacle_positions, &self.safety)?;
        let task = self.task;
        let h = |theta: &Vec2| -> Result<Vec2, UkfError> {
            Ok(solve_qp(&task.nominal(&m.x, theta), &cs)?.u_star)
        };
        self.state = ukf_step(&self.state, &m.u_star, &self.params, h)?;
        Ok(())
    }
}
