//! Per-robot observer and UKF runs over simulated measurement streams.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Vec2;
use crate::observer::{
    CaseId, Measurement, ObserverConfig, ObserverError, RegionEstimate, StepRecord,
    FINITE_DIFFERENCE_EPSILON_SCALE,
};
use crate::polytope;
use crate::sim::ScenarioConfig;
use crate::ukf::{QpUkf, UkfParams, UkfState};

/// Containment tolerance used for reporting.
pub const CONTAINMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub rank_tol: f64,
    pub cadence: usize,
    pub with_ukf: bool,
    pub ukf: UkfParams,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            rank_tol: crate::linalg::DEFAULT_RANK_TOL,
            cadence: 1,
            with_ukf: false,
            ukf: UkfParams::default(),
        }
    }
}

impl PipelineOptions {
    pub fn observer_config(&self, cfg: &ScenarioConfig, robot: usize) -> ObserverConfig {
        let mut oc = ObserverConfig::new(cfg.task(robot), cfg.safety);
        oc.rank_tol = self.rank_tol;
        oc.cadence = self.cadence;
        if cfg.finite_difference_velocity {
            oc.epsilon_scale = FINITE_DIFFERENCE_EPSILON_SCALE;
        }
        oc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UkfRow {
    pub t: f64,
    pub mean: Vec2,
    pub cov_trace: f64,
    pub error_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotRun {
    pub robot: usize,
    pub goal: Vec2,
    pub records: Vec<StepRecord>,
    pub contained: Vec<bool>,
    pub ukf: Vec<UkfRow>,
    pub estimate: RegionEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFailure {
    pub robot: usize,
    pub error: ObserverError,
}

/// Runs the region observer (and optionally the UKF) over one stream.
pub fn run_robot(
    cfg: &ScenarioConfig,
    robot: usize,
    stream: &[Measurement],
    opts: &PipelineOptions,
) -> Result<RobotRun, ObserverError> {
    let oc = opts.observer_config(cfg, robot);
    let goal = cfg.robots[robot].goal;
    let bx = cfg.theta0_box;
    let mut estimate = RegionEstimate::from_box(bx.min, bx.max);
    let mut ukf = opts
        .with_ukf
        .then(|| QpUkf::new(UkfState::from_box(bx.min, bx.max), opts.ukf, cfg.task(robot), cfg.safety));
    let mut records = Vec::with_capacity(stream.len());
    let mut contained = Vec::with_capacity(stream.len());
    let mut ukf_rows = Vec::new();

    for m in stream {
        let rec = estimate.step(m, &oc)?;
        contained.push(polytope::contains(&estimate.theta_polygon, &goal, CONTAINMENT_TOL));
        records.push(rec);
        if let Some(f) = ukf.as_mut() {
            if let Err(e) = f.update(m) {
                log::warn!("robot {robot}, t = {}: UKF update skipped: {e}", m.t);
            }
            ukf_rows.push(UkfRow {
                t: m.t,
                mean: f.state.mean,
                cov_trace: f.state.cov.trace(),
                error_norm: f.state.error_norm(&goal),
            });
        }
    }
    Ok(RobotRun { robot, goal, records, contained, ukf: ukf_rows, estimate })
}

/// Fans the per-robot pipelines out over the worker pool.
pub fn run_all(
    cfg: &ScenarioConfig,
    streams: &[Vec<Measurement>],
    opts: &PipelineOptions,
) -> Result<Vec<RobotRun>, PipelineFailure> {
    streams
        .par_iter()
        .enumerate()
        .map(|(robot, s)| run_robot(cfg, robot, s, opts).map_err(|error| PipelineFailure { robot, error }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub robot: usize,
    pub goal: Vec2,
    pub area_history: Vec<(f64, f64)>,
    pub ukf_error_history: Vec<(f64, f64)>,
    pub containment: Vec<bool>,
    pub all_contained: bool,
    pub case_timeline: Vec<(f64, Option<CaseId>)>,
    pub final_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub robots: Vec<RobotReport>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn from_runs(scenario: &str, runs: &[RobotRun]) -> Self {
        let robots = runs
            .iter()
            .map(|r| RobotReport {
                robot: r.robot,
                goal: r.goal,
                area_history: r.records.iter().map(|x| (x.t, x.area)).collect(),
                ukf_error_history: r.ukf.iter().map(|u| (u.t, u.error_norm)).collect(),
                containment: r.contained.clone(),
                all_contained: r.contained.iter().all(|&c| c),
                case_timeline: r.records.iter().map(|x| (x.t, x.case_id)).collect(),
                final_area: r.estimate.area(),
            })
            .collect();
        Self { scenario: scenario.to_string(), robots, artifacts: Vec::new() }
    }
}
