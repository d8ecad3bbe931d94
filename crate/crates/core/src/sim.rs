//! Closed-loop single-integrator world under the CBF-QP controller.
//!
//! Every robot solves its own QP against all other robots and the static
//! obstacles, then all positions advance with one explicit Euler step.
//! Static obstacles behave as robots that never move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{build_constraints, solve_qp, ControlError, SafetyParams, TaskFamily};
use crate::linalg::Vec2;
use crate::observer::Measurement;

/// Slack allowed on the safety distance from time discretization.
pub const SAFETY_SLACK: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("robot {robot} at t = {t}: {source}")]
    Control {
        robot: usize,
        t: f64,
        #[source]
        source: ControlError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub start: Vec2,
    pub goal: Vec2,
    #[serde(default = "default_gain")]
    pub gain: f64,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl BoxBounds {
    pub fn contains(&self, p: &Vec2) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn area(&self) -> f64 {
        let s = self.max - self.min;
        s[0] * s[1]
    }

    pub fn diameter(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub static_obstacles: Vec<Vec2>,
    #[serde(default)]
    pub safety: SafetyParams,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    pub theta0_box: BoxBounds,
    #[serde(default)]
    pub seed: u64,
    /// Report velocities as position differences instead of the
    /// controller's own output.
    #[serde(default)]
    pub finite_difference_velocity: bool,
}

fn default_dt() -> f64 {
    0.02
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return err(format!("duration must be positive, got {}", self.duration));
        }
        if self.robots.is_empty() {
            return err("no robots".into());
        }
        self.safety.validate().map_err(SimError::Config)?;
        let bx = &self.theta0_box;
        if !(bx.min[0] < bx.max[0] && bx.min[1] < bx.max[1]) {
            return err("theta0_box is empty".into());
        }
        let ds = self.safety.safety_distance;
        let bodies: Vec<Vec2> =
            self.robots.iter().map(|r| r.start).chain(self.static_obstacles.iter().copied()).collect();
        for (i, r) in self.robots.iter().enumerate() {
            if !(r.gain > 0.0) {
                return err(format!("robot {i}: gain must be positive"));
            }
            if !bx.contains(&r.goal) {
                return err(format!("robot {i}: goal outside theta0_box"));
            }
            for (j, p) in bodies.iter().enumerate().skip(i + 1) {
                if (r.start - p).norm() <= ds {
                    return err(format!("robot {i} starts within the safety distance of body {j}"));
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, robot: usize) -> TaskFamily {
        TaskFamily::goal_reaching(self.robots[robot].gain)
    }

    pub fn num_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            t: 0.0,
            positions: self.robots.iter().map(|r| r.start).collect(),
            last_controls: vec![Vec2::zeros(); self.robots.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub positions: Vec<Vec2>,
    pub last_controls: Vec<Vec2>,
}

/// Obstacles seen by robot `i`: the other robots in index order, then the
/// static obstacles.
pub fn obstacles_for(i: usize, positions: &[Vec2], statics: &[Vec2]) -> Vec<Vec2> {
    positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| *p)
        .chain(statics.iter().copied())
        .collect()
}

/// Safe controls of every robot at the current positions.
pub fn controls(ws: &WorldState, cfg: &ScenarioConfig) -> Result<Vec<Vec2>, SimError> {
    (0..cfg.robots.len())
        .into_par_iter()
        .map(|i| {
            let x = ws.positions[i];
            let obstacles = obstacles_for(i, &ws.positions, &cfg.static_obstacles);
            let wrap = |source| SimError::Control { robot: i, t: ws.t, source };
            let cs = build_constraints(&x, &obstacles, &cfg.safety).map_err(wrap)?;
            let u_hat = cfg.task(i).nominal(&x, &cfg.robots[i].goal);
            Ok(solve_qp(&u_hat, &cs).map_err(wrap)?.u_star)
        })
        .collect()
}

/// `x ← x + u* dt` for all robots at once.
pub fn step_world(ws: &WorldState, cfg: &ScenarioConfig) -> Result<WorldState, SimError> {
    let u = controls(ws, cfg)?;
    Ok(WorldState {
        t: ws.t + cfg.dt,
        positions: ws.positions.iter().zip(&u).map(|(x, u)| x + u * cfg.dt).collect(),
        last_controls: u,
    })
}

fn min_separation(positions: &[Vec2], statics: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        for q in positions[i + 1..].iter().chain(statics) {
            best = best.min((p - q).norm());
        }
    }
    best
}

/// Result of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    /// World states at every step, starting with the initial one.
    pub trace: Vec<WorldState>,
    /// One stream per robot, one entry per step.
    pub measurements: Vec<Vec<Measurement>>,
    pub min_separation: f64,
    pub safety_violations: usize,
}

impl SimLog {
    pub fn final_positions(&self) -> &[Vec2] {
        &self.trace.last().expect("trace has the initial state").positions
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimLog, SimError> {
    cfg.validate()?;
    let n = cfg.robots.len();
    let floor = cfg.safety.safety_distance - SAFETY_SLACK;
    let mut ws = cfg.initial_state();
    let mut trace = vec![ws.clone()];
    let mut measurements = vec![Vec::new(); n];
    let mut min_sep = min_separation(&ws.positions, &cfg.static_obstacles);
    let mut violations = 0;

    for _ in 0..cfg.num_steps() {
        let next = step_world(&ws, cfg)?;
        for (i, stream) in measurements.iter_mut().enumerate() {
            let u_star = if cfg.finite_difference_velocity {
                (next.positions[i] - ws.positions[i]) / cfg.dt
            } else {
                next.last_controls[i]
            };
            stream.push(Measurement {
                t: ws.t,
                x: ws.positions[i],
                u_star,
                obstacle_positions: obstacles_for(i, &ws.positions, &cfg.static_obstacles),
            });
        }
        let sep = min_separation(&next.positions, &cfg.static_obstacles);
        if sep < floor {
            violations += 1;
        }
        min_sep = min_sep.min(sep);
        trace.push(next.clone());
        ws = next;
    }
    Ok(SimLog { trace, measurements, min_separation: min_sep, safety_violations: violations })
}

pub const BUNDLED_NAMES: [&str; 3] = ["corridor", "staggered", "four_robot_exchange"];

/// Scenarios shipped with the crate.
pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    let text = match name.trim_end_matches(".json") {
        "corridor" => include_str!("../scenarios/corridor.json"),
        "staggered" => include_str!("../scenarios/staggered.json"),
        "four_robot_exchange" => include_str!("../scenarios/four_robot_exchange.json"),
        _ => return None,
    };
    Some(ScenarioConfig::from_json(text).expect("bundled scenario is valid"))
}

/// Random scenario inside a 10 m square: goals and starts are kept clear of
/// each other and of the obstacles.
pub fn random_scenario(seed: u64, num_robots: usize, num_obstacles: usize) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let safety = SafetyParams::default();
    let clearance = safety.safety_distance + 0.3;
    let mut bodies: Vec<Vec2> = Vec::new();
    let mut goals: Vec<Vec2> = Vec::new();
    let sample = |rng: &mut ChaCha8Rng, taken: &[Vec2]| loop {
        let p = Vec2::new(rng.gen_range(0.5..9.5), rng.gen_range(0.5..9.5));
        if taken.iter().all(|q| (p - q).norm() > clearance) {
            return p;
        }
    };
    let mut statics = Vec::new();
    for _ in 0..num_obstacles {
        let p = sample(&mut rng, &bodies);
        bodies.push(p);
        statics.push(p);
    }
    let mut robots = Vec::new();
    for _ in 0..num_robots {
        let start = sample(&mut rng, &bodies);
        bodies.push(start);
        let mut taken = statics.clone();
        taken.extend(&goals);
        let goal = sample(&mut rng, &taken);
        goals.push(goal);
        robots.push(RobotSpec { start, goal, gain: rng.gen_range(0.5..1.5) });
    }
    ScenarioConfig {
        name: format!("random-{seed}"),
        description: String::new(),
        robots,
        static_obstacles: statics,
        safety,
        dt: default_dt(),
        duration: 10.0,
        theta0_box: BoxBounds { min: Vec2::zeros(), max: Vec2::new(10.0, 10.0) },
        seed,
        finite_difference_velocity: false,
    }
}
