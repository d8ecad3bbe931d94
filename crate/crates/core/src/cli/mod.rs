//! Command-line driver: `simulate`, `identify`, `compare`, `render`.
//!
//! Output layout (all inside `--out-dir`):
//!
//! | file | written by | content |
//! |---|---|---|
//! | `scenario.json` | all but render | resolved scenario |
//! | `trace.csv` | simulate | `t, robot, x, y, ux, uy` |
//! | `measurements.jsonl` | simulate | one measurement per line with its `robot` |
//! | `observer_r{i}.jsonl` | identify, compare | one step record per line |
//! | `summary_r{i}.csv` | identify, compare | `t, area, contains_true_theta` |
//! | `ukf_r{i}.csv` | compare | `t, mean_x, mean_y, cov_trace, error_norm` |
//! | `compare_r{i}.csv` | compare | `t, area, ukf_error` |
//! | `report.json` | identify, compare | [`RunReport`] |
//! | `region_r{i}_{k}.svg`, `curves_r{i}.svg` | render | plots |

pub mod pipeline;
pub mod svg;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlError;
use crate::observer::{Measurement, ObserverError, StepRecord};
use crate::sim::{self, ScenarioConfig, SimError};

pub use pipeline::{run_all, run_robot, PipelineOptions, RobotReport, RobotRun, RunReport, UkfRow};

#[derive(Debug, Parser)]
#[command(name = "feasreg", version, about = "Feasible-region identification of robot goals from CBF-QP behaviour")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "FEASREG_OUT_DIR", default_value = "feasreg-out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and log world trace and measurement streams.
    Simulate(ScenarioArgs),
    /// Run the region observer for every robot.
    Identify(IdentifyArgs),
    /// Run the region observer and the UKF baseline side by side.
    Compare(IdentifyArgs),
    /// Draw region snapshots and curves from identify/compare output.
    Render(RenderArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Scenario file, bundled name (corridor, staggered, four_robot_exchange) or `random`.
    #[arg(long)]
    pub scenario: String,
    /// Integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Base activity threshold.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Seed for `random` scenarios.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report velocities as position differences.
    #[arg(long)]
    pub finite_difference: bool,
}

#[derive(Debug, Args, Clone)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Relative singular-value threshold for the rank of the active block.
    #[arg(long, default_value_t = crate::linalg::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Intersect every n-th feasible set.
    #[arg(long, default_value_t = 1)]
    pub cadence: usize,
    /// Measurement log from `simulate`; the scenario is simulated if absent.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct RenderArgs {
    /// Directory holding identify/compare output; defaults to the output directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Snapshots per robot.
    #[arg(long, default_value_t = 6)]
    pub snapshots: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contradiction for robot {robot} at t = {t}: feasible region is empty")]
    Contradiction { robot: usize, t: f64 },
    #[error("QP infeasible: {0}")]
    QpInfeasible(String),
    #[error("no data")]
    NoData,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Contradiction { .. } => 3,
            CliError::QpInfeasible(_) => 4,
            CliError::NoData | CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::Config(m) => CliError::Config(m.clone()),
            SimError::Control { source: ControlError::QpInfeasible, .. } => CliError::QpInfeasible(e.to_string()),
            SimError::Control { .. } => CliError::Config(e.to_string()),
        }
    }
}

fn observer_error(robot: usize, e: ObserverError) -> CliError {
    match e {
        ObserverError::Contradiction { t } => CliError::Contradiction { robot, t },
        ObserverError::Control(ControlError::QpInfeasible) => CliError::QpInfeasible(format!("robot {robot}")),
        ObserverError::Control(c) => CliError::Config(format!("robot {robot}: {c}")),
        ObserverError::NonMonotoneTime { .. } => CliError::Config(format!("robot {robot}: {e}")),
        other => CliError::Other(format!("robot {robot}: {other}")),
    }
}

/// Finds a scenario by path, bundled name or `random`, and applies overrides.
pub fn resolve_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(&args.scenario);
    let mut cfg = if path.is_file() {
        ScenarioConfig::from_json(&fs::read_to_string(path)?)?
    } else if let Some(cfg) = sim::bundled(&args.scenario) {
        cfg
    } else if args.scenario == "random" {
        sim::random_scenario(args.seed.unwrap_or(0), 3, 4)
    } else {
        return Err(CliError::Config(format!("unknown scenario '{}'", args.scenario)));
    };
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(eps) = args.epsilon {
        cfg.safety.epsilon = eps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.finite_difference_velocity |= args.finite_difference;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementLine {
    robot: usize,
    #[serde(flatten)]
    m: Measurement,
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    robot: usize,
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    t: f64,
    area: f64,
    contains_true_theta: bool,
}

#[derive(Serialize)]
struct UkfCsvRow {
    t: f64,
    mean_x: f64,
    mean_y: f64,
    cov_trace: f64,
    error_norm: f64,
}

#[derive(Serialize)]
struct CompareRow {
    t: f64,
    area: f64,
    ukf_error: f64,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.display().to_string());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        for r in rows {
            serde_json::to_writer(&mut w, &r).map_err(|e| CliError::Other(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.path(name)).map_err(|e| CliError::Other(e.to_string()))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Other(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        fs::write(self.path(name), body)?;
        Ok(())
    }
}

pub fn simulate(args: &ScenarioArgs, out_dir: &Path) -> Result<RunReport, CliError> {
    let cfg = resolve_scenario(args)?;
    let log = sim::run_scenario(&cfg)?;
    let mut out = Outputs::new(out_dir)?;
    out.json("scenario.json", &cfg)?;
    let trace = log.trace.windows(2).flat_map(|w| {
        (0..cfg.robots.len()).map(move |i| TraceRow {
            t: w[0].t,
            robot: i,
            x: w[0].positions[i][0],
            y: w[0].positions[i][1],
            ux: w[1].last_controls[i][0],
            uy: w[1].last_controls[i][1],
        })
    });
    out.csv("trace.csv", trace)?;
    let lines = log
        .measurements
        .iter()
        .enumerate()
        .flat_map(|(robot, s)| s.iter().map(move |m| MeasurementLine { robot, m: m.clone() }));
    out.jsonl("measurements.jsonl", lines)?;
    log::info!(
        "{}: {} steps, min separation {:.4}, {} safety violations",
        cfg.name,
        cfg.num_steps(),
        log.min_separation,
        log.safety_violations
    );
    Ok(RunReport { scenario: cfg.name, robots: Vec::new(), artifacts: out.written })
}

fn read_measurements(path: &Path, robots: usize) -> Result<Vec<Vec<Measurement>>, CliError> {
    let mut streams = vec![Vec::new(); robots];
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MeasurementLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let s = streams
            .get_mut(rec.robot)
            .ok_or_else(|| CliError::Config(format!("robot {} not in scenario", rec.robot)))?;
        s.push(rec.m);
    }
    Ok(streams)
}

/// `identify` (without UKF) and `compare` (with UKF).
pub fn identify(args: &IdentifyArgs, out_dir: &Path, with_ukf: bool) -> Result<RunReport, CliError> {
    let cfg = resolve_scenario(&args.scenario)?;
    if !(args.rank_tol > 0.0) {
        return Err(CliError::Config("rank tolerance must be positive".into()));
    }
    if args.cadence == 0 {
        return Err(CliError::Config("cadence must be at least 1".into()));
    }
    let streams = match &args.measurements {
        Some(p) => read_measurements(p, cfg.robots.len())?,
        None => sim::run_scenario(&cfg)?.measurements,
    };
    let opts = PipelineOptions { rank_tol: args.rank_tol, cadence: args.cadence, with_ukf, ..Default::default() };
    let runs = run_all(&cfg, &streams, &opts).map_err(|f| observer_error(f.robot, f.error))?;

    let mut out = Outputs::new(out_dir)?;
    out.json("scenario.json", &cfg)?;
    for r in &runs {
        let i = r.robot;
        out.jsonl(&format!("observer_r{i}.jsonl"), &r.records)?;
        out.csv(
            &format!("summary_r{i}.csv"),
            r.records
                .iter()
                .zip(&r.contained)
                .map(|(rec, &c)| SummaryRow { t: rec.t, area: rec.area, contains_true_theta: c }),
        )?;
        if with_ukf {
            out.csv(
                &format!("ukf_r{i}.csv"),
                r.ukf.iter().map(|u| UkfCsvRow {
                    t: u.t,
                    mean_x: u.mean[0],
                    mean_y: u.mean[1],
                    cov_trace: u.cov_trace,
                    error_norm: u.error_norm,
                }),
            )?;
            out.csv(
                &format!("compare_r{i}.csv"),
                r.records
                    .iter()
                    .zip(&r.ukf)
                    .map(|(rec, u)| CompareRow { t: rec.t, area: rec.area, ukf_error: u.error_norm }),
            )?;
        }
    }
    let mut report = RunReport::from_runs(&cfg.name, &runs);
    let report_path = out_dir.join("report.json").display().to_string();
    report.artifacts = out.written.clone();
    report.artifacts.push(report_path);
    out.json("report.json", &report)?;
    Ok(report)
}

fn read_records(path: &Path) -> Result<Vec<StepRecord>, CliError> {
    let mut v = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        v.push(serde_json::from_str(&line).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?);
    }
    Ok(v)
}

fn read_ukf_errors(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        error_norm: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Other(e.to_string()))?;
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| (r.t, r.error_norm)).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

/// Evenly spaced indices including both ends.
fn snapshot_indices(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(len);
    if count == 1 {
        return vec![len - 1];
    }
    let mut v: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1)).collect();
    v.dedup();
    v
}

pub fn render(args: &RenderArgs, out_dir: &Path) -> Result<RunReport, CliError> {
    let input = args.input.clone().unwrap_or_else(|| out_dir.to_path_buf());
    let scen = input.join("scenario.json");
    if !scen.is_file() {
        return Err(CliError::NoData);
    }
    let cfg: ScenarioConfig =
        serde_json::from_str(&fs::read_to_string(&scen)?).map_err(|e| CliError::Config(e.to_string()))?;
    let area0 = cfg.theta0_box.area();
    let diam = cfg.theta0_box.diameter();
    let mut out = Outputs::new(out_dir)?;
    let mut any = false;
    for (i, robot) in cfg.robots.iter().enumerate() {
        let obs = input.join(format!("observer_r{i}.jsonl"));
        if !obs.is_file() {
            continue;
        }
        let records = read_records(&obs)?;
        if records.is_empty() {
            continue;
        }
        any = true;
        for (k, idx) in snapshot_indices(records.len(), args.snapshots).into_iter().enumerate() {
            let rec = &records[idx];
            let title = format!("{} robot {i}, t = {:.2} s, area = {:.4}", cfg.name, rec.t, rec.area);
            out.text(
                &format!("region_r{i}_{k:02}.svg"),
                &svg::region_snapshot(&cfg.theta0_box, &rec.polygon, &robot.goal, &title),
            )?;
        }
        let mut series = vec![svg::Series {
            label: "area / area(Θ₀)",
            color: "#1c4587",
            points: records.iter().map(|r| (r.t, r.area / area0)).collect(),
        }];
        let ukf = input.join(format!("ukf_r{i}.csv"));
        if ukf.is_file() {
            series.push(svg::Series {
                label: "UKF error / diam(Θ₀)",
                color: "#cc0000",
                points: read_ukf_errors(&ukf)?.into_iter().map(|(t, e)| (t, e / diam)).collect(),
            });
        }
        out.text(&format!("curves_r{i}.svg"), &svg::curves(&series, 1.0, &format!("{} robot {i}", cfg.name)))?;
    }
    if !any {
        return Err(CliError::NoData);
    }
    Ok(RunReport { scenario: cfg.name, robots: Vec::new(), artifacts: out.written })
}

pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, &cli.out_dir),
        Command::Identify(a) => identify(a, &cli.out_dir, false),
        Command::Compare(a) => identify(a, &cli.out_dir, true),
        Command::Render(a) => render(a, &cli.out_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_spacing() {
        assert_eq!(snapshot_indices(0, 3), Vec::<usize>::new());
        assert_eq!(snapshot_indices(10, 1), vec![9]);
        assert_eq!(snapshot_indices(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(snapshot_indices(2, 6), vec![0, 1]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Contradiction { robot: 0, t: 0.0 }.exit_code(), 3);
        assert_eq!(CliError::QpInfeasible("x".into()).exit_code(), 4);
    }

    #[test]
    fn unknown_scenario_is_config_error() {
        let a = ScenarioArgs { scenario: "nowhere".into(), dt: None, epsilon: None, seed: None, finite_difference: false };
        assert!(matches!(resolve_scenario(&a), Err(CliError::Config(_))));
    }

    #[test]
    fn bundled_name_with_extension_resolves() {
        let a = ScenarioArgs { scenario: "staggered.json".into(), dt: Some(0.01), epsilon: None, seed: None, finite_difference: false };
        let cfg = resolve_scenario(&a).unwrap();
        assert_eq!(cfg.name, "staggered");
        assert_eq!(cfg.dt, 0.01);
    }
}
