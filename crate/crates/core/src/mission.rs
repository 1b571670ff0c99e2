//! Mission configuration files, run orchestration and output artifacts.
//!
//! A run reads a TOML configuration, drives the smoothing continuation,
//! audits the result and writes everything into one output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | the effective configuration, overrides applied |
//! | `solution.json` | decision variables and derived per-node series |
//! | `trace.csv` | one row per continuation step |
//! | `validation.json` | the audit report |
//! | `trajectory.csv`, `thrust.csv`, `power.csv`, `activation.csv`, `mass.csv` | plot data |
//!
//! Plot files share one grid of `n_nodes` rows; times are in days, masses
//! in kg, powers in W and thrust in mN. Nothing random is involved, so
//! identical manifests produce byte-identical solution and trace files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuation::{
    initial_guess_with, run_continuation_with, single_mode_rho_e_cap, ContinuationError, ContinuationSchedule,
    ContinuationSettings, ContinuationTrace, MissionSolution, PowerGuess,
};
use crate::mee::{mee_to_cartesian, CanonicalUnits, MeeState, AU};
use crate::nlp::{AugmentedLagrangian, InteriorPoint, NlpSolver, SolverOptions};
use crate::power::{available_power_piecewise, PowerPlantConfig, SmoothingParams};
use crate::thruster::{build_mode_set, load_throttle_table, spt140, ModeSet, ThrottleError, ThrottleMode};
use crate::transcription::{assemble, MassBudgetConfig, MissionConfig, StateBounds};
use crate::validation::{audit, ValidationError, ValidationReport, ValidationThresholds, COAST_THRUST};

/// Configurations shipped with the library, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("earth_67p_one_mode", include_str!("../configs/earth_67p_one_mode.toml")),
    ("earth_67p_two_mode", include_str!("../configs/earth_67p_two_mode.toml")),
    ("earth_67p_three_mode", include_str!("../configs/earth_67p_three_mode.toml")),
    ("earth_67p_four_mode", include_str!("../configs/earth_67p_four_mode.toml")),
];

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl MissionError {
    fn config(msg: impl fmt::Display) -> Self {
        Self::Config(msg.to_string())
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_owned(), source }
    }

    pub fn exit_status(&self) -> ExitStatus {
        match self {
            Self::Config(_) | Self::Validation(ValidationError::Shape { .. }) => ExitStatus::ConfigError,
            Self::Io { .. } => ExitStatus::IoError,
            Self::Validation(_) => ExitStatus::ValidationFailed,
        }
    }
}

/// Process exit codes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    IoError,
    ConfigError,
    ContinuationAborted,
    ValidationFailed,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::IoError => 1,
            Self::ConfigError => 2,
            Self::ContinuationAborted => 3,
            Self::ValidationFailed => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSection {
    pub name: String,
    /// `[p (au), f, g, h, k, L (rad)]`
    pub x0: [f64; 6],
    pub xf: [f64; 6],
    /// kg
    pub m0: f64,
    pub tof_days: f64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
}

fn default_nodes() -> usize {
    100
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    /// throttle-table indices of the thrusting modes
    pub indices: Vec<usize>,
    #[serde(default = "yes")]
    pub include_coast: bool,
    /// CSV throttle table, relative to the configuration file; the bundled
    /// SPT-140 table when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// `[rho_p, rho_e]` of the first step
    #[serde(default = "default_start")]
    pub start: [f64; 2],
    /// first step when only one thrusting mode is selected; `start` if absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_mode_start: Option<[f64; 2]>,
    pub target: [f64; 2],
    /// reduction per step of the geometric schedule
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// explicit steps; replace `start`, `target` and `factor`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_stall")]
    pub stall_iterations: usize,
    #[serde(default = "default_backoff")]
    pub backoff_factor: f64,
    #[serde(default)]
    pub power_guess: PowerGuess,
}

fn default_start() -> [f64; 2] {
    [0.1, 0.1]
}

fn default_factor() -> f64 {
    0.5
}

fn default_stall() -> usize {
    600
}

fn default_backoff() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    InteriorPoint,
    AugmentedLagrangian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    pub tolerance_kkt: f64,
    pub tolerance_constraint: f64,
    pub barrier_init: f64,
    pub barrier_init_warm: f64,
    pub bound_push: f64,
    pub bound_push_warm: f64,
    pub max_step_ratio: f64,
    pub verbosity: u8,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            algorithm: Algorithm::default(),
            tolerance_kkt: o.tolerance_kkt,
            tolerance_constraint: o.tolerance_constraint,
            barrier_init: o.barrier_init,
            barrier_init_warm: o.barrier_init_warm,
            bound_push: o.bound_push,
            bound_push_warm: o.bound_push_warm,
            max_step_ratio: o.max_step_ratio,
            verbosity: o.verbosity,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tolerance_kkt: self.tolerance_kkt,
            tolerance_constraint: self.tolerance_constraint,
            barrier_init: self.barrier_init,
            barrier_init_warm: self.barrier_init_warm,
            bound_push: self.bound_push,
            bound_push_warm: self.bound_push_warm,
            max_step_ratio: self.max_step_ratio,
            verbosity: self.verbosity,
            ..SolverOptions::default()
        }
    }
}

/// Contents of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionFile {
    pub mission: MissionSection,
    #[serde(default)]
    pub power: PowerPlantConfig,
    #[serde(default)]
    pub budget: MassBudgetConfig,
    pub modes: ModesSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub bounds: StateBounds,
    #[serde(default)]
    pub validation: ValidationThresholds,
}

/// A checked configuration with its throttle table loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub file: MissionFile,
    pub mission: MissionConfig,
    pub table: Vec<ThrottleMode>,
    pub modes: ModeSet,
    schedule: ContinuationSchedule,
}

impl RunConfig {
    /// Parses and checks a configuration. Relative table paths are taken
    /// from `base_dir`; `table_override` replaces the file's table.
    pub fn parse(source: &str, base_dir: Option<&Path>, table_override: Option<&Path>) -> Result<Self, MissionError> {
        let mut file: MissionFile = toml::from_str(source).map_err(MissionError::config)?;
        let table_path = match table_override {
            Some(p) => Some(p.to_owned()),
            None => file.modes.table.as_ref().map(|t| base_dir.map_or_else(|| t.clone(), |b| b.join(t))),
        };
        let table = match &table_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| MissionError::config(format!("throttle table {}: {e}", p.display())))?;
                load_throttle_table(&text).map_err(|e| MissionError::config(format!("{}: {e}", p.display())))?
            }
            None => spt140(),
        };
        // absolute, so the effective configuration written next to the results stays loadable
        file.modes.table = table_path.map(|p| fs::canonicalize(&p).unwrap_or(p));
        Self::from_file(file, table)
    }

    pub fn bundled(name: &str) -> Result<Self, MissionError> {
        let (_, src) = BUNDLED.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            MissionError::config(format!("no bundled configuration `{name}`; available: {}", names.join(", ")))
        })?;
        Self::parse(src, None, None)
    }

    pub fn from_file(file: MissionFile, table: Vec<ThrottleMode>) -> Result<Self, MissionError> {
        let m = &file.mission;
        let mission = MissionConfig {
            x0: MeeState::from_array(m.x0),
            xf: MeeState::from_array(m.xf),
            m0: m.m0,
            tof_days: m.tof_days,
            n_nodes: m.n_nodes,
            mode_indices: file.modes.indices.clone(),
            include_coast: file.modes.include_coast,
            power: file.power.clone(),
            budget: file.budget.clone(),
            bounds: file.bounds.clone(),
            units: CanonicalUnits::heliocentric(),
        };
        mission.validate().map_err(MissionError::config)?;
        let modes = build_mode_set(&table, &file.modes.indices, file.modes.include_coast).map_err(|e| match e {
            ThrottleError::UnknownMode(i) => {
                let lo = table.iter().map(|m| m.index).min().unwrap_or(0);
                let hi = table.iter().map(|m| m.index).max().unwrap_or(0);
                MissionError::config(format!("mode index {i} is outside the throttle table (indices {lo}..={hi})"))
            }
            other => MissionError::config(other),
        })?;
        file.solver.options().validate().map_err(|e| MissionError::config(format!("solver: {e}")))?;
        let t = &file.validation;
        if [t.boundary, t.power, t.steering, t.mode_ambiguity].iter().any(|v| !(*v >= 0.0)) {
            return Err(MissionError::config("validation thresholds must be non-negative"));
        }
        let schedule = build_schedule(&file.schedule, &mission, &modes)?;
        Ok(Self { file, mission, table, modes, schedule })
    }

    pub fn schedule(&self) -> &ContinuationSchedule {
        &self.schedule
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.file.solver.options()
    }

    pub fn name(&self) -> &str {
        &self.file.mission.name
    }

    /// Same mission with another node count.
    pub fn with_nodes(&self, n_nodes: usize) -> Result<Self, MissionError> {
        let mut file = self.file.clone();
        file.mission.n_nodes = n_nodes;
        Self::from_file(file, self.table.clone())
    }

    /// Same mission with other thrusting modes and, optionally, another
    /// final smoothing level.
    pub fn with_modes(&self, indices: &[usize], target: Option<SmoothingParams>) -> Result<Self, MissionError> {
        let mut file = self.file.clone();
        file.modes.indices = indices.to_vec();
        if let Some(t) = target {
            file.schedule.target = [t.rho_p, t.rho_e];
            file.schedule.steps = None;
        }
        Self::from_file(file, self.table.clone())
    }

    /// Same mission with an explicit list of steps.
    pub fn with_steps(&self, steps: &[SmoothingParams]) -> Result<Self, MissionError> {
        let mut file = self.file.clone();
        file.schedule.steps = Some(steps.iter().map(|s| [s.rho_p, s.rho_e]).collect());
        Self::from_file(file, self.table.clone())
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("configuration serializes")
    }
}

fn build_schedule(s: &ScheduleSection, cfg: &MissionConfig, ms: &ModeSet) -> Result<ContinuationSchedule, MissionError> {
    let pair = |v: [f64; 2]| SmoothingParams::new(v[0], v[1]);
    let mut schedule = match &s.steps {
        Some(steps) => ContinuationSchedule {
            steps: steps.iter().copied().map(pair).collect(),
            ..ContinuationSchedule::single(pair(s.target))
        },
        None => {
            let start = match s.single_mode_start {
                Some(v) if ms.indices().len() == 1 => v,
                _ => s.start,
            };
            ContinuationSchedule::geometric(pair(start), pair(s.target), s.factor).map_err(MissionError::config)?
        }
    };
    if let Some(cap) = single_mode_rho_e_cap(cfg, ms) {
        let first = schedule.steps[0].rho_e;
        if first > cap {
            log::warn!("first rho_e {first:.3e} exceeds {cap:.3e}; a single mode cannot reach 90% activation and the first step is likely infeasible");
        }
    }
    schedule.stall_iterations = s.stall_iterations;
    schedule.backoff_factor = s.backoff_factor;
    schedule.validate().map_err(MissionError::config)?;
    Ok(schedule)
}

/// Parses `rho_p:rho_e` pairs separated by commas; a single number sets both.
pub fn parse_schedule(text: &str) -> Result<Vec<SmoothingParams>, MissionError> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| MissionError::config(format!("`{t}` in schedule is not a number")));
    let steps = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match t.split_once(':') {
            Some((p, e)) => Ok(SmoothingParams::new(num(p)?, num(e)?)),
            None => num(t).map(|v| SmoothingParams::new(v, v)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if steps.is_empty() {
        return Err(MissionError::config("schedule has no steps"));
    }
    Ok(steps)
}

/// Where a configuration comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigSource {
    Path(PathBuf),
    Bundled(String),
}

impl ConfigSource {
    /// `bundled:<name>` selects a shipped configuration, anything else is a path.
    pub fn from_arg(arg: &str) -> Self {
        match arg.strip_prefix("bundled:") {
            Some(name) => Self::Bundled(name.to_owned()),
            None => Self::Path(PathBuf::from(arg)),
        }
    }
}

impl fmt::Display for ConfigSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Path(p) => write!(f, "{}", p.display()),
            Self::Bundled(n) => write!(f, "bundled:{n}"),
        }
    }
}

/// Inputs of one invocation. Runs use no random numbers, so a manifest
/// fully determines its solution and trace files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ConfigSource,
    pub throttle_table: Option<PathBuf>,
    pub output_directory: PathBuf,
    pub schedule: Option<Vec<SmoothingParams>>,
    pub n_nodes: Option<usize>,
    /// no continuation step starts after this many minutes
    pub max_minutes: Option<f64>,
}

impl RunManifest {
    pub fn new(config: ConfigSource, output_directory: impl Into<PathBuf>) -> Self {
        Self { config, throttle_table: None, output_directory: output_directory.into(), schedule: None, n_nodes: None, max_minutes: None }
    }

    /// Loads the configuration with all overrides applied and creates the
    /// output directory; fails before any computation starts.
    pub fn resolve(&self) -> Result<RunConfig, MissionError> {
        if let Some(t) = &self.throttle_table {
            if !t.is_file() {
                return Err(MissionError::config(format!("throttle table {} does not exist", t.display())));
            }
        }
        let mut rc = match &self.config {
            ConfigSource::Bundled(name) => {
                let rc = RunConfig::bundled(name)?;
                match &self.throttle_table {
                    Some(t) => RunConfig::parse(&rc.to_toml(), None, Some(t))?,
                    None => rc,
                }
            }
            ConfigSource::Path(p) => {
                let text = fs::read_to_string(p).map_err(|e| MissionError::config(format!("configuration {}: {e}", p.display())))?;
                RunConfig::parse(&text, p.parent(), self.throttle_table.as_deref())?
            }
        };
        if let Some(n) = self.n_nodes {
            rc = rc.with_nodes(n)?;
        }
        if let Some(steps) = &self.schedule {
            rc = rc.with_steps(steps)?;
        }
        if let Some(m) = self.max_minutes {
            if !(m > 0.0 && m.is_finite()) {
                return Err(MissionError::config(format!("max_minutes {m} must be positive")));
            }
        }
        fs::create_dir_all(&self.output_directory).map_err(MissionError::io(&self.output_directory))?;
        Ok(rc)
    }

    fn deadline(&self) -> Option<Instant> {
        self.max_minutes.map(|m| Instant::now() + Duration::from_secs_f64(m * 60.0))
    }
}

/// Result of one solve.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub message: String,
    pub solution: Option<MissionSolution>,
    pub report: Option<ValidationReport>,
    pub trace: ContinuationTrace,
}

/// Assembles, continues, validates and writes all artifacts of `manifest`.
pub fn run(manifest: &RunManifest) -> RunOutcome {
    match manifest.resolve() {
        Ok(rc) => solve_into(&rc, &manifest.output_directory, manifest.deadline()),
        Err(e) => RunOutcome {
            status: e.exit_status(),
            message: e.to_string(),
            solution: None,
            report: None,
            trace: ContinuationTrace::default(),
        },
    }
}

fn solver_factory(algorithm: Algorithm) -> impl Fn(&SolverOptions) -> Box<dyn NlpSolver> {
    move |o: &SolverOptions| -> Box<dyn NlpSolver> {
        match algorithm {
            Algorithm::InteriorPoint => Box::new(InteriorPoint::new(o.clone())),
            Algorithm::AugmentedLagrangian => Box::new(AugmentedLagrangian::new(o.clone())),
        }
    }
}

/// Solves `rc` and writes the artifacts into `dir`.
pub fn solve_into(rc: &RunConfig, dir: &Path, deadline: Option<Instant>) -> RunOutcome {
    let factory = solver_factory(rc.file.solver.algorithm);
    let settings = ContinuationSettings {
        solver: Some(&factory),
        deadline,
        initial: None,
        power_guess: rc.file.schedule.power_guess,
    };
    log::info!("{}: modes {:?}, {} nodes, {} steps", rc.name(), rc.mission.mode_indices, rc.mission.n_nodes, rc.schedule.steps.len());
    let result = run_continuation_with(&rc.mission, &rc.modes, &rc.schedule, &rc.solver_options(), settings);
    let io_fail = |e: MissionError, trace: ContinuationTrace| RunOutcome {
        status: e.exit_status(),
        message: e.to_string(),
        solution: None,
        report: None,
        trace,
    };
    let (solution, trace) = match result {
        Ok(pair) => pair,
        Err(e) => {
            let trace = match &e {
                ContinuationError::FirstStep { trace, .. } => trace.clone(),
                _ => ContinuationTrace::default(),
            };
            if let Err(w) = write_file(dir, "trace.csv", &trace.to_csv()) {
                return io_fail(w, trace);
            }
            let status = match e {
                ContinuationError::Transcription(_) | ContinuationError::Schedule(_) => ExitStatus::ConfigError,
                _ => ExitStatus::ContinuationAborted,
            };
            return RunOutcome { status, message: e.to_string(), solution: None, report: None, trace };
        }
    };
    let report = match audit(&solution, &rc.mission, &rc.modes, &rc.file.validation) {
        Ok(r) => r,
        Err(e) => return io_fail(e.into(), trace),
    };
    if let Err(e) = write_artifacts(dir, rc, &solution, &trace, &report) {
        return io_fail(e, trace);
    }
    let (status, message) = if !solution.reached_target {
        let sp = solution.smoothing;
        (ExitStatus::ContinuationAborted, format!("continuation stopped at rho = ({:.3e}, {:.3e})", sp.rho_p, sp.rho_e))
    } else if !report.pass {
        (ExitStatus::ValidationFailed, format!("validation failed: {}", report.verdict.failures().join(", ")))
    } else {
        (ExitStatus::Success, String::from("ok"))
    };
    RunOutcome { status, message, solution: Some(solution), report: Some(report), trace }
}

/// Audits a stored solution against `manifest`'s configuration and writes
/// `validation.json`.
pub fn validate_file(manifest: &RunManifest, solution_path: &Path) -> Result<(ValidationReport, ExitStatus), MissionError> {
    let rc = manifest.resolve()?;
    let text = fs::read_to_string(solution_path).map_err(MissionError::io(solution_path))?;
    let solution: MissionSolution = serde_json::from_str(&text).map_err(|e| MissionError::config(format!("{}: {e}", solution_path.display())))?;
    let report = audit(&solution, &rc.mission, &rc.modes, &rc.file.validation)?;
    write_file(&manifest.output_directory, "validation.json", &report.to_json())?;
    let status = if report.pass { ExitStatus::Success } else { ExitStatus::ValidationFailed };
    Ok((report, status))
}

/// Writes the interpolated initial guess of the first step as
/// `guess.json` plus plot data.
pub fn emit_guess(manifest: &RunManifest) -> Result<MissionSolution, MissionError> {
    let rc = manifest.resolve()?;
    let sp = rc.schedule.steps[0];
    let dp = initial_guess_with(&rc.mission, &rc.modes, sp, rc.file.schedule.power_guess).map_err(MissionError::config)?;
    let nlp = assemble(&rc.mission, &rc.modes, sp).map_err(MissionError::config)?;
    let guess = MissionSolution::evaluate(&nlp, dp).map_err(MissionError::config)?;
    let dir = &manifest.output_directory;
    write_file(dir, "guess.json", &guess.to_json())?;
    write_plot_data(dir, rc.mission.n_nodes, &plot_tables(&rc, &guess))?;
    Ok(guess)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), MissionError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(MissionError::io(&path))
}

fn write_artifacts(
    dir: &Path,
    rc: &RunConfig,
    solution: &MissionSolution,
    trace: &ContinuationTrace,
    report: &ValidationReport,
) -> Result<(), MissionError> {
    fs::create_dir_all(dir).map_err(MissionError::io(dir))?;
    write_file(dir, "config.toml", &rc.to_toml())?;
    write_file(dir, "solution.json", &solution.to_json())?;
    write_file(dir, "trace.csv", &trace.to_csv())?;
    write_file(dir, "validation.json", &report.to_json())?;
    write_plot_data(dir, rc.mission.n_nodes, &plot_tables(rc, solution))
}

/// One delimiter-separated plot file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub file: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

fn write_plot_data(dir: &Path, n_nodes: usize, tables: &[PlotTable]) -> Result<(), MissionError> {
    for t in tables {
        debug_assert_eq!(t.rows.len(), n_nodes, "{}", t.file);
        write_file(dir, t.file, &t.to_csv())?;
    }
    Ok(())
}

/// The per-node series behind the trajectory, thrust, power, activation
/// and mass figures.
pub fn plot_tables(rc: &RunConfig, s: &MissionSolution) -> Vec<PlotTable> {
    let cfg = &rc.mission;
    let ms = &rc.modes;
    let dp = &s.decision;
    let n = dp.n_nodes();
    let header = |cols: &[&str]| -> Vec<String> { ["node", "time_days"].iter().chain(cols).map(|c| c.to_string()).collect() };
    let base = |j: usize| vec![j as f64, cfg.node_days(j)];
    let row = |j: usize, vals: &[f64]| -> Vec<f64> { base(j).into_iter().chain(vals.iter().copied()).collect() };
    let powers = ms.powers();

    let mut trajectory = Vec::with_capacity(n);
    let mut thrust = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    let mut activation = Vec::with_capacity(n);
    let mut mass = Vec::with_capacity(n);
    for j in 0..n {
        let pos = mee_to_cartesian(&dp.states[j].mee, &cfg.units)
            .map(|c| c.position * (cfg.units.length_unit / AU))
            .map_or([f64::NAN; 3], |p| [p.x, p.y, p.z]);
        let on = if s.thrust[j] > COAST_THRUST { 1.0 } else { 0.0 };
        trajectory.push(row(j, &[pos[0], pos[1], pos[2], on]));
        thrust.push(row(j, &[s.thrust[j] * 1e3]));
        let eta_p: f64 = s.activation[j].iter().zip(&powers).map(|(e, p)| e * p).sum();
        let piecewise = available_power_piecewise(s.array_power[j], &cfg.power);
        power.push(row(j, &[s.array_power[j], s.available_power[j], piecewise, dp.p_e[j], eta_p]));
        activation.push(row(j, &s.activation[j]));
        mass.push(row(j, &[dp.states[j].mass]));
    }
    let mode_cols: Vec<String> = ms
        .modes
        .iter()
        .map(|m| if m.power > 0.0 { format!("eta_mode_{}", m.index) } else { String::from("eta_coast") })
        .collect();
    let mode_refs: Vec<&str> = mode_cols.iter().map(String::as_str).collect();
    vec![
        PlotTable { file: "trajectory.csv", header: header(&["x_au", "y_au", "z_au", "thrusting"]), rows: trajectory },
        PlotTable { file: "thrust.csv", header: header(&["thrust_mn"]), rows: thrust },
        PlotTable {
            file: "power.csv",
            header: header(&["p_sa_w", "p_ava_w", "p_ava_piecewise_w", "p_e_w", "eta_p_sel_w"]),
            rows: power,
        },
        PlotTable { file: "activation.csv", header: header(&mode_refs), rows: activation },
        PlotTable { file: "mass.csv", header: header(&["mass_kg"]), rows: mass },
    ]
}

/// A mode subset of a comparison, optionally with its own final smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub modes: Vec<usize>,
    pub target: Option<SmoothingParams>,
}

impl Subset {
    /// `3,20` or `3,20@1e-4:1e-4`.
    pub fn parse(text: &str) -> Result<Self, MissionError> {
        let (modes, target) = match text.split_once('@') {
            Some((m, t)) => {
                let steps = parse_schedule(t)?;
                if steps.len() != 1 {
                    return Err(MissionError::config(format!("subset `{text}` must name one final smoothing level")));
                }
                (m, Some(steps[0]))
            }
            None => (text, None),
        };
        let modes = modes
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| MissionError::config(format!("`{t}` in subset `{text}` is not a mode index"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { modes, target })
    }

    /// Directory name of the subset's artifacts.
    pub fn label(&self) -> String {
        let idx: Vec<String> = self.modes.iter().map(usize::to_string).collect();
        format!("modes_{}", idx.join("_"))
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub subset: String,
    pub n_mode: usize,
    pub status: ExitStatus,
    pub m_u: f64,
    pub m_f: f64,
    pub m_sa: f64,
    pub m_pspu: f64,
    pub m_psfs: f64,
    pub p_bl: f64,
    pub rho_p: f64,
    pub rho_e: f64,
    pub reached_target: bool,
    pub validation_pass: bool,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn row(&self, modes: &[usize]) -> Option<&CompareRow> {
        let label = Subset { modes: modes.to_vec(), target: None }.label();
        self.rows.iter().find(|r| r.subset == label)
    }
}

/// Solves every subset (concurrently) into its own directory under the
/// manifest's output directory and writes `compare.csv` there.
pub fn compare_modesets(manifest: &RunManifest, subsets: &[Subset]) -> Result<CompareTable, MissionError> {
    if subsets.is_empty() {
        return Err(MissionError::config("no mode subsets to compare"));
    }
    let base = manifest.resolve()?;
    let configs = subsets
        .iter()
        .map(|s| base.with_modes(&s.modes, s.target))
        .collect::<Result<Vec<_>, _>>()?;
    let deadline = manifest.deadline();
    let outcomes: Vec<RunOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .zip(subsets)
            .map(|(rc, s)| {
                let dir = manifest.output_directory.join(s.label());
                scope.spawn(move || solve_into(rc, &dir, deadline))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("subset solve panicked")).collect()
    });
    let rows = subsets
        .iter()
        .zip(outcomes)
        .map(|(s, o)| {
            let (m, sp, reached) = match &o.solution {
                Some(sol) => (Some(sol.mass), Some(sol.smoothing), sol.reached_target),
                None => (None, None, false),
            };
            let get = |f: fn(&crate::transcription::MassBreakdown) -> f64| m.as_ref().map_or(f64::NAN, f);
            CompareRow {
                subset: s.label(),
                n_mode: s.modes.len(),
                status: o.status,
                m_u: get(|b| b.m_u),
                m_f: get(|b| b.m_f),
                m_sa: get(|b| b.m_sa),
                m_pspu: get(|b| b.m_pspu),
                m_psfs: get(|b| b.m_psfs),
                p_bl: o.solution.as_ref().map_or(f64::NAN, |s| s.decision.p_bl),
                rho_p: sp.map_or(f64::NAN, |p| p.rho_p),
                rho_e: sp.map_or(f64::NAN, |p| p.rho_e),
                reached_target: reached,
                validation_pass: o.report.as_ref().is_some_and(|r| r.pass),
                message: o.message,
            }
        })
        .collect();
    let table = CompareTable { rows };
    write_file(&manifest.output_directory, "compare.csv", &table.to_csv())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(config: &str, dir: &Path) -> RunManifest {
        RunManifest::new(ConfigSource::from_arg(config), dir)
    }

    fn small_one_mode(dir: &Path) -> RunManifest {
        RunManifest {
            n_nodes: Some(20),
            schedule: Some(vec![SmoothingParams::new(0.1, 5e-3)]),
            ..manifest("bundled:earth_67p_one_mode", dir)
        }
    }

    #[test]
    fn bundled_configs_load() {
        for (name, _) in BUNDLED {
            let rc = RunConfig::bundled(name).unwrap();
            assert_eq!(rc.name(), name);
            assert_eq!(rc.mission.n_nodes, 100);
            let last = rc.schedule().steps.last().unwrap();
            assert_eq!([last.rho_p, last.rho_e], rc.file.schedule.target);
        }
        assert_eq!(RunConfig::bundled("earth_67p_one_mode").unwrap().modes.indices(), vec![3]);
        assert_eq!(RunConfig::bundled("earth_67p_four_mode").unwrap().modes.indices(), vec![3, 11, 20, 21]);
    }

    #[test]
    fn start_depends_on_mode_count() {
        let rc = RunConfig::bundled("earth_67p_two_mode").unwrap();
        assert_eq!(rc.schedule().steps[0], SmoothingParams::new(0.1, 0.1));
        let one = rc.with_modes(&[3], Some(SmoothingParams::new(8.85e-4, 8.85e-4))).unwrap();
        assert_eq!(one.schedule().steps[0], SmoothingParams::new(0.1, 5e-3));
    }

    #[test]
    fn effective_config_round_trips() {
        let rc = RunConfig::bundled("earth_67p_three_mode").unwrap().with_nodes(40).unwrap();
        let back = RunConfig::parse(&rc.to_toml(), None, None).unwrap();
        assert_eq!(back, rc);
    }

    #[test]
    fn too_few_nodes_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&RunManifest { n_nodes: Some(2), ..manifest("bundled:earth_67p_one_mode", dir.path()) });
        assert_eq!(out.status, ExitStatus::ConfigError);
        assert_eq!(out.status.code(), 2);
        assert!(out.message.contains("n_nodes"), "{}", out.message);
        assert!(out.solution.is_none());
    }

    #[test]
    fn unknown_mode_names_the_table_range() {
        let src = RunConfig::bundled("earth_67p_one_mode").unwrap().to_toml().replace("indices = [3]", "indices = [99]");
        let err = RunConfig::parse(&src, None, None).unwrap_err();
        assert_eq!(err.exit_status(), ExitStatus::ConfigError);
        let msg = err.to_string();
        assert!(msg.contains("99") && msg.contains("1..=21"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = RunConfig::bundled("earth_67p_one_mode").unwrap().to_toml().replace("[schedule]", "[schedule]\nspeed = 2");
        assert!(matches!(RunConfig::parse(&src, None, None), Err(MissionError::Config(_))));
    }

    #[test]
    fn missing_inputs_fail_before_solving() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest { throttle_table: Some(dir.path().join("none.csv")), ..manifest("bundled:earth_67p_one_mode", dir.path()) };
        assert_eq!(run(&m).status, ExitStatus::ConfigError);
        let m = manifest(dir.path().join("none.toml").to_str().unwrap(), dir.path());
        assert_eq!(run(&m).status, ExitStatus::ConfigError);
        let m = RunManifest { max_minutes: Some(-1.0), ..manifest("bundled:earth_67p_one_mode", dir.path()) };
        assert_eq!(run(&m).status, ExitStatus::ConfigError);
        assert!(matches!(RunConfig::bundled("mars"), Err(MissionError::Config(_))));
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("taken");
        fs::write(&file, "").unwrap();
        let out = run(&manifest("bundled:earth_67p_one_mode", &file));
        assert_eq!(out.status, ExitStatus::IoError);
        assert_eq!(out.status.code(), 1);
    }

    #[test]
    fn empty_comparison_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = compare_modesets(&manifest("bundled:earth_67p_one_mode", dir.path()), &[]).unwrap_err();
        assert_eq!(err.exit_status().code(), 2);
    }

    #[test]
    fn schedule_and_subset_syntax() {
        let s = parse_schedule("0.1:5e-3, 1e-3").unwrap();
        assert_eq!(s, vec![SmoothingParams::new(0.1, 5e-3), SmoothingParams::new(1e-3, 1e-3)]);
        assert!(parse_schedule("").is_err());
        assert!(parse_schedule("0.1:x").is_err());
        let sub = Subset::parse("3,20@1e-4:2e-4").unwrap();
        assert_eq!(sub.modes, vec![3, 20]);
        assert_eq!(sub.target, Some(SmoothingParams::new(1e-4, 2e-4)));
        assert_eq!(sub.label(), "modes_3_20");
        assert_eq!(Subset::parse("3").unwrap(), Subset { modes: vec![3], target: None });
        assert!(Subset::parse("3,a").is_err());
        assert!(Subset::parse("3@1,2").is_err());
        assert_eq!(ConfigSource::from_arg("bundled:x"), ConfigSource::Bundled("x".into()));
        assert_eq!(ConfigSource::from_arg("a/b.toml"), ConfigSource::Path("a/b.toml".into()));
    }

    #[test]
    fn exit_codes_are_distinct_and_ordered() {
        let all = [
            ExitStatus::Success,
            ExitStatus::IoError,
            ExitStatus::ConfigError,
            ExitStatus::ContinuationAborted,
            ExitStatus::ValidationFailed,
        ];
        let codes: Vec<i32> = all.iter().map(|s| s.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn guess_plot_tables_share_the_node_grid() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest { n_nodes: Some(12), ..manifest("bundled:earth_67p_four_mode", dir.path()) };
        let guess = emit_guess(&m).unwrap();
        let rc = m.resolve().unwrap();
        let tables = plot_tables(&rc, &guess);
        assert_eq!(tables.len(), 5);
        for t in &tables {
            assert_eq!(t.rows.len(), 12, "{}", t.file);
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{}", t.file);
            let text = fs::read_to_string(dir.path().join(t.file)).unwrap();
            assert_eq!(text.lines().count(), 13);
        }
        let act = tables.iter().find(|t| t.file == "activation.csv").unwrap();
        assert_eq!(act.header[2..], ["eta_mode_3", "eta_mode_11", "eta_mode_20", "eta_mode_21", "eta_coast"]);
        // first node sits at 1 au, day 0
        let traj = &tables[0].rows[0];
        assert_eq!(traj[1], 0.0);
        assert!(((traj[2] * traj[2] + traj[3] * traj[3] + traj[4] * traj[4]).sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn identical_manifests_give_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run(&small_one_mode(a.path()));
        let rb = run(&small_one_mode(b.path()));
        assert!(ra.solution.is_some(), "{}", ra.message);
        assert_eq!(ra.status, rb.status);
        for f in ["solution.json", "trace.csv", "validation.json", "config.toml", "power.csv"] {
            let x = fs::read(a.path().join(f)).unwrap();
            let y = fs::read(b.path().join(f)).unwrap();
            assert!(x == y, "{f} differs");
        }
    }

    #[test]
    fn stored_solution_validates_to_the_same_report() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_one_mode(dir.path());
        let out = run(&m);
        let report = out.report.unwrap();
        let again = tempfile::tempdir().unwrap();
        let (stored, status) =
            validate_file(&RunManifest { output_directory: again.path().into(), ..m }, &dir.path().join("solution.json")).unwrap();
        assert_eq!(stored.to_json(), report.to_json());
        assert_eq!(status == ExitStatus::Success, report.pass);
        assert!(again.path().join("validation.json").is_file());
    }
}
