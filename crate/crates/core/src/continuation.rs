//! Initial guess and the smoothing continuation driver.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use sepopt_nlp::{Duals, InteriorPoint, NlpSolver, Problem, SolveError, SolveResult, SolverOptions, Status};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mee::{heliocentric_radius, mee_to_cartesian, FullState, MeeState};
use crate::power::{available_power_smooth, solar_array_power, SmoothingParams};
use crate::thruster::{activation_vector, blended_output, ModeSet};
use crate::transcription::{assemble, mass_breakdown, DecisionPoint, MassBreakdown, MissionConfig, MissionNlp, TranscriptionError};

/// Final mass of the interpolated guess as a fraction of the initial mass.
pub const GUESS_MASS_FRACTION: f64 = 0.6;

/// Reductions of `rho_e` by more than this factor keep `rho_p` fixed.
const LARGE_STEP: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("solver rejected the problem: {0}")]
    Solver(#[from] SolveError),
    #[error("first continuation step failed: {message}")]
    FirstStep { message: String, trace: ContinuationTrace },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    pub steps: Vec<SmoothingParams>,
    /// iteration limit of one step; reaching it counts as a stall
    pub stall_iterations: usize,
    /// position of the retry point between the last success and a failed
    /// target on a log scale; 0.5 is the geometric mean
    pub backoff_factor: f64,
}

impl ContinuationSchedule {
    /// Halving-style schedule from `start` down to `target` by `factor` per step.
    pub fn geometric(start: SmoothingParams, target: SmoothingParams, factor: f64) -> Result<Self, ContinuationError> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(ContinuationError::Schedule(format!("reduction factor {factor} must lie in (0, 1)")));
        }
        start.validate().map_err(|e| ContinuationError::Schedule(e.to_string()))?;
        target.validate().map_err(|e| ContinuationError::Schedule(e.to_string()))?;
        let mut cur = SmoothingParams::new(start.rho_p.max(target.rho_p), start.rho_e.max(target.rho_e));
        let mut steps = vec![cur];
        while cur != target {
            cur = SmoothingParams::new((cur.rho_p * factor).max(target.rho_p), (cur.rho_e * factor).max(target.rho_e));
            steps.push(cur);
        }
        Ok(Self { steps, ..Self::single(target) })
    }

    pub fn single(sp: SmoothingParams) -> Self {
        Self { steps: vec![sp], stall_iterations: 600, backoff_factor: 0.5 }
    }

    pub fn target(&self) -> SmoothingParams {
        *self.steps.last().expect("validated schedules are non-empty")
    }

    pub fn validate(&self) -> Result<(), ContinuationError> {
        let bad = |m: String| Err(ContinuationError::Schedule(m));
        if self.steps.is_empty() {
            return bad(String::from("no steps"));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if let Err(e) = s.validate() {
                return bad(format!("step {}: {e}", i + 1));
            }
            if i > 0 {
                let p = self.steps[i - 1];
                if s.rho_p > p.rho_p || s.rho_e > p.rho_e {
                    return bad(format!("step {} increases a smoothing parameter", i + 1));
                }
            }
        }
        if self.stall_iterations == 0 {
            return bad(String::from("stall_iterations must be positive"));
        }
        if !(self.backoff_factor > 0.0 && self.backoff_factor < 1.0) {
            return bad(format!("backoff_factor {} must lie in (0, 1)", self.backoff_factor));
        }
        Ok(())
    }

    /// Steps actually solved: `rho_p` is held on steps that shrink `rho_e`
    /// by more than a factor 4, and the target is appended if that left
    /// the last step short of it.
    pub fn effective_steps(&self) -> Vec<SmoothingParams> {
        let mut out: Vec<SmoothingParams> = Vec::with_capacity(self.steps.len() + 1);
        for s in &self.steps {
            match out.last() {
                Some(prev) if s.rho_e / prev.rho_e < LARGE_STEP => {
                    out.push(SmoothingParams::new(prev.rho_p, s.rho_e));
                }
                _ => out.push(*s),
            }
        }
        if out.last() != Some(&self.target()) {
            out.push(self.target());
        }
        out
    }
}

fn interpolate_log(a: SmoothingParams, b: SmoothingParams, w: f64) -> SmoothingParams {
    let mix = |x: f64, y: f64| (x.ln() * (1.0 - w) + y.ln() * w).exp();
    SmoothingParams::new(mix(a.rho_p, b.rho_p), mix(a.rho_e, b.rho_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub rho_p: f64,
    pub rho_e: f64,
    /// kg (negative useful mass)
    pub objective: f64,
    pub feasibility: f64,
    pub iterations: usize,
    /// seconds; not exported, so traces of identical runs compare equal
    #[serde(skip)]
    pub wall_time: Duration,
    /// W
    pub p_bl: f64,
}

/// One record per completed step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContinuationTrace {
    pub records: Vec<TraceRecord>,
}

impl ContinuationTrace {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "rho_p", "rho_e", "objective_kg", "feasibility", "iterations", "p_bl_w"])
            .expect("in-memory write");
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                r.rho_p.to_string(),
                r.rho_e.to_string(),
                r.objective.to_string(),
                r.feasibility.to_string(),
                r.iterations.to_string(),
                r.p_bl.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn total_iterations(&self) -> usize {
        self.records.iter().map(|r| r.iterations).sum()
    }
}

/// A solved (or last good) decision point with derived per-node series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSolution {
    pub decision: DecisionPoint,
    pub smoothing: SmoothingParams,
    pub objective: f64,
    pub mass: MassBreakdown,
    /// per node, one weight per mode of the set
    pub activation: Vec<Vec<f64>>,
    /// blended thrust per node, N
    pub thrust: Vec<f64>,
    /// array output per node, W
    pub array_power: Vec<f64>,
    /// smoothed available power per node, W
    pub available_power: Vec<f64>,
    pub status: String,
    pub max_constraint_violation: f64,
    pub kkt_residual: f64,
    /// whether the last schedule step was reached
    pub reached_target: bool,
    #[serde(skip)]
    pub duals: Option<Duals>,
}

impl MissionSolution {
    /// Derived series of `dp` under the smoothed models of `nlp`.
    pub fn evaluate(nlp: &MissionNlp, dp: DecisionPoint) -> Result<Self, TranscriptionError> {
        let cfg = nlp.config();
        let ms = nlp.modes();
        let sp = nlp.smoothing();
        let n = dp.n_nodes();
        let mut activation = Vec::with_capacity(n);
        let mut thrust = Vec::with_capacity(n);
        let mut array_power = Vec::with_capacity(n);
        let mut available_power = Vec::with_capacity(n);
        for j in 0..n {
            let eta = activation_vector(dp.p_e[j], ms, sp.rho_e);
            thrust.push(blended_output(&eta, ms)?.0);
            activation.push(eta);
            let r = heliocentric_radius(&dp.states[j].mee).map_err(|source| TranscriptionError::Orbit { node: j, source })?;
            let p_sa = solar_array_power(dp.p_bl, r, cfg.node_years(j), &cfg.power).expect("positive radius");
            array_power.push(p_sa);
            available_power.push(available_power_smooth(p_sa, &cfg.power, nlp.rho_p_watts()));
        }
        let mass = mass_breakdown(&dp, cfg);
        Ok(Self {
            objective: -mass.m_u,
            mass,
            decision: dp,
            smoothing: sp,
            activation,
            thrust,
            array_power,
            available_power,
            status: String::from("unsolved"),
            max_constraint_violation: f64::NAN,
            kkt_residual: f64::NAN,
            reached_target: false,
            duals: None,
        })
    }

    fn from_result(nlp: &MissionNlp, res: &SolveResult) -> Result<Self, TranscriptionError> {
        let mut s = Self::evaluate(nlp, nlp.decision(&res.point)?)?;
        s.status = res.status.to_string();
        s.max_constraint_violation = res.max_constraint_violation;
        s.kkt_residual = res.kkt_residual;
        s.duals = Some(res.duals.clone());
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

/// Unit steering along the velocity of `s`, in RTN components.
fn velocity_direction(s: &MeeState, cfg: &MissionConfig) -> Result<[f64; 3], TranscriptionError> {
    let c = mee_to_cartesian(s, &cfg.units).map_err(|source| TranscriptionError::Orbit { node: 0, source })?;
    let v: Vector3<f64> = c.to_rtn(&c.velocity).normalize();
    Ok([v.x, v.y, v.z])
}

/// How the interpolated guess sets the engine input power.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerGuess {
    /// `eta(P_ava)` weighted mode powers
    #[default]
    Selected,
    /// the available power itself, the lower of the two interval ends
    Available,
    /// `Available` for sets with one thrusting mode, `Selected` otherwise
    Auto,
}

/// Activation the top mode must be able to reach at the first step.
const START_ACTIVATION: f64 = 0.9;

/// Largest `rho_e` at which a set with a single thrusting mode reaches
/// 90% activation at the saturated available power. With one mode, every
/// thrusting node sits in the narrow window between the mode power and
/// that saturation level, so a wider switch caps the thrust below what
/// the transfer needs. `None` for sets with several thrusting modes.
pub fn single_mode_rho_e_cap(cfg: &MissionConfig, ms: &ModeSet) -> Option<f64> {
    if ms.indices().len() != 1 {
        return None;
    }
    let window = (cfg.power.max_available() - ms.power_scale()) / ms.power_scale();
    if window <= 0.0 {
        return None;
    }
    // x / sqrt(x^2 + rho^2) = 2 eta - 1 solved for rho at x = window
    let c = 2.0 * START_ACTIVATION - 1.0;
    Some(window * (1.0 - c * c).sqrt() / c)
}

/// Linear interpolation between the boundary states with steering along
/// the velocity and engine power set from the available power.
pub fn initial_guess(cfg: &MissionConfig, ms: &ModeSet, sp: SmoothingParams) -> Result<DecisionPoint, TranscriptionError> {
    initial_guess_with(cfg, ms, sp, PowerGuess::Selected)
}

pub fn initial_guess_with(
    cfg: &MissionConfig,
    ms: &ModeSet,
    sp: SmoothingParams,
    power: PowerGuess,
) -> Result<DecisionPoint, TranscriptionError> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let a = FullState { mee: cfg.x0, mass: cfg.m0 }.to_array();
    let b = FullState { mee: cfg.xf, mass: GUESS_MASS_FRACTION * cfg.m0 }.to_array();
    let power = match power {
        PowerGuess::Auto if ms.indices().len() == 1 => PowerGuess::Available,
        PowerGuess::Auto => PowerGuess::Selected,
        p => p,
    };
    let p_bl = 0.5 * (cfg.power.p_bl_bounds[0] + cfg.power.p_bl_bounds[1]);
    let rho_w = sp.rho_p * ms.power_scale();
    let mut dp = DecisionPoint { states: Vec::with_capacity(n), steering: Vec::with_capacity(n), p_e: Vec::with_capacity(n), p_bl };
    let mut available = Vec::with_capacity(n);
    for j in 0..n {
        let s = j as f64 / (n - 1) as f64;
        let x: [f64; 7] = if j == 0 {
            a
        } else if j == n - 1 {
            b
        } else {
            std::array::from_fn(|i| a[i] + (b[i] - a[i]) * s)
        };
        let state = FullState::from_array(x);
        let dir = velocity_direction(&state.mee, cfg).map_err(|e| match e {
            TranscriptionError::Orbit { source, .. } => TranscriptionError::Orbit { node: j, source },
            other => other,
        })?;
        let r = heliocentric_radius(&state.mee).map_err(|source| TranscriptionError::Orbit { node: j, source })?;
        let p_sa = solar_array_power(p_bl, r, cfg.node_years(j), &cfg.power).expect("positive radius");
        let p_ava = available_power_smooth(p_sa, &cfg.power, rho_w).clamp(0.0, cfg.power.p_max);
        let eta = activation_vector(p_ava, ms, sp.rho_e);
        let p_e: f64 = eta.iter().zip(&ms.modes).map(|(e, m)| e * m.power).sum();
        dp.states.push(state);
        dp.steering.push(dir);
        dp.p_e.push(p_e.clamp(0.0, cfg.power.p_max));
        available.push(p_ava);
    }
    if power == PowerGuess::Available {
        for j in 0..n {
            dp.p_e[j] = available[j].min(available[(j + 1).min(n - 1)]);
        }
    }
    Ok(dp)
}

/// Builds a solver for the given options; lets callers swap the algorithm.
pub type SolverFactory<'a> = &'a dyn Fn(&SolverOptions) -> Box<dyn NlpSolver>;

pub fn interior_point(opts: &SolverOptions) -> Box<dyn NlpSolver> {
    Box::new(InteriorPoint::new(opts.clone()))
}

/// Optional knobs of [`run_continuation_with`].
#[derive(Default)]
pub struct ContinuationSettings<'a> {
    pub solver: Option<SolverFactory<'a>>,
    /// no new step starts after this instant
    pub deadline: Option<Instant>,
    /// replaces the interpolated guess
    pub initial: Option<DecisionPoint>,
    pub power_guess: PowerGuess,
}

pub fn run_continuation(
    cfg: &MissionConfig,
    ms: &ModeSet,
    schedule: &ContinuationSchedule,
    opts: &SolverOptions,
) -> Result<(MissionSolution, ContinuationTrace), ContinuationError> {
    run_continuation_with(cfg, ms, schedule, opts, ContinuationSettings::default())
}

struct Attempt {
    nlp: MissionNlp,
    result: SolveResult,
    wall_time: Duration,
}

pub fn run_continuation_with(
    cfg: &MissionConfig,
    ms: &ModeSet,
    schedule: &ContinuationSchedule,
    opts: &SolverOptions,
    settings: ContinuationSettings<'_>,
) -> Result<(MissionSolution, ContinuationTrace), ContinuationError> {
    schedule.validate()?;
    cfg.validate()?;
    let factory: SolverFactory<'_> = settings.solver.unwrap_or(&interior_point);
    let mut step_opts = opts.clone();
    step_opts.max_iterations = schedule.stall_iterations;
    let solver = factory(&step_opts);
    let steps = schedule.effective_steps();

    let first_guess = match settings.initial {
        Some(dp) => dp,
        None => initial_guess_with(cfg, ms, steps[0], settings.power_guess)?,
    };
    let mut point = first_guess.flatten();
    let mut duals: Option<Duals> = None;
    let mut trace = ContinuationTrace::default();
    let mut last_good: Option<(MissionSolution, SmoothingParams)> = None;

    let attempt = |sp: SmoothingParams, x0: &[f64], d: Option<&Duals>| -> Result<Attempt, ContinuationError> {
        let nlp = assemble(cfg, ms, sp)?;
        let started = Instant::now();
        let result = solver.solve_with(&nlp, x0, d, &mut |_| {})?;
        log::info!(
            "rho=({:.3e}, {:.3e}) status={} iterations={} objective={:.6} violation={:.3e}",
            sp.rho_p,
            sp.rho_e,
            result.status,
            result.iterations,
            result.objective_value,
            result.max_constraint_violation
        );
        Ok(Attempt { nlp, result, wall_time: started.elapsed() })
    };

    let mut aborted = None;
    for (k, &sp) in steps.iter().enumerate() {
        if settings.deadline.is_some_and(|d| Instant::now() >= d) {
            aborted = Some(String::from("time budget exhausted"));
            break;
        }
        let mut outcome = attempt(sp, &point, duals.as_ref())?;
        if outcome.result.status != Status::Converged {
            let Some((_, prev)) = &last_good else {
                let message = format!("status {}: {}", outcome.result.status, outcome.result.message);
                return Err(ContinuationError::FirstStep { message, trace });
            };
            let mid = interpolate_log(*prev, sp, schedule.backoff_factor);
            log::warn!("step {} stalled; backing off to ({:.3e}, {:.3e})", k + 1, mid.rho_p, mid.rho_e);
            let retry = attempt(mid, &point, duals.as_ref())?;
            if retry.result.status != Status::Converged {
                aborted = Some(format!("backoff step failed with status {}", retry.result.status));
                break;
            }
            record(&mut trace, mid, &retry);
            point = retry.result.point.clone();
            duals = Some(retry.result.duals.clone());
            last_good = Some((MissionSolution::from_result(&retry.nlp, &retry.result)?, mid));
            outcome = attempt(sp, &point, duals.as_ref())?;
            if outcome.result.status != Status::Converged {
                aborted = Some(format!("step {} failed after backoff with status {}", k + 1, outcome.result.status));
                break;
            }
        }
        record(&mut trace, sp, &outcome);
        point = outcome.result.point.clone();
        duals = Some(outcome.result.duals.clone());
        last_good = Some((MissionSolution::from_result(&outcome.nlp, &outcome.result)?, sp));
    }
    let Some((mut sol, sp)) = last_good else {
        let message = aborted.unwrap_or_else(|| String::from("no step completed"));
        return Err(ContinuationError::FirstStep { message, trace });
    };
    sol.reached_target = aborted.is_none() && sp == schedule.target();
    if let Some(why) = aborted {
        log::warn!("continuation stopped early: {why}");
    }
    Ok((sol, trace))
}

fn record(trace: &mut ContinuationTrace, sp: SmoothingParams, a: &Attempt) {
    let x = &a.result.point;
    trace.records.push(TraceRecord {
        rho_p: sp.rho_p,
        rho_e: sp.rho_e,
        objective: a.result.objective_value,
        feasibility: a.result.max_constraint_violation,
        iterations: a.result.iterations,
        wall_time: a.wall_time,
        p_bl: x[a.nlp.layout().p_bl()],
    });
    debug_assert_eq!(x.len(), a.nlp.num_variables());
}
