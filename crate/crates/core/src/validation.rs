//! Independent checks of a solution with the unsmoothed models.
//!
//! The trajectory is re-integrated with an adaptive eighth-order
//! Dormand–Prince method under zero-order-hold controls. The engine runs
//! the hard-selected mode for `min(P_E, P_ava)`, with `P_ava` from the
//! piecewise power law along the integrated orbit.

use std::cell::RefCell;

use ode_solvers::{Dop853, OutputType, SVector, System};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuation::MissionSolution;
use crate::mee::{heliocentric_radius, radius, rates, FullState, MeeState};
use crate::power::{available_power_piecewise, solar_array_power};
use crate::thruster::{activation_vector, blended_output, select_mode, ModeSet};
use crate::transcription::{mass_breakdown, MassBreakdown, MissionConfig};

/// Relative tolerance of the re-propagation.
pub const REPROPAGATION_RTOL: f64 = 1e-10;

/// Nodes with blended thrust at or below this level (N) count as coasting.
pub const COAST_THRUST: f64 = 1e-3;

type State = SVector<f64, 7>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("solution has {got} nodes, configuration expects {expected}")]
    Shape { got: usize, expected: usize },
    #[error("re-propagation failed on interval {interval}: {message}")]
    Integration { interval: usize, message: String },
}

/// Engine model used while re-integrating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EngineModel {
    /// interval search on the mode powers, capped by the piecewise available power
    Hard,
    /// the solver's blended model at the given `rho_e`
    Smooth { rho_e: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationThresholds {
    /// canonical units
    pub boundary: f64,
    /// W
    pub power: f64,
    pub steering: f64,
    pub mode_ambiguity: f64,
}

impl Default for ValidationThresholds {
    fn default() -> Self {
        Self { boundary: 1e-5, power: 1.0, steering: 1e-8, mode_ambiguity: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub boundary: bool,
    pub power: bool,
    pub steering: bool,
    pub mode_ambiguity: bool,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.boundary && self.power && self.steering && self.mode_ambiguity
    }

    /// Names of the failed categories.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("boundary", self.boundary),
            ("power", self.power),
            ("steering", self.steering),
            ("mode_ambiguity", self.mode_ambiguity),
        ]
        .into_iter()
        .filter_map(|(n, ok)| (!ok).then_some(n))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `|x_N - x_f|` per element, then `|m_1 - m0| / m0`
    pub boundary_residuals: [f64; 7],
    /// largest element gap between the re-propagated final state and `x_f`;
    /// infinite when the re-propagation fails. Reported, not judged: open-loop
    /// propagation of a solution found at finite smoothing may drift far.
    pub max_defect_repropagation_error: f64,
    /// W
    pub power_feasibility: f64,
    pub steering_norm_error: f64,
    pub mode_ambiguity: f64,
    pub mass_budget: MassBreakdown,
    pub verdict: Verdict,
    pub pass: bool,
    /// set when the re-propagation failed
    pub repropagation_failure: Option<String>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Dynamics<'a> {
    cfg: &'a MissionConfig,
    ms: &'a ModeSet,
    model: EngineModel,
    steering: [f64; 3],
    p_e: f64,
    p_bl: f64,
    t0: f64,
    error: &'a RefCell<Option<String>>,
}

impl Dynamics<'_> {
    fn thrust_and_flow(&self, t: f64, y: &State) -> Result<(f64, f64), String> {
        match self.model {
            EngineModel::Smooth { rho_e } => {
                let eta = activation_vector(self.p_e, self.ms, rho_e);
                blended_output(&eta, self.ms).map_err(|e| e.to_string())
            }
            EngineModel::Hard => {
                let r = radius(y[0], y[1], y[2], y[5]).map_err(|e| e.to_string())?;
                let years = self.cfg.units.time_to_years(t);
                let p_sa = solar_array_power(self.p_bl, r, years, &self.cfg.power).map_err(|e| e.to_string())?;
                let p_ava = available_power_piecewise(p_sa, &self.cfg.power);
                let p = self.p_e.min(p_ava);
                Ok(select_mode(p, self.ms).map_or((0.0, 0.0), |i| (self.ms.modes[i].thrust, self.ms.modes[i].mass_flow)))
            }
        }
    }
}

impl System<f64, State> for Dynamics<'_> {
    fn system(&self, t: f64, y: &State, dy: &mut State) {
        let x: [f64; 7] = std::array::from_fn(|i| y[i]);
        let out = self.thrust_and_flow(self.t0 + t, y).and_then(|(thrust, flow)| {
            let a = thrust / x[6] * self.cfg.units.accel_factor();
            let u = self.steering;
            let mdot = -flow * self.cfg.units.mass_rate_factor();
            rates(&x, [a * u[0], a * u[1], a * u[2]], mdot, self.cfg.units.mu).map_err(|e| e.to_string())
        });
        match out {
            Ok(r) => *dy = State::from_column_slice(&r),
            Err(e) => {
                self.error.borrow_mut().get_or_insert(e);
                dy.fill(0.0);
            }
        }
    }
}

fn check_shape(solution: &MissionSolution, cfg: &MissionConfig) -> Result<(), ValidationError> {
    let got = solution.decision.n_nodes();
    if got != cfg.n_nodes {
        return Err(ValidationError::Shape { got, expected: cfg.n_nodes });
    }
    Ok(())
}

/// Re-integrates from the first node and returns the state at arrival.
pub fn repropagate(
    solution: &MissionSolution,
    cfg: &MissionConfig,
    ms: &ModeSet,
    model: EngineModel,
) -> Result<FullState, ValidationError> {
    check_shape(solution, cfg)?;
    let dp = &solution.decision;
    let h = cfg.step();
    let mut y = State::from_column_slice(&dp.states[0].to_array());
    for i in 0..cfg.n_nodes - 1 {
        let error = RefCell::new(None);
        let dynamics = Dynamics {
            cfg,
            ms,
            model,
            steering: dp.steering[i],
            p_e: dp.p_e[i],
            p_bl: dp.p_bl,
            t0: cfg.node_time(i),
            error: &error,
        };
        let mut stepper = Dop853::new(dynamics, 0.0, h, h, y, REPROPAGATION_RTOL, 1e-12);
        stepper.set_output(OutputType::Sparse);
        let fail = |message: String| ValidationError::Integration { interval: i, message };
        stepper.integrate().map_err(|e| fail(e.to_string()))?;
        if let Some(e) = error.take() {
            return Err(fail(e));
        }
        y = *stepper.y_out().last().ok_or_else(|| fail(String::from("no output")))?;
    }
    Ok(FullState::from_array(std::array::from_fn(|i| y[i])))
}

/// Piecewise available power (W) at node `j` of the solution.
fn node_available_power(solution: &MissionSolution, cfg: &MissionConfig, j: usize) -> f64 {
    let dp = &solution.decision;
    match heliocentric_radius(&dp.states[j].mee) {
        Ok(r) => {
            let p_sa = solar_array_power(dp.p_bl, r, cfg.node_years(j), &cfg.power).expect("positive radius");
            available_power_piecewise(p_sa, &cfg.power)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

fn element_gap(a: &MeeState, b: &MeeState) -> [f64; 6] {
    let (a, b) = (a.to_array(), b.to_array());
    std::array::from_fn(|i| (a[i] - b[i]).abs())
}

/// Residuals and verdicts of `solution` against the unsmoothed models.
pub fn audit(
    solution: &MissionSolution,
    cfg: &MissionConfig,
    ms: &ModeSet,
    thresholds: &ValidationThresholds,
) -> Result<ValidationReport, ValidationError> {
    check_shape(solution, cfg)?;
    let dp = &solution.decision;
    let n = cfg.n_nodes;

    let gap = element_gap(&dp.states[n - 1].mee, &cfg.xf);
    let mut boundary_residuals = [0.0; 7];
    boundary_residuals[..6].copy_from_slice(&gap);
    boundary_residuals[6] = (dp.initial_mass() - cfg.m0).abs() / cfg.m0;

    let (max_defect_repropagation_error, repropagation_failure) = match repropagate(solution, cfg, ms, EngineModel::Hard) {
        Ok(end) => (element_gap(&end.mee, &cfg.xf).into_iter().fold(0.0, f64::max), None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };

    let p_ava: Vec<f64> = (0..n).map(|j| node_available_power(solution, cfg, j)).collect();
    let mut power_feasibility: f64 = 0.0;
    for j in 0..n {
        let next = p_ava[(j + 1).min(n - 1)];
        power_feasibility = power_feasibility.max(dp.p_e[j] - p_ava[j]).max(dp.p_e[j] - next);
    }

    let steering_norm_error = dp
        .steering
        .iter()
        .map(|u| ((u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);

    // only the controls of the n - 1 intervals act on the trajectory
    let mut mode_ambiguity: f64 = 0.0;
    for &p_e in &dp.p_e[..n - 1] {
        let eta = activation_vector(p_e, ms, solution.smoothing.rho_e);
        let thrust = blended_output(&eta, ms).map(|(t, _)| t).unwrap_or(0.0);
        if thrust > COAST_THRUST {
            mode_ambiguity = mode_ambiguity.max(1.0 - eta.iter().copied().fold(0.0, f64::max));
        }
    }

    let t = thresholds;
    let verdict = Verdict {
        boundary: boundary_residuals.iter().all(|r| *r <= t.boundary),
        power: power_feasibility <= t.power,
        steering: steering_norm_error <= t.steering,
        mode_ambiguity: mode_ambiguity <= t.mode_ambiguity,
    };
    Ok(ValidationReport {
        boundary_residuals,
        max_defect_repropagation_error,
        power_feasibility,
        steering_norm_error,
        mode_ambiguity,
        mass_budget: mass_breakdown(dp, cfg),
        pass: verdict.pass(),
        verdict,
        repropagation_failure,
    })
}
