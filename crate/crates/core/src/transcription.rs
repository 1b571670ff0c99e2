//! Direct transcription of the mission into a sparse NLP.
//!
//! Decision vector, node-major: for each node `j` the block
//! `[p f g h k l m alpha_r alpha_t alpha_n p_e]`, then `p_bl` last.
//!
//! Constraint rows, in order:
//!
//! * RK4 defects `X_{i+1} - RK4(X_i, u_i)`, 7 per interval
//! * boundary conditions: 6 initial elements, 6 final elements, initial mass
//! * steering norms `|alpha_j|^2 - 1`, one per node
//! * `p_e_j - P_ava(t_j, r_j) <= 0`, one per node
//! * `p_e_i - P_ava(t_{i+1}, r_{i+1}) <= 0`, one per interval

use num_dual::{DualNum, DualSVec64};
use sepopt_nlp::{ConstraintKind, EvalError, Problem, SparsityPattern};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mee::{radius, rates, rk4_step, CanonicalUnits, FullState, MeeError, MeeState};
use crate::power::{available_power_smooth, solar_array_power, PowerPlantConfig, SmoothingParams};
use crate::thruster::{activation_vector, ModeSet, ThrottleError};

pub const NODE_WIDTH: usize = 11;
pub const STATE_DIM: usize = 7;

/// Offsets inside a node block.
pub mod slot {
    pub const P: usize = 0;
    pub const L: usize = 5;
    pub const MASS: usize = 6;
    pub const ALPHA: usize = 7;
    pub const P_E: usize = 10;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptionError {
    #[error("invalid mission configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Modes(#[from] ThrottleError),
    #[error("decision vector has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("node {node}: {source}")]
    Orbit { node: usize, source: MeeError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MassBudgetConfig {
    /// solar-array specific mass, kg/W
    pub gamma1: f64,
    /// power-processing specific mass, kg/W
    pub gamma2: f64,
    /// tank mass per unit propellant mass
    pub alpha_tk: f64,
}

impl Default for MassBudgetConfig {
    fn default() -> Self {
        Self { gamma1: 0.01, gamma2: 0.015, alpha_tk: 0.1 }
    }
}

/// Box bounds of the state variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateBounds {
    /// au
    pub p: [f64; 2],
    pub f: [f64; 2],
    pub g: [f64; 2],
    pub h: [f64; 2],
    pub k: [f64; 2],
    /// true longitude may range from `x0.l - l_margin` to `xf.l + l_margin`
    pub l_margin: f64,
    /// kg; the upper mass bound is the initial mass
    pub mass_min: f64,
}

impl Default for StateBounds {
    fn default() -> Self {
        Self {
            p: [0.2, 5.0],
            f: [-1.0, 1.0],
            g: [-1.0, 1.0],
            h: [-1.0, 1.0],
            k: [-1.0, 1.0],
            l_margin: 1.0,
            mass_min: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub x0: MeeState,
    pub xf: MeeState,
    /// kg
    pub m0: f64,
    pub tof_days: f64,
    pub n_nodes: usize,
    pub mode_indices: Vec<usize>,
    pub include_coast: bool,
    pub power: PowerPlantConfig,
    pub budget: MassBudgetConfig,
    pub bounds: StateBounds,
    pub units: CanonicalUnits,
}

impl MissionConfig {
    /// Earth departure to comet 67P with one SPT-140 mode and 100 nodes.
    pub fn earth_67p() -> Self {
        Self {
            x0: MeeState::from_array([
                0.998874284410563,
                -0.00294251935124146,
                0.0164376759007608,
                -5.51480481733780e-06,
                7.12277764431642e-06,
                10.9784865869657,
            ]),
            xf: MeeState::from_array([
                2.04295724237197,
                0.292069230030979,
                0.570126626743441,
                0.0394123086323580,
                0.0472705619148424,
                28.3786463271836,
            ]),
            m0: 3000.0,
            tof_days: 1770.0,
            n_nodes: 100,
            mode_indices: vec![3],
            include_coast: true,
            power: PowerPlantConfig::default(),
            budget: MassBudgetConfig::default(),
            bounds: StateBounds::default(),
            units: CanonicalUnits::heliocentric(),
        }
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        let bad = |m: String| Err(TranscriptionError::Config(m));
        if self.n_nodes < 3 {
            return bad(format!("n_nodes = {} must be at least 3", self.n_nodes));
        }
        if !(self.tof_days > 0.0 && self.tof_days.is_finite()) {
            return bad(format!("time of flight {} days must be positive", self.tof_days));
        }
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return bad(format!("initial mass {} kg must be positive", self.m0));
        }
        for (name, s) in [("x0", &self.x0), ("xf", &self.xf)] {
            if let Err(e) = s.check() {
                return bad(format!("{name}: {e}"));
            }
        }
        if self.mode_indices.is_empty() {
            return bad(String::from("no thruster modes selected"));
        }
        self.power.validate().map_err(|e| TranscriptionError::Config(e.to_string()))?;
        let b = &self.budget;
        if !(b.gamma1 > 0.0 && b.gamma2 > 0.0 && b.alpha_tk >= 0.0) {
            return bad(String::from("gamma1, gamma2 must be positive and alpha_tk non-negative"));
        }
        let bx = &self.bounds;
        for (name, [lo, hi]) in [("p", bx.p), ("f", bx.f), ("g", bx.g), ("h", bx.h), ("k", bx.k)] {
            if !(lo < hi) {
                return bad(format!("bounds on {name} are inconsistent: [{lo}, {hi}]"));
            }
        }
        if !(bx.mass_min >= 0.0 && bx.mass_min < self.m0) {
            return bad(format!("mass_min {} must lie in [0, m0)", bx.mass_min));
        }
        if !(bx.l_margin >= 0.0) {
            return bad(String::from("l_margin must be non-negative"));
        }
        let lower = self.state_lower();
        let upper = self.state_upper();
        for (name, x) in [("x0", self.x0.to_array()), ("xf", self.xf.to_array())] {
            for i in 0..6 {
                if x[i] < lower[i] || x[i] > upper[i] {
                    return bad(format!("{name} lies outside the state bounds (component {i})"));
                }
            }
        }
        Ok(())
    }

    fn state_lower(&self) -> [f64; 7] {
        let b = &self.bounds;
        [b.p[0], b.f[0], b.g[0], b.h[0], b.k[0], self.x0.l - b.l_margin, b.mass_min]
    }

    fn state_upper(&self) -> [f64; 7] {
        let b = &self.bounds;
        [b.p[1], b.f[1], b.g[1], b.h[1], b.k[1], self.xf.l + b.l_margin, self.m0]
    }

    /// Time of flight in canonical units.
    pub fn tof(&self) -> f64 {
        self.units.days_to_time(self.tof_days)
    }

    /// Interval length in canonical units.
    pub fn step(&self) -> f64 {
        self.tof() / (self.n_nodes - 1) as f64
    }

    pub fn node_time(&self, j: usize) -> f64 {
        j as f64 * self.step()
    }

    pub fn node_years(&self, j: usize) -> f64 {
        self.units.time_to_years(self.node_time(j))
    }

    pub fn node_days(&self, j: usize) -> f64 {
        self.units.time_to_days(self.node_time(j))
    }
}

/// Index map of the decision vector and the constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_nodes: usize,
}

impl Layout {
    pub fn n_vars(&self) -> usize {
        NODE_WIDTH * self.n_nodes + 1
    }

    pub fn node(&self, j: usize) -> usize {
        NODE_WIDTH * j
    }

    pub fn p_bl(&self) -> usize {
        NODE_WIDTH * self.n_nodes
    }

    pub fn n_defects(&self) -> usize {
        STATE_DIM * (self.n_nodes - 1)
    }

    pub fn boundary_row(&self) -> usize {
        self.n_defects()
    }

    pub fn steering_row(&self, j: usize) -> usize {
        self.n_defects() + 13 + j
    }

    pub fn power_row(&self, j: usize) -> usize {
        self.n_defects() + 13 + self.n_nodes + j
    }

    pub fn power_next_row(&self, i: usize) -> usize {
        self.n_defects() + 13 + 2 * self.n_nodes + i
    }

    pub fn n_constraints(&self) -> usize {
        self.n_defects() + 13 + 3 * self.n_nodes - 1
    }
}

/// A decision vector in structured, physical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub states: Vec<FullState>,
    pub steering: Vec<[f64; 3]>,
    /// W
    pub p_e: Vec<f64>,
    /// W
    pub p_bl: f64,
}

impl DecisionPoint {
    pub fn n_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let n = self.states.len();
        let mut x = Vec::with_capacity(NODE_WIDTH * n + 1);
        for j in 0..n {
            x.extend_from_slice(&self.states[j].to_array());
            x.extend_from_slice(&self.steering[j]);
            x.push(self.p_e[j]);
        }
        x.push(self.p_bl);
        x
    }

    pub fn unflatten(x: &[f64], n_nodes: usize) -> Result<Self, TranscriptionError> {
        let layout = Layout { n_nodes };
        if x.len() != layout.n_vars() {
            return Err(TranscriptionError::Length { got: x.len(), expected: layout.n_vars() });
        }
        let mut dp = DecisionPoint {
            states: Vec::with_capacity(n_nodes),
            steering: Vec::with_capacity(n_nodes),
            p_e: Vec::with_capacity(n_nodes),
            p_bl: x[layout.p_bl()],
        };
        for blk in x[..NODE_WIDTH * n_nodes].chunks_exact(NODE_WIDTH) {
            dp.states.push(FullState::from_array(std::array::from_fn(|i| blk[i])));
            dp.steering.push([blk[7], blk[8], blk[9]]);
            dp.p_e.push(blk[10]);
        }
        Ok(dp)
    }

    pub fn initial_mass(&self) -> f64 {
        self.states[0].mass
    }

    pub fn final_mass(&self) -> f64 {
        self.states[self.states.len() - 1].mass
    }
}

/// Mass budget in kg. `m_p` is the propellant mass, `m_f` the final mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassBreakdown {
    pub m_u: f64,
    pub m_p: f64,
    pub m_f: f64,
    pub m_sa: f64,
    pub m_pspu: f64,
    pub m_psfs: f64,
}

/// Mass budget of a decision point. The launch mass is the decision's
/// initial mass, which equals `m0` on every point meeting the boundary rows.
pub fn mass_breakdown(dp: &DecisionPoint, cfg: &MissionConfig) -> MassBreakdown {
    let b = &cfg.budget;
    let m1 = dp.initial_mass();
    let m_f = dp.final_mass();
    let m_p = m1 - m_f;
    let m_sa = b.gamma1 * dp.p_bl;
    let m_pspu = m_sa + b.gamma2 * cfg.power.p_max;
    let m_psfs = (1.0 + b.alpha_tk) * m_p;
    MassBreakdown { m_u: m1 - m_pspu - m_psfs, m_p, m_f, m_sa, m_pspu, m_psfs }
}

/// Negative useful mass, kg.
pub fn objective(dp: &DecisionPoint, cfg: &MissionConfig) -> f64 {
    -mass_breakdown(dp, cfg).m_u
}

/// The transcribed problem for one mode set and one smoothing level.
#[derive(Debug, Clone)]
pub struct MissionNlp {
    cfg: MissionConfig,
    modes: ModeSet,
    smoothing: SmoothingParams,
    layout: Layout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    kinds: Vec<ConstraintKind>,
    pattern: SparsityPattern,
    node_years: Vec<f64>,
    /// canonical acceleration per N/kg
    accel_factor: f64,
    /// canonical mass rate per kg/s
    flow_factor: f64,
}

pub fn assemble(cfg: &MissionConfig, ms: &ModeSet, sp: SmoothingParams) -> Result<MissionNlp, TranscriptionError> {
    cfg.validate()?;
    sp.validate().map_err(|e| TranscriptionError::Config(e.to_string()))?;
    if ms.modes.iter().all(|m| m.power <= 0.0) {
        return Err(ThrottleError::EmptySelection.into());
    }
    let n = cfg.n_nodes;
    let layout = Layout { n_nodes: n };

    let mut lower = vec![f64::NEG_INFINITY; layout.n_vars()];
    let mut upper = vec![f64::INFINITY; layout.n_vars()];
    let (slo, shi) = (cfg.state_lower(), cfg.state_upper());
    for j in 0..n {
        let o = layout.node(j);
        lower[o..o + STATE_DIM].copy_from_slice(&slo);
        upper[o..o + STATE_DIM].copy_from_slice(&shi);
        lower[o + slot::P_E] = 0.0;
        upper[o + slot::P_E] = cfg.power.p_max;
    }
    lower[layout.p_bl()] = cfg.power.p_bl_bounds[0];
    upper[layout.p_bl()] = cfg.power.p_bl_bounds[1];

    let mut kinds = vec![ConstraintKind::Equality; layout.n_constraints()];
    for k in kinds[layout.power_row(0)..].iter_mut() {
        *k = ConstraintKind::Inequality;
    }

    let mut pattern = SparsityPattern::new();
    for i in 0..n - 1 {
        let (o, o_next) = (layout.node(i), layout.node(i + 1));
        for c in 0..STATE_DIM {
            let row = STATE_DIM * i + c;
            for v in 0..NODE_WIDTH {
                pattern.push(row, o + v, false);
            }
            pattern.push(row, o_next + c, true);
        }
    }
    let b = layout.boundary_row();
    for c in 0..6 {
        pattern.push(b + c, c, true);
        pattern.push(b + 6 + c, layout.node(n - 1) + c, true);
    }
    pattern.push(b + 12, slot::MASS, true);
    for j in 0..n {
        for a in 0..3 {
            pattern.push(layout.steering_row(j), layout.node(j) + slot::ALPHA + a, false);
        }
    }
    let power_row = |pattern: &mut SparsityPattern, row: usize, e_node: usize, r_node: usize| {
        for s in [0, 1, 2, slot::L] {
            pattern.push(row, layout.node(r_node) + s, false);
        }
        pattern.push(row, layout.node(e_node) + slot::P_E, true);
        pattern.push(row, layout.p_bl(), false);
    };
    for j in 0..n {
        power_row(&mut pattern, layout.power_row(j), j, j);
    }
    for i in 0..n - 1 {
        power_row(&mut pattern, layout.power_next_row(i), i, i + 1);
    }

    let units = cfg.units;
    Ok(MissionNlp {
        cfg: cfg.clone(),
        modes: ms.clone(),
        smoothing: sp,
        layout,
        lower,
        upper,
        kinds,
        pattern,
        node_years: (0..n).map(|j| cfg.node_years(j)).collect(),
        accel_factor: units.accel_factor(),
        flow_factor: units.mass_rate_factor(),
    })
}

type Dual11 = DualSVec64<11>;
type Dual5 = DualSVec64<5>;

fn seeded<const N: usize>(v: &[f64]) -> [DualSVec64<N>; N] {
    std::array::from_fn(|i| DualSVec64::<N>::from_re(v[i]).derivative(i))
}

fn grad_of<const N: usize>(d: &DualSVec64<N>) -> [f64; N] {
    let g = d.eps.unwrap_generic(nalgebra::Const::<N>, nalgebra::U1);
    std::array::from_fn(|i| g[i])
}

impl MissionNlp {
    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn smoothing(&self) -> SmoothingParams {
        self.smoothing
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Switch width of the available-power law in watts.
    pub fn rho_p_watts(&self) -> f64 {
        self.smoothing.rho_p * self.modes.power_scale()
    }

    /// State rates under the smoothed thruster model. `u = [alpha, p_e]`.
    pub fn rate<D: DualNum<Primitive = f64> + Copy>(&self, x: &[D; 7], u: &[D; 4]) -> Result<[D; 7], MeeError> {
        let eta = activation_vector(u[3], &self.modes, self.smoothing.rho_e);
        let mut thrust = D::from(0.0);
        let mut flow = D::from(0.0);
        for (e, m) in eta.iter().zip(&self.modes.modes) {
            thrust += *e * m.thrust;
            flow += *e * m.mass_flow;
        }
        let a = thrust / x[6] * self.accel_factor;
        rates(x, [a * u[0], a * u[1], a * u[2]], -flow * self.flow_factor, self.cfg.units.mu)
    }

    /// RK4 map over one interval with controls held at `u`.
    pub fn interval_map<D: DualNum<Primitive = f64> + Copy>(&self, x: &[D; 7], u: &[D; 4]) -> Result<[D; 7], MeeError> {
        rk4_step(x, 0.0, self.cfg.step(), |_, s| self.rate(s, u))
    }

    /// Smoothed available power (W) at node `j` for the given orbit and array size.
    pub fn available_power<D: DualNum<Primitive = f64> + Copy>(
        &self,
        j: usize,
        p: D,
        f: D,
        g: D,
        l: D,
        p_bl: D,
    ) -> Result<D, MeeError> {
        let r = radius(p, f, g, l)?;
        // r > 0 is guaranteed by `radius`
        let p_sa = solar_array_power(p_bl, r, self.node_years[j], &self.cfg.power).expect("positive radius");
        Ok(available_power_smooth(p_sa, &self.cfg.power, self.rho_p_watts()))
    }

    pub fn decision(&self, x: &[f64]) -> Result<DecisionPoint, TranscriptionError> {
        DecisionPoint::unflatten(x, self.layout.n_nodes)
    }

    fn node_state(&self, x: &[f64], j: usize) -> [f64; 7] {
        let o = self.layout.node(j);
        std::array::from_fn(|i| x[o + i])
    }

    fn node_control(&self, x: &[f64], j: usize) -> [f64; 4] {
        let o = self.layout.node(j) + slot::ALPHA;
        std::array::from_fn(|i| x[o + i])
    }

    fn power_inputs(&self, x: &[f64], r_node: usize) -> [f64; 5] {
        let o = self.layout.node(r_node);
        [x[o], x[o + 1], x[o + 2], x[o + slot::L], x[self.layout.p_bl()]]
    }

    fn domain(row: usize, e: MeeError) -> EvalError {
        EvalError::Domain(format!("constraint row {row}: {e}"))
    }

    /// Objective gradient and jacobian triplets `(rows, cols, values)`.
    pub fn derivatives(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<(usize, usize, f64)>), EvalError> {
        let mut g = vec![0.0; self.layout.n_vars()];
        self.gradient(x, &mut g)?;
        let mut v = vec![0.0; self.pattern.len()];
        self.jacobian_values(x, &mut v)?;
        let trip = (0..v.len()).map(|k| (self.pattern.rows[k], self.pattern.cols[k], v[k])).collect();
        Ok((g, trip))
    }
}

impl Problem for MissionNlp {
    fn num_variables(&self) -> usize {
        self.layout.n_vars()
    }

    fn constraint_kinds(&self) -> &[ConstraintKind] {
        &self.kinds
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, x: &[f64]) -> Result<f64, EvalError> {
        let n = self.layout.n_nodes;
        let b = &self.cfg.budget;
        let m1 = x[slot::MASS];
        let mn = x[self.layout.node(n - 1) + slot::MASS];
        let p_bl = x[self.layout.p_bl()];
        let v = -(m1 - b.gamma1 * p_bl - b.gamma2 * self.cfg.power.p_max - (1.0 + b.alpha_tk) * (m1 - mn));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFiniteObjective)
        }
    }

    fn gradient(&self, _x: &[f64], grad: &mut [f64]) -> Result<(), EvalError> {
        let n = self.layout.n_nodes;
        let b = &self.cfg.budget;
        grad.fill(0.0);
        grad[slot::MASS] = b.alpha_tk;
        grad[self.layout.node(n - 1) + slot::MASS] = -(1.0 + b.alpha_tk);
        grad[self.layout.p_bl()] = b.gamma1;
        Ok(())
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<(), EvalError> {
        let n = self.layout.n_nodes;
        let lay = self.layout;
        for i in 0..n - 1 {
            let next = self
                .interval_map(&self.node_state(x, i), &self.node_control(x, i))
                .map_err(|e| Self::domain(STATE_DIM * i, e))?;
            let xn = self.node_state(x, i + 1);
            for k in 0..STATE_DIM {
                c[STATE_DIM * i + k] = xn[k] - next[k];
            }
        }
        let b = lay.boundary_row();
        let (x0, xf) = (self.cfg.x0.to_array(), self.cfg.xf.to_array());
        let last = lay.node(n - 1);
        for k in 0..6 {
            c[b + k] = x[k] - x0[k];
            c[b + 6 + k] = x[last + k] - xf[k];
        }
        c[b + 12] = x[slot::MASS] - self.cfg.m0;
        for j in 0..n {
            let a = &x[lay.node(j) + slot::ALPHA..lay.node(j) + slot::ALPHA + 3];
            c[lay.steering_row(j)] = a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - 1.0;
        }
        let mut pava = vec![0.0; n];
        for (j, pv) in pava.iter_mut().enumerate() {
            let [p, f, g, l, pbl] = self.power_inputs(x, j);
            *pv = self.available_power(j, p, f, g, l, pbl).map_err(|e| Self::domain(lay.power_row(j), e))?;
        }
        for j in 0..n {
            c[lay.power_row(j)] = x[lay.node(j) + slot::P_E] - pava[j];
        }
        for i in 0..n - 1 {
            c[lay.power_next_row(i)] = x[lay.node(i) + slot::P_E] - pava[i + 1];
        }
        if let Some(row) = c.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFiniteConstraint(row));
        }
        Ok(())
    }

    fn jacobian_pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) -> Result<(), EvalError> {
        let n = self.layout.n_nodes;
        let lay = self.layout;
        let mut k = 0;
        for i in 0..n - 1 {
            let o = lay.node(i);
            let d: [Dual11; 11] = seeded(&x[o..o + NODE_WIDTH]);
            let xs: [Dual11; 7] = std::array::from_fn(|q| d[q]);
            let us: [Dual11; 4] = std::array::from_fn(|q| d[7 + q]);
            let next = self.interval_map(&xs, &us).map_err(|e| Self::domain(STATE_DIM * i, e))?;
            for c in 0..STATE_DIM {
                let gr = grad_of(&next[c]);
                for v in gr {
                    values[k] = -v;
                    k += 1;
                }
                values[k] = 1.0;
                k += 1;
            }
        }
        for _ in 0..13 {
            values[k] = 1.0;
            k += 1;
        }
        for j in 0..n {
            let o = lay.node(j) + slot::ALPHA;
            for a in 0..3 {
                values[k] = 2.0 * x[o + a];
                k += 1;
            }
        }
        let mut dpava: Vec<[f64; 5]> = Vec::with_capacity(n);
        for j in 0..n {
            let [p, f, g, l, pbl] = seeded::<5>(&self.power_inputs(x, j));
            let v: Dual5 = self.available_power(j, p, f, g, l, pbl).map_err(|e| Self::domain(lay.power_row(j), e))?;
            dpava.push(grad_of(&v));
        }
        let mut push_power = |k: &mut usize, gr: &[f64; 5]| {
            for s in 0..4 {
                values[*k] = -gr[s];
                *k += 1;
            }
            values[*k] = 1.0;
            values[*k + 1] = -gr[4];
            *k += 2;
        };
        for gr in &dpava {
            push_power(&mut k, gr);
        }
        for gr in &dpava[1..] {
            push_power(&mut k, gr);
        }
        debug_assert_eq!(k, self.pattern.len());
        if let Some(e) = values.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFiniteJacobian { row: self.pattern.rows[e], col: self.pattern.cols[e] });
        }
        Ok(())
    }

    fn objective_nonlinear_variables(&self) -> Option<Vec<usize>> {
        Some(Vec::new())
    }

    fn variable_scales(&self) -> Option<Vec<f64>> {
        let mut s = vec![1.0; self.layout.n_vars()];
        for j in 0..self.layout.n_nodes {
            s[self.layout.node(j) + slot::MASS] = self.cfg.m0;
            s[self.layout.node(j) + slot::P_E] = self.cfg.power.p_max;
        }
        s[self.layout.p_bl()] = 1e4;
        Some(s)
    }

    fn constraint_scales(&self) -> Option<Vec<f64>> {
        let lay = self.layout;
        let mut s = vec![1.0; lay.n_constraints()];
        let inv_m = 1.0 / self.cfg.m0;
        for i in 0..lay.n_nodes - 1 {
            s[STATE_DIM * i + slot::MASS] = inv_m;
        }
        s[lay.boundary_row() + 12] = inv_m;
        for v in s[lay.power_row(0)..].iter_mut() {
            *v = 1.0 / self.cfg.power.p_max;
        }
        Some(s)
    }

    fn objective_scale(&self) -> f64 {
        1.0 / self.cfg.m0
    }
}
