//! Discrete thruster operating points and the smoothed selection among them.

use num_dual::DualNum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mee::G0;
use crate::power::smooth_step;

/// Throttle table of the SPT-140 Hall thruster.
pub const SPT140_CSV: &str = include_str!("../data/spt140.csv");

/// Largest accepted relative mismatch between `thrust` and `isp * g0 * mdot`.
const ISP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThrottleError {
    #[error("throttle table line {line}, column `{column}`: {message}")]
    Parse { line: u64, column: String, message: String },
    #[error("throttle table line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("throttle table has no rows")]
    Empty,
    #[error("throttle table header is missing column `{0}`")]
    MissingColumn(String),
    #[error("mode {0} is not in the throttle table")]
    UnknownMode(usize),
    #[error("mode {0} selected more than once")]
    Duplicate(usize),
    #[error("duplicate mode index {0} in the throttle table")]
    DuplicateRow(usize),
    #[error("no modes selected")]
    EmptySelection,
    #[error("activation vector has length {got}, the mode set has {expected} entries")]
    Length { got: usize, expected: usize },
}

/// One operating point in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrottleMode {
    pub index: usize,
    /// input power, W
    pub power: f64,
    /// N
    pub thrust: f64,
    /// kg/s
    pub mass_flow: f64,
    /// s
    pub isp: f64,
    pub efficiency: f64,
}

impl ThrottleMode {
    pub const COAST: ThrottleMode = ThrottleMode {
        index: 0,
        power: 0.0,
        thrust: 0.0,
        mass_flow: 0.0,
        isp: 0.0,
        efficiency: 0.0,
    };
}

const COLUMNS: [&str; 6] = ["mode", "power_W", "thrust_mN", "mdot_mg_s", "isp_s", "efficiency"];

/// Parses a CSV throttle table with the header
/// `mode,power_W,thrust_mN,mdot_mg_s,isp_s,efficiency`.
pub fn load_throttle_table(source: &str) -> Result<Vec<ThrottleMode>, ThrottleError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| ThrottleError::Parse { line: 1, column: String::new(), message: e.to_string() })?
        .clone();
    let mut pos = [0usize; 6];
    for (i, name) in COLUMNS.iter().enumerate() {
        pos[i] = header
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| ThrottleError::MissingColumn((*name).to_owned()))?;
    }
    let mut modes: Vec<ThrottleMode> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ThrottleError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, ThrottleError> {
            let raw = rec.get(pos[i]).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| ThrottleError::Parse {
                line,
                column: COLUMNS[i].to_owned(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(ThrottleError::Parse {
                    line,
                    column: COLUMNS[i].to_owned(),
                    message: format!("{v} must be finite and non-negative"),
                });
            }
            Ok(v)
        };
        let raw_index = rec.get(pos[0]).unwrap_or("");
        let index: usize = raw_index.parse().ok().filter(|&i| i > 0).ok_or_else(|| ThrottleError::Parse {
            line,
            column: COLUMNS[0].to_owned(),
            message: format!("`{raw_index}` is not a positive integer"),
        })?;
        let mode = ThrottleMode {
            index,
            power: field(1)?,
            thrust: field(2)? * 1e-3,
            mass_flow: field(3)? * 1e-6,
            isp: field(4)?,
            efficiency: field(5)?,
        };
        check_row(&mode, line)?;
        if modes.iter().any(|m| m.index == index) {
            return Err(ThrottleError::DuplicateRow(index));
        }
        modes.push(mode);
    }
    if modes.is_empty() {
        return Err(ThrottleError::Empty);
    }
    Ok(modes)
}

fn check_row(m: &ThrottleMode, line: u64) -> Result<(), ThrottleError> {
    let row = |message: String| Err(ThrottleError::Row { line, message });
    // values this large mean the table was written in N or mW
    if m.thrust > 1.0 {
        return row(format!("thrust {} N exceeds 1 N; expected mN", m.thrust));
    }
    if m.power > 10_000.0 {
        return row(format!("power {} W exceeds 10 kW; expected W", m.power));
    }
    if m.power <= 0.0 || m.thrust <= 0.0 || m.mass_flow <= 0.0 {
        return row(String::from("power, thrust and mass flow must be positive"));
    }
    let ideal = m.isp * G0 * m.mass_flow;
    if ((m.thrust - ideal) / m.thrust).abs() > ISP_TOLERANCE {
        return row(format!(
            "thrust {:.4} N differs from isp * g0 * mdot = {ideal:.4} N by more than 2%",
            m.thrust
        ));
    }
    Ok(())
}

/// The bundled SPT-140 table.
pub fn spt140() -> Vec<ThrottleMode> {
    load_throttle_table(SPT140_CSV).expect("bundled throttle table is valid")
}

/// Selected modes sorted by decreasing power, optionally followed by coast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<ThrottleMode>,
    pub includes_coast: bool,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.power).collect()
    }

    pub fn thrusts(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.thrust).collect()
    }

    pub fn mass_flows(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.mass_flow).collect()
    }

    /// Largest selected power, used to make switching arguments dimensionless.
    pub fn power_scale(&self) -> f64 {
        self.modes.iter().map(|m| m.power).fold(0.0, f64::max)
    }

    /// Table indices of the thrusting modes, in set order.
    pub fn indices(&self) -> Vec<usize> {
        self.modes.iter().filter(|m| m.power > 0.0).map(|m| m.index).collect()
    }
}

pub fn build_mode_set(
    table: &[ThrottleMode],
    chosen: &[usize],
    include_coast: bool,
) -> Result<ModeSet, ThrottleError> {
    if chosen.is_empty() {
        return Err(ThrottleError::EmptySelection);
    }
    let mut modes = Vec::with_capacity(chosen.len() + 1);
    for (i, &c) in chosen.iter().enumerate() {
        if chosen[..i].contains(&c) {
            return Err(ThrottleError::Duplicate(c));
        }
        modes.push(*table.iter().find(|m| m.index == c).ok_or(ThrottleError::UnknownMode(c))?);
    }
    modes.sort_by(|a, b| b.power.total_cmp(&a.power).then(a.index.cmp(&b.index)));
    if include_coast {
        modes.push(ThrottleMode::COAST);
    }
    Ok(ModeSet { modes, includes_coast: include_coast })
}

/// Smoothed one-hot weights of the modes for input power `p_e` (W).
///
/// The first mode switches on above its power; mode `i` is on between the
/// powers of modes `i` and `i - 1`. Arguments are divided by the set's
/// power scale, so `rho_e` is dimensionless.
pub fn activation_vector<D: DualNum<Primitive = f64> + Copy>(p_e: D, ms: &ModeSet, rho_e: f64) -> Vec<D> {
    let scale = ms.power_scale();
    let zeta: Vec<D> = ms.modes.iter().map(|m| smooth_step((p_e - m.power) / scale, rho_e)).collect();
    (0..zeta.len())
        .map(|i| if i == 0 { zeta[0] } else { (-zeta[i - 1] + 1.0) * zeta[i] })
        .collect()
}

/// Blended thrust (N) and mass flow (kg/s).
pub fn blended_output<D: DualNum<Primitive = f64> + Copy>(eta: &[D], ms: &ModeSet) -> Result<(D, D), ThrottleError> {
    if eta.len() != ms.len() {
        return Err(ThrottleError::Length { got: eta.len(), expected: ms.len() });
    }
    let mut thrust = D::from(0.0);
    let mut flow = D::from(0.0);
    for (e, m) in eta.iter().zip(&ms.modes) {
        thrust += *e * m.thrust;
        flow += *e * m.mass_flow;
    }
    Ok((thrust, flow))
}

/// Position in the set of the mode a power-limited thruster runs at: the
/// most powerful mode not exceeding `p_e`. `None` when nothing fits and the
/// set has no coast arc.
pub fn select_mode(p_e: f64, ms: &ModeSet) -> Option<usize> {
    ms.modes.iter().position(|m| p_e >= m.power)
}

/// Distance (W) from `p_e` to the nearest switching power of the set.
pub fn switch_distance(p_e: f64, ms: &ModeSet) -> f64 {
    ms.modes
        .iter()
        .filter(|m| m.power > 0.0)
        .map(|m| (p_e - m.power).abs())
        .fold(f64::INFINITY, f64::min)
}
