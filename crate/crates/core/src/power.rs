//! Solar-array output and the power available to the propulsion system.

use num_dual::DualNum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("heliocentric radius {0:.6e} au is not positive")]
    NonPositiveRadius(f64),
    #[error("invalid power configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerPlantConfig {
    /// beginning-of-life array power range, W
    pub p_bl_bounds: [f64; 2],
    /// maximum input power of the propulsion system, W
    pub p_max: f64,
    /// spacecraft bus power, W
    pub p_sys: f64,
    pub duty_cycle: f64,
    /// yearly degradation rate
    pub sigma: f64,
    /// solar-array radius polynomial coefficients
    pub d: [f64; 5],
}

impl Default for PowerPlantConfig {
    fn default() -> Self {
        Self {
            p_bl_bounds: [10_000.0, 30_000.0],
            p_max: 4863.0,
            p_sys: 590.0,
            duty_cycle: 0.95,
            sigma: 0.02,
            d: [1.1063, 0.1495, -0.299, -0.0432, 0.0],
        }
    }
}

impl PowerPlantConfig {
    pub fn validate(&self) -> Result<(), PowerError> {
        let bad = |msg: &str| Err(PowerError::Config(msg.to_owned()));
        let [lo, hi] = self.p_bl_bounds;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("p_bl_bounds must satisfy 0 < lower <= upper");
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad("p_max must be positive");
        }
        if !(self.p_sys >= 0.0 && self.p_sys.is_finite()) {
            return bad("p_sys must be non-negative");
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return bad("duty_cycle must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return bad("sigma must lie in [0, 1)");
        }
        if self.d.iter().any(|v| !v.is_finite()) {
            return bad("radius coefficients must be finite");
        }
        Ok(())
    }

    /// Saturation level of the available power, W.
    pub fn max_available(&self) -> f64 {
        self.duty_cycle * self.p_max
    }
}

/// Continuation parameters of the two smoothed switches, both dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub rho_p: f64,
    pub rho_e: f64,
}

impl SmoothingParams {
    pub fn new(rho_p: f64, rho_e: f64) -> Self {
        Self { rho_p, rho_e }
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if self.rho_p > 0.0 && self.rho_e > 0.0 && self.rho_p.is_finite() && self.rho_e.is_finite() {
            Ok(())
        } else {
            Err(PowerError::Config(format!(
                "smoothing parameters must be positive, got ({}, {})",
                self.rho_p, self.rho_e
            )))
        }
    }
}

/// Array output at radius `r` (au) after `t_years` of degradation.
pub fn solar_array_power<D: DualNum<Primitive = f64> + Copy>(
    p_bl: D,
    r: D,
    t_years: f64,
    cfg: &PowerPlantConfig,
) -> Result<D, PowerError> {
    if !(r.re() > 0.0) {
        return Err(PowerError::NonPositiveRadius(r.re()));
    }
    let [d1, d2, d3, d4, d5] = cfg.d;
    let inv = r.recip();
    let num = inv * (inv * d3 + d2) + d1;
    let den = r * (r * d5 + d4) + 1.0;
    let decay = (1.0 - cfg.sigma).powf(t_years);
    Ok(p_bl * inv * inv * num / den * decay)
}

pub fn available_power_piecewise(p_sa: f64, cfg: &PowerPlantConfig) -> f64 {
    if p_sa >= cfg.p_sys + cfg.p_max {
        cfg.duty_cycle * cfg.p_max
    } else {
        cfg.duty_cycle * (p_sa - cfg.p_sys)
    }
}

/// `(1 + x / sqrt(x^2 + rho^2)) / 2`
pub fn smooth_step<D: DualNum<Primitive = f64> + Copy>(x: D, rho: f64) -> D {
    (x / (x * x + rho * rho).sqrt() + 1.0) * 0.5
}

/// Smoothed available power; `rho_p_watts` is the switch width in watts.
pub fn available_power_smooth<D: DualNum<Primitive = f64> + Copy>(
    p_sa: D,
    cfg: &PowerPlantConfig,
    rho_p_watts: f64,
) -> D {
    let below = p_sa - cfg.p_sys;
    let chi = smooth_step(below - cfg.p_max, rho_p_watts);
    (chi * cfg.p_max + (-chi + 1.0) * below) * cfg.duty_cycle
}
