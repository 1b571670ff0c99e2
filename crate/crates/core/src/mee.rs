//! Modified equinoctial elements: canonical units, conversion to Cartesian
//! coordinates, Gauss variational equations and the RK4 interval map.
//!
//! Numeric routines are generic over [`DualNum`] so the same code yields
//! values (with `f64`) and forward-mode derivatives (with dual numbers).

use nalgebra::Vector3;
use num_dual::DualNum;
use thiserror::Error;

/// Astronomical unit in meters.
pub const AU: f64 = 1.495978707e11;
/// Heliocentric gravitational parameter in m^3/s^2.
pub const MU_SUN: f64 = 1.32712440018e20;
/// Standard gravity in m/s^2.
pub const G0: f64 = 9.80665;
pub const SECONDS_PER_DAY: f64 = 86400.0;
pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MeeError {
    #[error("degenerate orbit: w = 1 + f cos l + g sin l = {w:.6e} is not positive")]
    Degenerate { w: f64 },
    #[error("semi-latus rectum {p:.6e} is not positive")]
    NonPositiveP { p: f64 },
}

/// Length 1 au, time such that `mu = 1`, mass in kilograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalUnits {
    /// meters per length unit
    pub length_unit: f64,
    /// seconds per time unit
    pub time_unit: f64,
    /// kilograms per mass unit
    pub mass_unit: f64,
    pub mu: f64,
}

impl Default for CanonicalUnits {
    fn default() -> Self {
        Self::heliocentric()
    }
}

impl CanonicalUnits {
    pub fn heliocentric() -> Self {
        Self {
            length_unit: AU,
            time_unit: (AU.powi(3) / MU_SUN).sqrt(),
            mass_unit: 1.0,
            mu: 1.0,
        }
    }

    /// Canonical acceleration per (N / kg).
    pub fn accel_factor(&self) -> f64 {
        self.time_unit * self.time_unit / self.length_unit
    }

    /// Canonical mass rate per kg/s.
    pub fn mass_rate_factor(&self) -> f64 {
        self.time_unit / self.mass_unit
    }

    pub fn days_to_time(&self, days: f64) -> f64 {
        days * SECONDS_PER_DAY / self.time_unit
    }

    pub fn time_to_days(&self, t: f64) -> f64 {
        t * self.time_unit / SECONDS_PER_DAY
    }

    pub fn time_to_years(&self, t: f64) -> f64 {
        self.time_to_days(t) / DAYS_PER_YEAR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeeState {
    pub p: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub k: f64,
    /// true longitude, unwrapped
    pub l: f64,
}

impl MeeState {
    pub fn new(p: f64, f: f64, g: f64, h: f64, k: f64, l: f64) -> Self {
        Self { p, f, g, h, k, l }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.p, self.f, self.g, self.h, self.k, self.l]
    }

    pub fn w(&self) -> f64 {
        1.0 + self.f * self.l.cos() + self.g * self.l.sin()
    }

    pub fn check(&self) -> Result<(), MeeError> {
        if !(self.p > 0.0) {
            return Err(MeeError::NonPositiveP { p: self.p });
        }
        let w = self.w();
        if !(w > 0.0) {
            return Err(MeeError::Degenerate { w });
        }
        Ok(())
    }
}

/// Orbital elements plus spacecraft mass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FullState {
    pub mee: MeeState,
    pub mass: f64,
}

impl FullState {
    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            mee: MeeState::new(a[0], a[1], a[2], a[3], a[4], a[5]),
            mass: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let m = &self.mee;
        [m.p, m.f, m.g, m.h, m.k, m.l, self.mass]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl CartesianState {
    /// Columns of the radial, transverse and normal unit vectors.
    pub fn rtn_basis(&self) -> [Vector3<f64>; 3] {
        let r = self.position.normalize();
        let n = self.position.cross(&self.velocity).normalize();
        let t = n.cross(&r);
        [r, t, n]
    }

    /// Components of an inertial vector in the RTN frame.
    pub fn to_rtn(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let [r, t, n] = self.rtn_basis();
        Vector3::new(r.dot(v), t.dot(v), n.dot(v))
    }
}

pub fn mee_to_cartesian(state: &MeeState, units: &CanonicalUnits) -> Result<CartesianState, MeeError> {
    state.check()?;
    let MeeState { p, f, g, h, k, l } = *state;
    let (sl, cl) = l.sin_cos();
    let w = state.w();
    let r = p / w;
    let s2 = 1.0 + h * h + k * k;
    let a2 = h * h - k * k;
    let position = Vector3::new(
        cl + a2 * cl + 2.0 * h * k * sl,
        sl - a2 * sl + 2.0 * h * k * cl,
        2.0 * (h * sl - k * cl),
    ) * (r / s2);
    let c = -(units.mu / p).sqrt() / s2;
    let velocity = Vector3::new(
        sl + a2 * sl - 2.0 * h * k * cl + g - 2.0 * f * h * k + a2 * g,
        -cl + a2 * cl + 2.0 * h * k * sl - f + 2.0 * g * h * k + a2 * f,
        -2.0 * (h * cl + k * sl + f * h + g * k),
    ) * c;
    Ok(CartesianState { position, velocity })
}

pub fn heliocentric_radius(state: &MeeState) -> Result<f64, MeeError> {
    state.check()?;
    Ok(state.p / state.w())
}

/// `p / w` for generic scalars; errors when `w <= 0` or `p <= 0`.
pub fn radius<D: DualNum<Primitive = f64> + Copy>(p: D, f: D, g: D, l: D) -> Result<D, MeeError> {
    let w = f * l.cos() + g * l.sin() + 1.0;
    if !(w.re() > 0.0) {
        return Err(MeeError::Degenerate { w: w.re() });
    }
    if !(p.re() > 0.0) {
        return Err(MeeError::NonPositiveP { p: p.re() });
    }
    Ok(p / w)
}

/// Time derivatives `[p, f, g, h, k, l, m]` under an RTN acceleration.
/// `mass_rate` is passed through as the last component.
pub fn rates<D: DualNum<Primitive = f64> + Copy>(
    x: &[D; 7],
    accel_rtn: [D; 3],
    mass_rate: D,
    mu: f64,
) -> Result<[D; 7], MeeError> {
    let [p, f, g, h, k, l, _] = *x;
    if !(p.re() > 0.0) {
        return Err(MeeError::NonPositiveP { p: p.re() });
    }
    let (sl, cl) = (l.sin(), l.cos());
    let w = f * cl + g * sl + 1.0;
    if !(w.re() > 0.0) {
        return Err(MeeError::Degenerate { w: w.re() });
    }
    let [ar, at, an] = accel_rtn;
    let s2 = h * h + k * k + 1.0;
    let q = (p / mu).sqrt();
    let hk = h * sl - k * cl;
    let wp1 = w + 1.0;
    let p_dot = p * q * at * 2.0 / w;
    let f_dot = q * (ar * sl + (wp1 * cl + f) * at / w - hk * g * an / w);
    let g_dot = q * (-ar * cl + (wp1 * sl + g) * at / w + hk * f * an / w);
    let h_dot = q * s2 * an * cl / (w * 2.0);
    let k_dot = q * s2 * an * sl / (w * 2.0);
    let wp = w / p;
    let l_dot = (p * mu).sqrt() * wp * wp + q * hk * an / w;
    Ok([p_dot, f_dot, g_dot, h_dot, k_dot, l_dot, mass_rate])
}

/// Rates for a physical state; `accel_rtn` and `mass_rate` in canonical units.
pub fn mee_rates(
    state: &FullState,
    accel_rtn: [f64; 3],
    mass_rate: f64,
    units: &CanonicalUnits,
) -> Result<[f64; 7], MeeError> {
    rates(&state.to_array(), accel_rtn, mass_rate, units.mu)
}

/// One classical RK4 step of size `h` from time `t`; the caller's rate
/// function sees the stage times and holds controls fixed.
pub fn rk4_step<D, E>(
    x: &[D; 7],
    t: f64,
    h: f64,
    mut rate: impl FnMut(f64, &[D; 7]) -> Result<[D; 7], E>,
) -> Result<[D; 7], E>
where
    D: DualNum<Primitive = f64> + Copy,
{
    let stage = |x: &[D; 7], k: &[D; 7], c: f64| -> [D; 7] { std::array::from_fn(|i| x[i] + k[i] * c) };
    let k1 = rate(t, x)?;
    let k2 = rate(t + 0.5 * h, &stage(x, &k1, 0.5 * h))?;
    let k3 = rate(t + 0.5 * h, &stage(x, &k2, 0.5 * h))?;
    let k4 = rate(t + h, &stage(x, &k3, h))?;
    Ok(std::array::from_fn(|i| {
        x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn units() -> CanonicalUnits {
        CanonicalUnits::heliocentric()
    }

    fn circular(l: f64) -> MeeState {
        MeeState::new(1.0, 0.0, 0.0, 0.0, 0.0, l)
    }

    #[test]
    fn time_unit_gives_two_pi_period_at_one_au() {
        let u = units();
        let period_s = 2.0 * PI * (AU.powi(3) / MU_SUN).sqrt();
        assert_relative_eq!(period_s / u.time_unit, 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(u.time_unit, 5_022_642.891_366, max_relative = 1e-12);
    }

    #[test]
    fn circular_orbit_at_l_zero() {
        let c = mee_to_cartesian(&circular(0.0), &units()).unwrap();
        assert_relative_eq!(c.position, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(c.velocity, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn circular_orbit_quarter_revolution() {
        let c = mee_to_cartesian(&circular(FRAC_PI_2), &units()).unwrap();
        assert_relative_eq!(c.position, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(c.velocity, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn radius_examples() {
        assert_eq!(heliocentric_radius(&circular(2.3)).unwrap(), 1.0);
        let s = MeeState::new(1.0, 0.5, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(heliocentric_radius(&s).unwrap(), 1.0 / 1.5, max_relative = 1e-15);
    }

    #[test]
    fn degenerate_orbit_is_rejected() {
        let s = MeeState::new(1.0, -1.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(mee_to_cartesian(&s, &units()), Err(MeeError::Degenerate { .. })));
        assert!(heliocentric_radius(&s).is_err());
    }

    #[test]
    fn unforced_circular_rates() {
        let s = FullState { mee: circular(0.7), mass: 1000.0 };
        let r = mee_rates(&s, [0.0; 3], 0.0, &units()).unwrap();
        assert_eq!(&r[..5], &[0.0; 5]);
        assert_relative_eq!(r[5], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn transverse_thrust_raises_p_at_twice_the_acceleration() {
        let s = FullState { mee: circular(0.0), mass: 1000.0 };
        let a_t = 3.2e-3;
        let r = mee_rates(&s, [0.0, a_t, 0.0], 0.0, &units()).unwrap();
        assert_relative_eq!(r[0], 2.0 * a_t, max_relative = 1e-15);
    }

    #[test]
    fn rk4_is_exact_for_constant_rates() {
        let x = [1.0, 0.1, -0.2, 0.01, 0.02, 3.0, 900.0];
        let c = [0.5, -1.0, 2.0, 0.25, -0.125, 1.5, -3.0];
        let y = rk4_step(&x, 0.0, 0.37, |_, _| Ok::<_, MeeError>(c)).unwrap();
        for i in 0..7 {
            assert_relative_eq!(y[i], x[i] + c[i] * 0.37, max_relative = 1e-15);
        }
        let z = rk4_step(&x, 0.0, 0.0, |_, _| Ok::<_, MeeError>(c)).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn position_derivative_matches_velocity() {
        // numerical derivative of position along the unforced flow
        let u = units();
        let s = MeeState::new(1.3, 0.1, -0.05, 0.02, -0.03, 0.4);
        let l_dot = rates(&FullState { mee: s, mass: 1.0 }.to_array(), [0.0; 3], 0.0, 1.0).unwrap()[5];
        let dt = 1e-5;
        let at = |dl: f64| mee_to_cartesian(&MeeState { l: s.l + dl, ..s }, &u).unwrap().position;
        let fd = (at(l_dot * dt) - at(-l_dot * dt)) / (2.0 * dt);
        let v = mee_to_cartesian(&s, &u).unwrap().velocity;
        assert!((fd - v).norm() < 1e-8, "{fd} vs {v}");
    }
}
