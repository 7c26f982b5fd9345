//! Quadrotor rigid-body model used as the ground-truth plant.
//!
//! Euler-angle dynamics with gyroscopic coupling, thrust rotated into the
//! inertial frame, and additive angular-acceleration disturbances on the
//! three attitude axes. Integration is fixed-step RK4 with the inputs and
//! disturbance held constant across the step.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// m
    pub arm_length: f64,
    /// kg·m²
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    /// Thrust coefficient `b`, N·s².
    pub thrust_coeff: f64,
    /// Drag-torque coefficient `d`, N·m·s².
    pub torque_coeff: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            arm_length: 0.23,
            jx: 0.0075,
            jy: 0.0075,
            jz: 0.013,
            thrust_coeff: 3.13e-5,
            torque_coeff: 7.5e-7,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("arm_length", self.arm_length),
            ("jx", self.jx),
            ("jy", self.jy),
            ("jz", self.jz),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "quad parameter `{name}` must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Total thrust holding the given mass at hover.
    pub fn hover_thrust(&self, mass: f64) -> f64 {
        mass * self.gravity
    }
}

/// Position, Euler angles (roll φ, pitch θ, yaw ψ), their rates, and time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
    pub yaw_rate: f64,
    pub t: f64,
}

impl QuadState {
    pub fn at_position(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            ..Self::default()
        }
    }

    /// `[x, y, z, φ, θ, ψ, ẋ, ẏ, ż, φ̇, θ̇, ψ̇]`
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.x,
            self.y,
            self.z,
            self.roll,
            self.pitch,
            self.yaw,
            self.vx,
            self.vy,
            self.vz,
            self.roll_rate,
            self.pitch_rate,
            self.yaw_rate,
        ]
    }

    pub fn from_array(a: [f64; 12], t: f64) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            roll: a[3],
            pitch: a[4],
            yaw: a[5],
            vx: a[6],
            vy: a[7],
            vz: a[8],
            roll_rate: a[9],
            pitch_rate: a[10],
            yaw_rate: a[11],
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// `u1` total thrust (N), `u2`/`u3` roll/pitch thrust differentials (N),
/// `u4` yaw torque (N·m).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl ControlInputs {
    pub fn hover(params: &QuadParams) -> Self {
        Self {
            thrust: params.hover_thrust(params.mass),
            ..Self::default()
        }
    }

    fn is_finite(&self) -> bool {
        self.thrust.is_finite()
            && self.roll.is_finite()
            && self.pitch.is_finite()
            && self.yaw.is_finite()
    }
}

/// Time derivative of the 12-element state.
pub fn dynamics_rhs(
    state: &QuadState,
    u: &ControlInputs,
    params: &QuadParams,
    gust: [f64; 3],
) -> Result<[f64; 12]> {
    if !state.is_finite() {
        return Err(Error::NonFiniteInput("dynamics state"));
    }
    if !u.is_finite() || gust.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteInput("dynamics input"));
    }
    Ok(rhs_unchecked(&state.to_array(), u, params, gust))
}

fn rhs_unchecked(s: &[f64; 12], u: &ControlInputs, p: &QuadParams, gust: [f64; 3]) -> [f64; 12] {
    let (phi, theta, psi) = (s[3], s[4], s[5]);
    let (p_rate, q_rate, r_rate) = (s[9], s[10], s[11]);
    let (sphi, cphi) = phi.sin_cos();
    let (stheta, ctheta) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    let thrust_per_mass = u.thrust / p.mass;

    let roll_acc = q_rate * r_rate * (p.jy - p.jz) / p.jx + p.arm_length / p.jx * u.roll + gust[0];
    let pitch_acc =
        p_rate * r_rate * (p.jz - p.jx) / p.jy + p.arm_length / p.jy * u.pitch + gust[1];
    let yaw_acc = p_rate * q_rate * (p.jx - p.jy) / p.jz + u.yaw / p.jz + gust[2];
    let z_acc = thrust_per_mass * cphi * ctheta - p.gravity;
    let x_acc = thrust_per_mass * (cphi * stheta * cpsi + sphi * spsi);
    let y_acc = thrust_per_mass * (cphi * stheta * spsi - sphi * cpsi);

    [
        s[6], s[7], s[8], p_rate, q_rate, r_rate, x_acc, y_acc, z_acc, roll_acc, pitch_acc, yaw_acc,
    ]
}

/// Bounds beyond which a run counts as diverged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceLimits {
    pub state_ceiling: f64,
    /// Roll/pitch magnitude limit, rad.
    pub max_tilt: f64,
}

impl Default for DivergenceLimits {
    fn default() -> Self {
        Self {
            state_ceiling: 1.0e4,
            max_tilt: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// One RK4 step of length `dt`.
pub fn step(
    state: &QuadState,
    u: &ControlInputs,
    params: &QuadParams,
    gust: [f64; 3],
    dt: f64,
    limits: &DivergenceLimits,
) -> Result<QuadState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let y0 = state.to_array();
    let k1 = dynamics_rhs(state, u, params, gust)?;
    let k2 = rhs_unchecked(&axpy(&y0, 0.5 * dt, &k1), u, params, gust);
    let k3 = rhs_unchecked(&axpy(&y0, 0.5 * dt, &k2), u, params, gust);
    let k4 = rhs_unchecked(&axpy(&y0, dt, &k3), u, params, gust);
    let mut y1 = y0;
    for i in 0..12 {
        y1[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = QuadState::from_array(y1, state.t + dt);
    check_divergence(&next, limits)?;
    Ok(next)
}

fn axpy(y: &[f64; 12], a: f64, k: &[f64; 12]) -> [f64; 12] {
    let mut out = *y;
    for i in 0..12 {
        out[i] += a * k[i];
    }
    out
}

pub fn check_divergence(state: &QuadState, limits: &DivergenceLimits) -> Result<()> {
    let arr = state.to_array();
    if let Some(i) = arr
        .iter()
        .position(|v| !v.is_finite() || v.abs() > limits.state_ceiling)
    {
        return Err(Error::Divergence {
            t: state.t,
            reason: format!("state component {i} = {}", arr[i]),
        });
    }
    if state.roll.abs() >= limits.max_tilt || state.pitch.abs() >= limits.max_tilt {
        return Err(Error::Divergence {
            t: state.t,
            reason: format!("tilt roll={} pitch={}", state.roll, state.pitch),
        });
    }
    Ok(())
}

/// Forward mixer: squared rotor speeds to `(u1..u4)`.
///
/// Rotors 2/4 sit on the roll arm and 1/3 on the pitch arm; the yaw row is
/// sign-balanced so that equal speeds give zero yaw torque.
pub fn mix_motors(omega_sq: [f64; 4], params: &QuadParams) -> Result<ControlInputs> {
    if let Some(i) = omega_sq.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::Saturation {
            rotor: i + 1,
            value: omega_sq[i],
        });
    }
    let [w1, w2, w3, w4] = omega_sq;
    let b = params.thrust_coeff;
    let d = params.torque_coeff;
    Ok(ControlInputs {
        thrust: b * (w1 + w2 + w3 + w4),
        roll: b * (w4 - w2),
        pitch: b * (w3 - w1),
        yaw: d * (w2 + w4 - w1 - w3),
    })
}

fn unmix_raw(u: &ControlInputs, params: &QuadParams) -> [f64; 4] {
    let sum = u.thrust / params.thrust_coeff;
    let roll = u.roll / params.thrust_coeff;
    let pitch = u.pitch / params.thrust_coeff;
    let yaw = u.yaw / params.torque_coeff;
    let even = 0.5 * (sum + yaw);
    let odd = 0.5 * (sum - yaw);
    [
        0.5 * (odd - pitch),
        0.5 * (even - roll),
        0.5 * (odd + pitch),
        0.5 * (even + roll),
    ]
}

/// Inverse mixer. Fails if any rotor would need a negative squared speed.
pub fn unmix(u: &ControlInputs, params: &QuadParams) -> Result<[f64; 4]> {
    if !u.is_finite() {
        return Err(Error::NonFiniteInput("unmix"));
    }
    let w = unmix_raw(u, params);
    if let Some(i) = w.iter().position(|&x| x < 0.0) {
        return Err(Error::Saturation {
            rotor: i + 1,
            value: w[i],
        });
    }
    Ok(w)
}

/// Rotor commands clipped to `[0, max_omega_sq]` and the inputs they actually produce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturatedMix {
    pub omega_sq: [f64; 4],
    pub applied: ControlInputs,
    pub saturated: bool,
}

pub fn unmix_saturated(
    u: &ControlInputs,
    params: &QuadParams,
    max_omega_sq: f64,
) -> Result<SaturatedMix> {
    if !u.is_finite() {
        return Err(Error::NonFiniteInput("unmix"));
    }
    let raw = unmix_raw(u, params);
    let mut omega_sq = raw;
    for w in &mut omega_sq {
        *w = w.clamp(0.0, max_omega_sq);
    }
    let saturated = omega_sq != raw;
    let applied = if saturated {
        mix_motors(omega_sq, params)?
    } else {
        *u
    };
    Ok(SaturatedMix {
        omega_sq,
        applied,
        saturated,
    })
}

/// Piecewise-constant mass as a function of time; left-closed at each switch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct MassSchedule {
    entries: Vec<(f64, f64)>,
}

impl MassSchedule {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "mass schedule times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, m)) = entries
            .iter()
            .find(|(t, m)| !(t.is_finite() && m.is_finite() && *m > 0.0))
        {
            return Err(Error::Config(format!(
                "invalid mass schedule entry ({t}, {m})"
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    /// Mass in effect at `t`; `base` before the first entry or when empty.
    pub fn mass_at(&self, t: f64, base: f64) -> f64 {
        self.entries
            .iter()
            .take_while(|(ts, _)| *ts <= t)
            .last()
            .map_or(base, |&(_, m)| m)
    }
}

impl TryFrom<Vec<(f64, f64)>> for MassSchedule {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MassSchedule> for Vec<(f64, f64)> {
    fn from(s: MassSchedule) -> Self {
        s.entries
    }
}

/// Convenience wrapper over [`MassSchedule::mass_at`].
pub fn mass_schedule(t: f64, schedule: &MassSchedule, base: f64) -> f64 {
    schedule.mass_at(t, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> QuadParams {
        QuadParams::default()
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = params();
        let s = QuadState::at_position(1.0, -2.0, 3.0);
        let d = dynamics_rhs(&s, &ControlInputs::hover(&p), &p, [0.0; 3]).unwrap();
        assert!(d.iter().all(|&v| v.abs() < 1e-15), "{d:?}");
    }

    #[test]
    fn gyroscopic_yaw_term_vanishes_for_symmetric_inertia() {
        let p = params();
        let s = QuadState {
            roll_rate: 1.7,
            pitch_rate: -2.3,
            ..QuadState::default()
        };
        let d = dynamics_rhs(&s, &ControlInputs::hover(&p), &p, [0.0; 3]).unwrap();
        assert_eq!(d[11], 0.0);
    }

    #[test]
    fn rhs_rejects_nan() {
        let p = params();
        let s = QuadState {
            roll: f64::NAN,
            ..QuadState::default()
        };
        assert!(dynamics_rhs(&s, &ControlInputs::default(), &p, [0.0; 3]).is_err());
    }

    #[test]
    fn hover_held_for_1000_steps() {
        let p = params();
        let limits = DivergenceLimits::default();
        let mut s = QuadState::at_position(0.0, 0.0, 2.0);
        for _ in 0..1000 {
            s = step(&s, &ControlInputs::hover(&p), &p, [0.0; 3], 0.01, &limits).unwrap();
        }
        let drift = (s.x.powi(2) + s.y.powi(2) + (s.z - 2.0).powi(2)).sqrt();
        assert!(drift < 1e-9, "drift {drift}");
        assert!((s.t - 10.0).abs() < 1e-9);
    }

    #[test]
    fn free_fall_one_second() {
        let p = params();
        let limits = DivergenceLimits::default();
        let mut s = QuadState::default();
        for _ in 0..100 {
            s = step(&s, &ControlInputs::default(), &p, [0.0; 3], 0.01, &limits).unwrap();
        }
        assert!((s.vz + p.gravity).abs() < 1e-6);
        assert!((s.z + 0.5 * p.gravity).abs() < 1e-9);
    }

    #[test]
    fn step_rejects_bad_dt_and_flags_tilt() {
        let p = params();
        let limits = DivergenceLimits::default();
        let s = QuadState::default();
        assert!(step(&s, &ControlInputs::default(), &p, [0.0; 3], 0.0, &limits).is_err());

        let tilted = QuadState {
            roll: 1.5,
            roll_rate: 10.0,
            ..QuadState::default()
        };
        let err = step(
            &tilted,
            &ControlInputs::hover(&p),
            &p,
            [0.0; 3],
            0.01,
            &limits,
        );
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn symmetric_hover_mix() {
        let p = params();
        let c = 70_000.0;
        let u = mix_motors([c; 4], &p).unwrap();
        assert!((u.thrust - 4.0 * p.thrust_coeff * c).abs() < 1e-12);
        assert_eq!(u.roll, 0.0);
        assert_eq!(u.pitch, 0.0);
        assert_eq!(u.yaw, 0.0);
    }

    #[test]
    fn rotor4_faster_rolls_positive() {
        let p = params();
        let u = mix_motors([100.0, 100.0, 100.0, 150.0], &p).unwrap();
        assert!(u.roll > 0.0);
    }

    #[test]
    fn unmix_reports_negative_speed() {
        let p = params();
        let u = ControlInputs {
            thrust: 0.1,
            roll: 5.0,
            ..ControlInputs::default()
        };
        assert!(matches!(
            unmix(&u, &p),
            Err(Error::Saturation { rotor: 2, .. })
        ));
        let sat = unmix_saturated(&u, &p, 2.0e5).unwrap();
        assert!(sat.saturated);
        assert!(sat.omega_sq.iter().all(|&w| (0.0..=2.0e5).contains(&w)));
    }

    #[test]
    fn mass_schedule_left_closed() {
        let s = MassSchedule::new(vec![(0.0, 1.0), (5.0, 1.5)]).unwrap();
        assert_eq!(s.mass_at(4.99, 1.0), 1.0);
        assert_eq!(s.mass_at(5.0, 1.0), 1.5);
        assert_eq!(s.mass_at(100.0, 1.0), 1.5);

        let single = MassSchedule::new(vec![(0.0, 1.0)]).unwrap();
        for t in [0.0, 3.0, 1e4] {
            assert_eq!(mass_schedule(t, &single, 7.0), 1.0);
        }
        assert_eq!(MassSchedule::default().mass_at(3.0, 1.2), 1.2);
        assert!(MassSchedule::new(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn hover_thrust_rises_by_delta_m_g() {
        let p = params();
        let s = MassSchedule::new(vec![(0.0, 1.0), (5.0, 1.5)]).unwrap();
        let before = p.hover_thrust(s.mass_at(1.0, p.mass));
        let after = p.hover_thrust(s.mass_at(6.0, p.mass));
        assert!((after - before - 0.5 * p.gravity).abs() < 1e-12);
    }
}
