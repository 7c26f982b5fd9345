//! Ziegler-Nichols ultimate-gain tuning for the static PID gains.
//!
//! Each channel is modelled near hover as a double integrator
//! `ÿ = c·u` (`c = l/J` for roll and pitch, `1/J_z` for yaw, `1/m` for
//! altitude). A double integrator under pure P control oscillates for every
//! gain, so the probe loop adds fixed rate damping `K_v` and an actuator
//! delay `τ`:
//!
//! ```text
//! u(t) = K_p (r - y(t - τ)) - K_v ẏ(t - τ)
//! ```
//!
//! `K_p` is bisected to the stability boundary `K_u`, the oscillation period
//! there is `T_u`, and the classic table gives `K_p = 0.6 K_u`,
//! `K_i = 1.2 K_u / T_u`, `K_d = 0.075 K_u T_u + K_v`.

use serde::{Deserialize, Serialize};

use crate::control::Axis;
use crate::dynamics::QuadParams;
use crate::pid::PidGains;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZnConfig {
    /// Probe actuator delay, s.
    pub delay: f64,
    /// Rate-loop bandwidth `c·K_v` of the attitude probes, 1/s.
    pub rate_bandwidth: f64,
    /// Rate-loop bandwidth of the altitude probe, 1/s.
    pub alt_rate_bandwidth: f64,
    pub dt: f64,
    /// Length of each probe run, s.
    pub duration: f64,
    /// Relative width at which the bisection stops.
    pub tolerance: f64,
}

impl Default for ZnConfig {
    fn default() -> Self {
        Self {
            delay: 0.05,
            rate_bandwidth: 10.0,
            alt_rate_bandwidth: 2.0,
            dt: 0.01,
            duration: 20.0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZnResult {
    pub axis: Axis,
    pub plant_gain: f64,
    pub rate_gain: f64,
    pub ultimate_gain: f64,
    pub ultimate_period: f64,
    pub gains: PidGains,
}

/// Input-to-acceleration gain of the channel near hover.
pub fn plant_gain(axis: Axis, p: &QuadParams) -> f64 {
    match axis {
        Axis::Roll => p.arm_length / p.jx,
        Axis::Pitch => p.arm_length / p.jy,
        Axis::Yaw => 1.0 / p.jz,
        Axis::Alt => 1.0 / p.mass,
    }
}

/// Outcome of one probe run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    /// Peak |y| in the second half over peak |y| in the first half.
    pub growth: f64,
    /// Mean spacing of same-direction zero crossings in the second half, s.
    pub period: Option<f64>,
}

/// Simulates the delayed probe loop from a unit initial displacement with
/// exact zero-order-hold updates of the double integrator.
pub fn probe(c: f64, kv: f64, kp: f64, cfg: &ZnConfig) -> Probe {
    let dt = cfg.dt;
    let n = (cfg.duration / dt).round() as usize;
    let lag = (cfg.delay / dt).round() as usize;
    let mut hist = std::collections::VecDeque::from(vec![(1.0, 0.0); lag + 1]);
    let (mut y, mut v) = (1.0f64, 0.0f64);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (yd, vd) = hist.pop_front().expect("history holds lag + 1 samples");
        let u = -kp * yd - kv * vd;
        y += v * dt + 0.5 * c * u * dt * dt;
        v += c * u * dt;
        hist.push_back((y, v));
        ys.push(y);
        if !y.is_finite() || y.abs() > 1e12 {
            return Probe {
                growth: f64::INFINITY,
                period: None,
            };
        }
    }
    let half = n / 2;
    let peak = |s: &[f64]| s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let growth = peak(&ys[half..]) / peak(&ys[..half]).max(f64::MIN_POSITIVE);
    let crossings: Vec<f64> = (half + 1..n)
        .filter(|&k| ys[k - 1] < 0.0 && ys[k] >= 0.0)
        .map(|k| {
            let (a, b) = (ys[k - 1], ys[k]);
            ((k - 1) as f64 + a / (a - b)) * dt
        })
        .collect();
    let period = (crossings.len() >= 2)
        .then(|| (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64);
    Probe { growth, period }
}

pub fn zn_tune(axis: Axis, params: &QuadParams, cfg: &ZnConfig) -> Result<ZnResult> {
    params.validate()?;
    if !(cfg.dt > 0.0
        && cfg.duration > 10.0 * cfg.dt
        && cfg.delay >= 0.0
        && cfg.rate_bandwidth > 0.0
        && cfg.alt_rate_bandwidth > 0.0)
    {
        return Err(Error::Config(
            "invalid Ziegler-Nichols probe settings".into(),
        ));
    }
    let c = plant_gain(axis, params);
    let bandwidth = if axis == Axis::Alt {
        cfg.alt_rate_bandwidth
    } else {
        cfg.rate_bandwidth
    };
    let kv = bandwidth / c;
    let unstable = |kp: f64| probe(c, kv, kp, cfg).growth > 1.0;

    let mut lo = 1e-6 / c;
    if unstable(lo) {
        return Err(Error::Config(format!(
            "{}: probe loop unstable at minimal gain; reduce delay or rate bandwidth",
            axis.name()
        )));
    }
    let mut hi = lo;
    while !unstable(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Config(format!(
                "{}: no stability boundary found",
                axis.name()
            )));
        }
    }
    while (hi - lo) > cfg.tolerance * hi {
        let mid = 0.5 * (lo + hi);
        if unstable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let ku = 0.5 * (lo + hi);
    let tu = probe(c, kv, ku, cfg).period.ok_or_else(|| {
        Error::Config(format!(
            "{}: no sustained oscillation at the boundary",
            axis.name()
        ))
    })?;
    Ok(ZnResult {
        axis,
        plant_gain: c,
        rate_gain: kv,
        ultimate_gain: ku,
        ultimate_period: tu,
        gains: PidGains::new(0.6 * ku, 1.2 * ku / tu, 0.075 * ku * tu + kv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_gain_decays_high_gain_grows() {
        let cfg = ZnConfig::default();
        let c = 30.0;
        let kv = cfg.rate_bandwidth / c;
        assert!(probe(c, kv, 0.01, &cfg).growth < 1.0);
        assert!(probe(c, kv, 100.0, &cfg).growth > 1.0);
    }

    #[test]
    fn gains_follow_the_classic_table() {
        let r = zn_tune(Axis::Roll, &QuadParams::default(), &ZnConfig::default()).unwrap();
        let (ku, tu) = (r.ultimate_gain, r.ultimate_period);
        assert!((r.gains.kp - 0.6 * ku).abs() < 1e-12);
        assert!((r.gains.ki - 1.2 * ku / tu).abs() < 1e-12);
        assert!((r.gains.kd - 0.075 * ku * tu - r.rate_gain).abs() < 1e-12);
    }

    #[test]
    fn heavier_vehicle_needs_more_altitude_gain() {
        let cfg = ZnConfig::default();
        let light = zn_tune(Axis::Alt, &QuadParams::default(), &cfg).unwrap();
        let heavy = zn_tune(
            Axis::Alt,
            &QuadParams {
                mass: 2.0,
                ..QuadParams::default()
            },
            &cfg,
        )
        .unwrap();
        assert!((heavy.ultimate_gain / light.ultimate_gain - 2.0).abs() < 1e-2);
    }
}
