//! Incremental PID: frozen static gains plus per-step dynamic increments.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub const ZERO: PidGains = PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
    };

    pub const fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.kp, self.ki, self.kd]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    fn apply(&self, e: &PidErrors) -> f64 {
        self.kp * e.e_p + self.ki * e.e_i + self.kd * e.e_d
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidErrors {
    pub e_p: f64,
    pub e_i: f64,
    pub e_d: f64,
}

impl PidErrors {
    pub fn to_array(self) -> [f64; 3] {
        [self.e_p, self.e_i, self.e_d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    #[serde(default = "default_output_min")]
    pub output_min: f64,
    #[serde(default = "default_output_max")]
    pub output_max: f64,
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
}

fn default_output_min() -> f64 {
    f64::NEG_INFINITY
}
fn default_output_max() -> f64 {
    f64::INFINITY
}
fn default_integral_limit() -> f64 {
    10.0
}

impl PidConfig {
    pub fn gains(&self) -> PidGains {
        PidGains::new(self.kp, self.ki, self.kd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub raw: f64,
    pub saturated: f64,
}

impl ControlOutput {
    pub fn is_clamped(&self) -> bool {
        self.raw != self.saturated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidChannel {
    static_gains: PidGains,
    dynamic_gains: PidGains,
    errors: PidErrors,
    prev_error: Option<f64>,
    output_min: f64,
    output_max: f64,
    integral_limit: f64,
}

impl PidChannel {
    pub fn new(config: &PidConfig) -> Result<Self> {
        let g = config.gains();
        if g.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("PID gains must be finite".into()));
        }
        if config.output_min.is_nan()
            || config.output_max.is_nan()
            || !(config.output_min < config.output_max)
        {
            return Err(Error::Config(format!(
                "PID output limits must satisfy min < max, got [{}, {}]",
                config.output_min, config.output_max
            )));
        }
        if !(config.integral_limit > 0.0) {
            return Err(Error::Config("PID integral limit must be positive".into()));
        }
        Ok(Self {
            static_gains: g,
            dynamic_gains: PidGains::ZERO,
            errors: PidErrors::default(),
            prev_error: None,
            output_min: config.output_min,
            output_max: config.output_max,
            integral_limit: config.integral_limit,
        })
    }

    pub fn static_gains(&self) -> PidGains {
        self.static_gains
    }

    pub fn dynamic_gains(&self) -> PidGains {
        self.dynamic_gains
    }

    pub fn set_dynamic_gains(&mut self, gains: PidGains) {
        self.dynamic_gains = gains;
    }

    pub fn errors(&self) -> PidErrors {
        self.errors
    }

    pub fn output_limits(&self) -> (f64, f64) {
        (self.output_min, self.output_max)
    }

    /// Rectangle-rule integral (clamped) and backward-difference derivative;
    /// the derivative is zero on the first call.
    pub fn update_errors(&mut self, setpoint: f64, measurement: f64, dt: f64) -> PidErrors {
        debug_assert!(dt > 0.0);
        let e_p = setpoint - measurement;
        let e_i = (self.errors.e_i + e_p * dt).clamp(-self.integral_limit, self.integral_limit);
        let e_d = match self.prev_error {
            Some(prev) => (e_p - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(e_p);
        self.errors = PidErrors { e_p, e_i, e_d };
        self.errors
    }

    /// `u = u_sg + u_dg`, then clamped to the output limits.
    pub fn control(&self) -> ControlOutput {
        let raw = self.static_gains.apply(&self.errors) + self.dynamic_gains.apply(&self.errors);
        ControlOutput {
            raw,
            saturated: raw.clamp(self.output_min, self.output_max),
        }
    }
}
