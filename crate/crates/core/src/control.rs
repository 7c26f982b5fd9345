//! Closed loop: four SISO channels (roll, pitch, yaw, altitude), an outer
//! PD position law, rotor allocation with saturation, and the plant.
//!
//! Per control step `k` the loop (1) reads the measurements, (2) lets each
//! tuner learn from its pending prediction now that the measurement is
//! known, (3) computes dynamic gains, (4) forms the PID outputs, (5) maps
//! them to rotor commands, and (6) advances the simulator and gust process.

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlInputs, DivergenceLimits, MassSchedule, QuadParams, QuadState};
use crate::gust::GustState;
use crate::pid::{ControlOutput, PidChannel, PidConfig, PidErrors, PidGains};
use crate::trajectory::{Setpoint, Trajectory};
use crate::tuner::{
    derive_seeds, AxisTuning, GainInputs, StepContext, TrainingReport, TunerBundle, TunerConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Roll,
    Pitch,
    Yaw,
    Alt,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Roll, Axis::Pitch, Axis::Yaw, Axis::Alt];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Roll => "roll",
            Axis::Pitch => "pitch",
            Axis::Yaw => "yaw",
            Axis::Alt => "alt",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_attitude(self) -> bool {
        !matches!(self, Axis::Alt)
    }

    pub fn from_name(s: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Adaptive,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric clamp on the channel output.
    #[serde(default = "unbounded")]
    pub output_limit: f64,
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
    /// Residual scale of the identifier's prediction (measurement units).
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

impl AxisConfig {
    pub fn pid(&self) -> PidConfig {
        PidConfig {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            output_min: -self.output_limit,
            output_max: self.output_limit,
            integral_limit: self.integral_limit,
        }
    }

    pub fn gains(&self) -> PidGains {
        PidGains::new(self.kp, self.ki, self.kd)
    }
}

fn unbounded() -> f64 {
    f64::INFINITY
}

fn default_integral_limit() -> f64 {
    10.0
}

fn default_output_scale() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterLoopConfig {
    pub kp: f64,
    pub kd: f64,
    /// Clamp on commanded roll/pitch, rad.
    pub max_tilt: f64,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        Self {
            kp: 0.8,
            kd: 1.4,
            max_tilt: std::f64::consts::FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub roll: AxisConfig,
    pub pitch: AxisConfig,
    pub yaw: AxisConfig,
    pub alt: AxisConfig,
    pub outer: OuterLoopConfig,
    /// Mass assumed by the thrust feedforward; defaults to the plant's base mass.
    pub nominal_mass: Option<f64>,
    /// Upper bound on each squared rotor speed, rad²/s².
    pub max_omega_sq: f64,
    /// Run the tuners but apply zero dynamic gains.
    pub pin_dynamic_gains: bool,
    pub tuner: TunerConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let axis = |kp, ki, kd, output_limit, output_scale| AxisConfig {
            kp,
            ki,
            kd,
            output_limit,
            integral_limit: 10.0,
            output_scale,
        };
        Self {
            roll: axis(2.808, 12.70, 0.4813, 2.0, 0.01),
            pitch: axis(2.808, 12.70, 0.4813, 2.0, 0.01),
            yaw: axis(1.120, 5.065, 0.1919, 0.1, 0.01),
            alt: axis(21.00, 40.70, 4.710, 8.0, 0.01),
            outer: OuterLoopConfig::default(),
            nominal_mass: None,
            max_omega_sq: 2.0e5,
            pin_dynamic_gains: false,
            tuner: TunerConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn axis(&self, axis: Axis) -> &AxisConfig {
        match axis {
            Axis::Roll => &self.roll,
            Axis::Pitch => &self.pitch,
            Axis::Yaw => &self.yaw,
            Axis::Alt => &self.alt,
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut AxisConfig {
        match axis {
            Axis::Roll => &mut self.roll,
            Axis::Pitch => &mut self.pitch,
            Axis::Yaw => &mut self.yaw,
            Axis::Alt => &mut self.alt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in Axis::ALL {
            PidChannel::new(&self.axis(axis).pid())?;
            if !(self.axis(axis).output_scale > 0.0) {
                return Err(Error::Config(format!(
                    "{}: output_scale must be positive",
                    axis.name()
                )));
            }
        }
        if !(self.outer.max_tilt > 0.0 && self.outer.max_tilt <= std::f64::consts::FRAC_PI_4) {
            return Err(Error::Config("outer.max_tilt must lie in (0, π/4]".into()));
        }
        if !(self.max_omega_sq > 0.0) {
            return Err(Error::Config("max_omega_sq must be positive".into()));
        }
        if let Some(m) = self.nominal_mass {
            if !(m > 0.0) {
                return Err(Error::Config("nominal_mass must be positive".into()));
            }
        }
        self.tuner.validate()
    }
}

/// Desired roll/pitch from horizontal position errors under the
/// small-angle, near-hover approximation.
///
/// Accelerations `a = kp·e + kd·ė` are rotated by yaw:
/// `θ_d = (a_x cosψ + a_y sinψ)/g`, `φ_d = (a_x sinψ − a_y cosψ)/g`,
/// each clamped to `±max_tilt`.
pub fn outer_position_law(
    pos_err: [f64; 2],
    vel_err: [f64; 2],
    yaw: f64,
    gravity: f64,
    cfg: &OuterLoopConfig,
) -> (f64, f64) {
    let ax = cfg.kp * pos_err[0] + cfg.kd * vel_err[0];
    let ay = cfg.kp * pos_err[1] + cfg.kd * vel_err[1];
    let (s, c) = yaw.sin_cos();
    let pitch = ((ax * c + ay * s) / gravity).clamp(-cfg.max_tilt, cfg.max_tilt);
    let roll = ((ax * s - ay * c) / gravity).clamp(-cfg.max_tilt, cfg.max_tilt);
    (roll, pitch)
}

/// Per-axis telemetry for one control step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxisLog {
    pub setpoint: f64,
    pub measurement: f64,
    pub errors: PidErrors,
    pub static_gains: PidGains,
    pub dynamic_gains: PidGains,
    pub u_raw: f64,
    pub u: f64,
    pub mu: f64,
    pub sigma: f64,
    pub s_m: f64,
    pub reward: f64,
    pub td_error: f64,
    pub loss_actor: f64,
    pub loss_critic: f64,
    /// An update was applied (or skipped) this step.
    pub updated: bool,
}

/// One SISO channel: PID plus an optional tuner and its input window.
#[derive(Debug, Clone)]
pub struct AxisController {
    pub axis: Axis,
    pid: PidChannel,
    tuner: Option<TunerBundle>,
    pin_gains: bool,
    u_hist: [Option<f64>; 2],
    s_prev: Option<f64>,
    pending: Option<StepContext>,
}

impl AxisController {
    pub fn baseline(axis: Axis, cfg: &AxisConfig) -> Result<Self> {
        Ok(Self {
            axis,
            pid: PidChannel::new(&cfg.pid())?,
            tuner: None,
            pin_gains: false,
            u_hist: [None; 2],
            s_prev: None,
            pending: None,
        })
    }

    pub fn adaptive(
        axis: Axis,
        cfg: &AxisConfig,
        tuner_cfg: &TunerConfig,
        dt: f64,
        pin_gains: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut c = Self::baseline(axis, cfg)?;
        let tuning = AxisTuning::from_static(
            cfg.gains(),
            tuner_cfg.gain_scale_fraction,
            cfg.output_scale,
            dt,
        );
        c.tuner = Some(TunerBundle::new(tuner_cfg, tuning, seed)?);
        c.pin_gains = pin_gains;
        Ok(c)
    }

    pub fn pid(&self) -> &PidChannel {
        &self.pid
    }

    pub fn tuner(&self) -> Option<&TunerBundle> {
        self.tuner.as_ref()
    }

    pub fn is_baseline(&self) -> bool {
        self.tuner.is_none()
    }

    /// One control step for this axis: learn, tune, and compute the output.
    pub fn step(
        &mut self,
        setpoint: f64,
        measurement: f64,
        dt: f64,
    ) -> Result<(ControlOutput, AxisLog)> {
        let errors = self.pid.update_errors(setpoint, measurement, dt);
        let mut log = AxisLog {
            setpoint,
            measurement,
            errors,
            static_gains: self.pid.static_gains(),
            ..AxisLog::default()
        };

        let mut tuned = None;
        if let Some(tuner) = self.tuner.as_mut() {
            if let Some(ctx) = self.pending.take() {
                let report: TrainingReport = tuner.update(&ctx, measurement, errors.e_p)?;
                log.reward = report.reward;
                log.td_error = report.td_error;
                log.loss_actor = report.losses.actor;
                log.loss_critic = report.losses.critic;
                log.updated = true;
            }
            if let ([Some(u_prev), Some(u_prev2)], Some(s_prev2)) = (self.u_hist, self.s_prev) {
                let t = tuner.compute_dynamic_gains(&GainInputs {
                    u_prev,
                    u_prev2,
                    s_prev: measurement,
                    s_prev2,
                    errors,
                })?;
                tuned = Some(t);
            }
        }

        let gains = match &tuned {
            Some(t) if !self.pin_gains => t.gains,
            _ => PidGains::ZERO,
        };
        self.pid.set_dynamic_gains(gains);
        let out = self.pid.control();

        if let Some(tuner) = self.tuner.as_mut() {
            match tuned {
                Some(t) => {
                    let ctx = tuner.record_step(
                        t,
                        self.pid.static_gains(),
                        errors,
                        out,
                        self.pid.output_limits(),
                        measurement,
                        self.s_prev.expect("window populated"),
                    )?;
                    log.mu = ctx.ident.mu;
                    log.sigma = ctx.ident.sigma;
                    log.s_m = ctx.ident.s_m;
                    self.pending = Some(ctx);
                }
                None => tuner.observe_control(out.saturated),
            }
        }

        self.u_hist = [Some(out.saturated), self.u_hist[0]];
        self.s_prev = Some(measurement);
        log.dynamic_gains = gains;
        log.u_raw = out.raw;
        log.u = out.saturated;
        Ok((out, log))
    }
}

/// One row of episode telemetry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub state: QuadState,
    pub mass: f64,
    pub x_ref: f64,
    pub y_ref: f64,
    pub axes: [AxisLog; 4],
    pub inputs: ControlInputs,
    pub omega_sq: [f64; 4],
    pub gust: [f64; 3],
    pub tuner_ready: bool,
}

impl StepLog {
    pub fn axis(&self, axis: Axis) -> &AxisLog {
        &self.axes[axis.index()]
    }
}

/// Everything needed to run one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub params: QuadParams,
    pub limits: DivergenceLimits,
    pub controller: ControllerConfig,
    pub trajectory: Trajectory,
    pub mass_schedule: MassSchedule,
    pub gust: crate::gust::GustConfig,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub initial_state: Option<QuadState>,
}

pub struct Episode {
    setup: EpisodeSetup,
    state: QuadState,
    gust: GustState,
    controllers: [AxisController; 4],
    k: usize,
}

impl Episode {
    pub fn new(setup: EpisodeSetup, mode: Mode) -> Result<Self> {
        setup.params.validate()?;
        setup.controller.validate()?;
        let [gust_seed, tuner_seed] = derive_seeds::<2>(setup.seed);
        let tuner_seeds = derive_seeds::<4>(tuner_seed);
        let mut controllers = Vec::with_capacity(4);
        for axis in Axis::ALL {
            let cfg = setup.controller.axis(axis);
            controllers.push(match mode {
                Mode::Baseline => AxisController::baseline(axis, cfg)?,
                Mode::Adaptive => AxisController::adaptive(
                    axis,
                    cfg,
                    &setup.controller.tuner,
                    setup.dt,
                    setup.controller.pin_dynamic_gains,
                    tuner_seeds[axis.index()],
                )?,
            });
        }
        let state = setup
            .initial_state
            .unwrap_or_else(|| setup.trajectory.initial_state());
        Ok(Self {
            gust: GustState::new(&setup.gust, gust_seed)?,
            controllers: controllers.try_into().expect("four axes"),
            state,
            setup,
            k: 0,
        })
    }

    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn controllers(&self) -> &[AxisController; 4] {
        &self.controllers
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Advances the closed loop by one control period.
    pub fn step(&mut self) -> Result<StepLog> {
        let dt = self.setup.dt;
        let t = self.k as f64 * dt;
        let s = self.state;
        let g = self.setup.params.gravity;

        let sp = self.setup.trajectory.setpoint(t);
        let (roll_ref, pitch_ref, x_ref, y_ref) = match sp {
            Setpoint::Position { x, y, vx, vy, .. } => {
                let (r, p) = outer_position_law(
                    [x - s.x, y - s.y],
                    [vx - s.vx, vy - s.vy],
                    s.yaw,
                    g,
                    &self.setup.controller.outer,
                );
                (r, p, x, y)
            }
            Setpoint::Attitude { roll, pitch, .. } => (roll, pitch, s.x, s.y),
        };
        let refs = [roll_ref, pitch_ref, sp.yaw(), sp.z()];
        let meas = [s.roll, s.pitch, s.yaw, s.z];

        let mut axes = [AxisLog::default(); 4];
        let mut outs = [0.0; 4];
        for (i, c) in self.controllers.iter_mut().enumerate() {
            let (out, log) = c.step(refs[i], meas[i], dt)?;
            outs[i] = out.saturated;
            axes[i] = log;
        }

        let nominal_mass = self
            .setup
            .controller
            .nominal_mass
            .unwrap_or(self.setup.params.mass);
        let tilt = (s.roll.cos() * s.pitch.cos()).max(0.5);
        let command = ControlInputs {
            thrust: (nominal_mass * g / tilt + outs[3]).max(0.0),
            roll: outs[0],
            pitch: outs[1],
            yaw: outs[2],
        };
        let mix = dynamics::unmix_saturated(
            &command,
            &self.setup.params,
            self.setup.controller.max_omega_sq,
        )?;

        let mut params = self.setup.params;
        params.mass = self.setup.mass_schedule.mass_at(t, self.setup.params.mass);
        let gust = self.gust.disturbance();

        let log = StepLog {
            step: self.k,
            t,
            state: s,
            mass: params.mass,
            x_ref,
            y_ref,
            axes,
            inputs: mix.applied,
            omega_sq: mix.omega_sq,
            gust,
            tuner_ready: axes.iter().any(|a| a.updated),
        };

        let mut next = dynamics::step(&s, &mix.applied, &params, gust, dt, &self.setup.limits)?;
        self.gust.step(dt);
        self.k += 1;
        next.t = self.k as f64 * dt;
        self.state = next;
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub mode: Mode,
    pub rows: Vec<StepLog>,
    /// Set when the episode was aborted; rows hold the partial log.
    pub failure: Option<String>,
    /// Skipped tuner updates per axis.
    pub incidents: [u64; 4],
}

impl EpisodeResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Runs `setup.steps` control periods, stopping early on divergence.
pub fn run_episode(setup: &EpisodeSetup, mode: Mode) -> Result<EpisodeResult> {
    let mut ep = Episode::new(setup.clone(), mode)?;
    let mut rows = Vec::with_capacity(setup.steps);
    let mut failure = None;
    for _ in 0..setup.steps {
        match ep.step() {
            Ok(row) => rows.push(row),
            Err(
                e @ (Error::Divergence { .. } | Error::NonFinite { .. } | Error::NonFiniteInput(_)),
            ) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let incidents = ep
        .controllers()
        .each_ref()
        .map(|c| c.tuner().map_or(0, TunerBundle::incidents));
    Ok(EpisodeResult {
        mode,
        rows,
        failure,
        incidents,
    })
}

/// Root-mean-square tracking error of `axis` over `window` (row indices).
/// Attitude axes are reported in degrees, altitude in metres.
pub fn rmse(rows: &[StepLog], axis: Axis, window: std::ops::Range<usize>) -> Result<f64> {
    let window = window.start.min(rows.len())..window.end.min(rows.len());
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = window.len() as f64;
    let ms = rows[window]
        .iter()
        .map(|r| {
            let a = r.axis(axis);
            (a.setpoint - a.measurement).powi(2)
        })
        .sum::<f64>()
        / n;
    let v = ms.sqrt();
    Ok(if axis.is_attitude() {
        v.to_degrees()
    } else {
        v
    })
}
