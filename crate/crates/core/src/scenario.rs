//! Declarative experiment description, read from TOML.
//!
//! ```toml
//! name = "square"
//! duration = 100.0
//! dt = 0.01
//! seed = 7
//! mode = "both"
//!
//! [trajectory]
//! kind = "square"
//! side = 4.0
//!
//! [mass]
//! schedule = [[50.0, 1.5]]
//!
//! [gust]
//! enabled = true
//!
//! [controller.roll]
//! kp = 1.2
//! ki = 0.6
//! kd = 0.15
//! ```
//!
//! Every table besides the top-level keys and `[trajectory]` is optional and
//! falls back to the library defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, EpisodeSetup, Mode};
use crate::dynamics::{DivergenceLimits, MassSchedule, QuadParams};
use crate::gust::GustConfig;
use crate::trajectory::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Baseline,
    Adaptive,
    #[default]
    Both,
}

impl RunMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            RunMode::Baseline => vec![Mode::Baseline],
            RunMode::Adaptive => vec![Mode::Adaptive],
            RunMode::Both => vec![Mode::Baseline, Mode::Adaptive],
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(RunMode::Baseline),
            "adaptive" => Ok(RunMode::Adaptive),
            "both" => Ok(RunMode::Both),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassConfig {
    /// `[time s, mass kg]` switch points; before the first the plant mass applies.
    pub schedule: MassSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// s
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub mass: MassConfig,
    #[serde(default)]
    pub gust: GustConfig,
    #[serde(default)]
    pub quad: QuadParams,
    #[serde(default)]
    pub limits: DivergenceLimits,
    #[serde(default)]
    pub controller: ControllerConfig,
}

fn default_dt() -> f64 {
    0.01
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of control steps; `duration / dt` must be an integer.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt.is_finite()
            && self.dt > 0.0
            && self.duration.is_finite()
            && self.duration > 0.0)
        {
            return Err(Error::Config("duration and dt must be positive".into()));
        }
        let n = self.duration / self.dt;
        let r = n.round();
        if (n - r).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Config(format!(
                "duration {} is not a whole number of steps of {}",
                self.duration, self.dt
            )));
        }
        Ok(r as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(
                "name must be non-empty and contain no path separators".into(),
            ));
        }
        self.steps()?;
        self.trajectory.validate()?;
        self.gust.validate()?;
        self.quad.validate()?;
        self.controller.validate()
    }

    pub fn episode_setup(&self) -> Result<EpisodeSetup> {
        self.validate()?;
        Ok(EpisodeSetup {
            params: self.quad,
            limits: self.limits,
            controller: self.controller.clone(),
            trajectory: self.trajectory.clone(),
            mass_schedule: self.mass.schedule.clone(),
            gust: self.gust,
            dt: self.dt,
            steps: self.steps()?,
            seed: self.seed,
            initial_state: None,
        })
    }
}
