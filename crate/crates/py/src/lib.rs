//! Python bindings: scenarios and episode runs, the plant model, the gust
//! filter, standalone networks, gradient checks and the ZN helper.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use quadtune::control::{rmse, run_episode, Axis, Mode, StepLog};
use quadtune::dynamics::{self, ControlInputs, DivergenceLimits, QuadParams, QuadState};
use quadtune::gust::{GustConfig, GustState};
use quadtune::mlp::{Activation, LayerSpec, MlpNetwork};
use quadtune::scenario::ScenarioConfig;
use quadtune::{gradcheck, telemetry, zn, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Divergence { .. }
        | Error::NonFinite { .. }
        | Error::NonFiniteInput(_)
        | Error::Saturation { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_axis(name: &str) -> PyResult<Axis> {
    Axis::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown axis `{name}`")))
}

fn parse_mode(name: &str) -> PyResult<Mode> {
    match name {
        "baseline" => Ok(Mode::Baseline),
        "adaptive" => Ok(Mode::Adaptive),
        other => Err(PyValueError::new_err(format!(
            "mode must be `baseline` or `adaptive`, got `{other}`"
        ))),
    }
}

fn parse_activation(name: &str) -> PyResult<Activation> {
    match name {
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        "linear" => Ok(Activation::Linear),
        other => Err(PyValueError::new_err(format!(
            "unknown activation `{other}`"
        ))),
    }
}

/// A scenario description (the TOML accepted by `quadtune run`).
#[pyclass(name = "Scenario", module = "quadtune_py")]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text, "<string>")
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, duration: f64) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.duration = duration;
        c.validate().map_err(to_py)?;
        self.inner = c;
        Ok(())
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    /// Runs one episode; the GIL is released while it runs.
    #[pyo3(signature = (mode = "adaptive"))]
    fn run(&self, py: Python<'_>, mode: &str) -> PyResult<PyRunResult> {
        let mode = parse_mode(mode)?;
        let setup = self.inner.episode_setup().map_err(to_py)?;
        let r = py.detach(|| run_episode(&setup, mode)).map_err(to_py)?;
        Ok(PyRunResult {
            mode,
            rows: r.rows,
            failure: r.failure,
            incidents: r.incidents,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, duration={}, dt={}, seed={})",
            self.inner.name, self.inner.duration, self.inner.dt, self.inner.seed
        )
    }
}

/// Telemetry of one episode.
#[pyclass(name = "RunResult", module = "quadtune_py")]
struct PyRunResult {
    mode: Mode,
    rows: Vec<StepLog>,
    failure: Option<String>,
    incidents: [u64; 4],
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn mode(&self) -> &'static str {
        self.mode.name()
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.failure.clone()
    }

    /// Skipped tuner updates per axis (roll, pitch, yaw, alt).
    #[getter]
    fn incidents(&self) -> [u64; 4] {
        self.incidents
    }

    fn __len__(&self) -> usize {
        self.rows.len()
    }

    #[staticmethod]
    fn header() -> Vec<String> {
        telemetry::header()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = telemetry::header()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))?;
        Ok(self
            .rows
            .iter()
            .map(|r| telemetry::row_values(r)[idx])
            .collect())
    }

    /// Every column as `{name: [values]}`.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let head = telemetry::header();
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(self.rows.len()); head.len()];
        for r in &self.rows {
            for (c, v) in cols.iter_mut().zip(telemetry::row_values(r)) {
                c.push(v);
            }
        }
        let d = PyDict::new(py);
        for (name, values) in head.into_iter().zip(cols) {
            d.set_item(name, values)?;
        }
        Ok(d)
    }

    /// RMSE of setpoint minus measurement over rows `[start, end)`; degrees for attitude.
    #[pyo3(signature = (axis, start = 0, end = None))]
    fn rmse(&self, axis: &str, start: usize, end: Option<usize>) -> PyResult<f64> {
        let end = end.unwrap_or(self.rows.len());
        rmse(&self.rows, parse_axis(axis)?, start..end).map_err(to_py)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        telemetry::write_csv(&mut buf, &self.rows).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Gauss-Markov gust filter on the three attitude axes.
#[pyclass(name = "GustFilter", module = "quadtune_py")]
struct PyGust {
    inner: GustState,
}

#[pymethods]
impl PyGust {
    #[new]
    #[pyo3(signature = (tau = 0.3, rho = 0.5, q_std = 1.0, seed = 0, d0 = None))]
    fn new(tau: f64, rho: f64, q_std: f64, seed: u64, d0: Option<[f64; 3]>) -> PyResult<Self> {
        let cfg = GustConfig {
            enabled: true,
            tau,
            rho,
            q_std,
            seed: None,
        };
        let g = GustState::new(&cfg, seed).map_err(to_py)?;
        Ok(Self {
            inner: g.with_initial(d0.unwrap_or([0.0; 3])),
        })
    }

    fn step(&mut self, dt: f64) -> PyResult<[f64; 3]> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(PyValueError::new_err("dt must be positive"));
        }
        self.inner.step(dt);
        Ok(self.inner.d)
    }

    #[getter]
    fn d(&self) -> [f64; 3] {
        self.inner.d
    }

    fn stationary_variance(&self) -> f64 {
        self.inner.stationary_variance()
    }
}

/// Fully connected network with per-layer activations.
#[pyclass(name = "Mlp", module = "quadtune_py")]
struct PyMlp {
    inner: MlpNetwork,
}

#[pymethods]
impl PyMlp {
    /// `layers` is a list of `(width, activation)` with activation one of
    /// `sigmoid`, `tanh`, `linear`.
    #[new]
    #[pyo3(signature = (input_dim, layers, bound = 0.1, seed = 0))]
    fn new(
        input_dim: usize,
        layers: Vec<(usize, String)>,
        bound: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let specs = layers
            .iter()
            .map(|(w, a)| Ok(LayerSpec::new(*w, parse_activation(a)?)))
            .collect::<PyResult<Vec<_>>>()?;
        MlpNetwork::init_weights(input_dim, &specs, bound, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.forward(&x).map_err(to_py)?.0)
    }

    /// `(parameter gradient, input gradient)` of `Σ output_grad · output` at `x`.
    fn backward(&self, x: Vec<f64>, output_grad: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (_, trace) = self.inner.forward(&x).map_err(to_py)?;
        let (g, gin) = self.inner.backward(&trace, &output_grad).map_err(to_py)?;
        Ok((g.to_flat(), gin))
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params_flat()
    }

    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.inner.set_params_flat(&flat).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        MlpNetwork::from_json(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
}

fn inputs(u: [f64; 4]) -> ControlInputs {
    ControlInputs {
        thrust: u[0],
        roll: u[1],
        pitch: u[2],
        yaw: u[3],
    }
}

/// State derivative for the default vehicle. `state` is
/// `[x, y, z, roll, pitch, yaw, vx, vy, vz, p, q, r]`, `u` is `[u1, u2, u3, u4]`.
#[pyfunction]
#[pyo3(signature = (state, u, gust = [0.0; 3]))]
fn dynamics_rhs(state: [f64; 12], u: [f64; 4], gust: [f64; 3]) -> PyResult<[f64; 12]> {
    dynamics::dynamics_rhs(
        &QuadState::from_array(state, 0.0),
        &inputs(u),
        &QuadParams::default(),
        gust,
    )
    .map_err(to_py)
}

/// One RK4 step for the default vehicle.
#[pyfunction]
#[pyo3(signature = (state, u, dt, gust = [0.0; 3]))]
fn rk4_step(state: [f64; 12], u: [f64; 4], dt: f64, gust: [f64; 3]) -> PyResult<[f64; 12]> {
    let s = dynamics::step(
        &QuadState::from_array(state, 0.0),
        &inputs(u),
        &QuadParams::default(),
        gust,
        dt,
        &DivergenceLimits::default(),
    )
    .map_err(to_py)?;
    Ok(s.to_array())
}

#[pyfunction]
fn mix_motors(omega_sq: [f64; 4]) -> PyResult<[f64; 4]> {
    let u = dynamics::mix_motors(omega_sq, &QuadParams::default()).map_err(to_py)?;
    Ok([u.thrust, u.roll, u.pitch, u.yaw])
}

#[pyfunction]
fn unmix(u: [f64; 4]) -> PyResult<[f64; 4]> {
    dynamics::unmix(&inputs(u), &QuadParams::default()).map_err(to_py)
}

/// Finite-difference checks; one dict per suite and seed.
#[pyfunction]
#[pyo3(signature = (seeds = vec![0, 1, 2, 3, 4]))]
fn run_gradcheck<'py>(py: Python<'py>, seeds: Vec<u64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let results = py.detach(|| gradcheck::run_all(&seeds)).map_err(to_py)?;
    results
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("seed", r.seed)?;
            d.set_item("params", r.params)?;
            d.set_item("max_rel_err", r.max_rel_err)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

/// Ziegler-Nichols gains for one axis of the default vehicle.
#[pyfunction]
fn zn_tune<'py>(py: Python<'py>, axis: &str) -> PyResult<Bound<'py, PyDict>> {
    let r = zn::zn_tune(
        parse_axis(axis)?,
        &QuadParams::default(),
        &zn::ZnConfig::default(),
    )
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ultimate_gain", r.ultimate_gain)?;
    d.set_item("ultimate_period", r.ultimate_period)?;
    d.set_item("kp", r.gains.kp)?;
    d.set_item("ki", r.gains.ki)?;
    d.set_item("kd", r.gains.kd)?;
    Ok(d)
}

#[pymodule]
fn quadtune_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyGust>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(dynamics_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(rk4_step, m)?)?;
    m.add_function(wrap_pyfunction!(mix_motors, m)?)?;
    m.add_function(wrap_pyfunction!(unmix, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(zn_tune, m)?)?;
    m.add("SCHEMA_LINE", telemetry::SCHEMA_LINE)?;
    Ok(())
}
