//! Actor-critic gain tuner for one SISO axis.
//!
//! Three networks cooperate per axis:
//!
//! * the gain network maps `(u[k-1], u[k-2], s[k-1], s[k-2], e_p, e_i, e_d)`
//!   to three tanh outputs, scaled into dynamic PID gain increments;
//! * the actor maps `(u[k], s[k-1], s[k-2])` to a Gaussian `N(μ, σ²)` over
//!   the next measurement, sampled as `s_m = μ + σ ε`;
//! * the critic maps the same three inputs to a scalar value `v`.
//!
//! The actor loss `w1 (s_m - s)² (η + |δ|) + w2 sqrt(2πeσ²)` and the critic
//! loss `w3 δ²` are summed. Their gradients flow into the actor and critic
//! parameters directly and into the gain network through the control input,
//! `∂u/∂θ = e_p ∂K_p/∂θ + e_i ∂K_i/∂θ + e_d ∂K_d/∂θ`, with the PID errors as
//! fixed multipliers. The TD target `R + γ v[k+1]` and the `|δ|` weight are
//! held constant when differentiating.
//!
//! The actor predicts the measurement as a residual on the latest sample:
//! `μ = s[k-1] + c · out₀`, `σ = c · softplus(out₁) + σ_min`, with `c` the
//! axis output scale. Network inputs are z-scored with running statistics
//! that are frozen for the lifetime of each step's traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mlp::{
    sigmoid, Activation, AdamConfig, AdamState, ForwardTrace, LayerSpec, MlpNetwork, ParamGrads,
    DEFAULT_INIT_BOUND,
};
use crate::pid::{PidErrors, PidGains};
use crate::{Error, Result};

pub const GAIN_INPUTS: usize = 7;
pub const IDENT_INPUTS: usize = 3;

/// `sqrt(2πe)`, so that `sqrt(2πeσ²) = ENTROPY_COEFF · σ` for `σ > 0`.
pub const ENTROPY_COEFF: f64 = 4.132_731_354_122_493;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub gamma: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub eta: f64,
    /// Dynamic gain bound as a fraction of each static gain's magnitude.
    pub gain_scale_fraction: f64,
    pub hidden: [usize; 2],
    pub init_bound: f64,
    pub sigma_min: f64,
    /// Lower bound on the running standard deviation used for z-scoring.
    pub norm_floor: f64,
    /// Draw `ε ~ N(0, 1)`; when false `ε = 0`.
    pub explore: bool,
    /// Extra reward term `-tracking_weight · e²` on the next tracking error.
    pub tracking_weight: f64,
    pub adam: AdamConfig,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            r1: 1.0,
            r2: 0.1,
            r3: 0.001,
            w1: 1.0,
            w2: 0.01,
            w3: 1.0,
            eta: 0.01,
            gain_scale_fraction: 0.2,
            hidden: [16, 16],
            init_bound: DEFAULT_INIT_BOUND,
            sigma_min: 1e-3,
            norm_floor: 1e-3,
            explore: true,
            tracking_weight: 0.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.sigma_min > 0.0) || !(self.norm_floor > 0.0) {
            return Err(Error::Config(
                "sigma_min and norm_floor must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let weights = [
            self.r1,
            self.r2,
            self.r3,
            self.w1,
            self.w2,
            self.w3,
            self.gain_scale_fraction,
            self.tracking_weight,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "reward/loss weights must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-axis quantities that are not shared hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTuning {
    /// Bound on each dynamic gain.
    pub gain_scale: [f64; 3],
    /// Residual scale `c` of the actor's prediction, in measurement units.
    pub output_scale: f64,
    pub dt: f64,
}

impl AxisTuning {
    pub fn from_static(static_gains: PidGains, fraction: f64, output_scale: f64, dt: f64) -> Self {
        let g = static_gains.to_array();
        Self {
            gain_scale: [
                fraction * g[0].abs(),
                fraction * g[1].abs(),
                fraction * g[2].abs(),
            ],
            output_scale,
            dt,
        }
    }
}

/// Welford running mean/variance with a floored scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningNorm {
    count: u64,
    mean: f64,
    m2: f64,
    floor: f64,
}

impl RunningNorm {
    pub fn new(floor: f64) -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            floor,
        }
    }

    pub fn observe(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn snapshot(&self) -> NormSnapshot {
        let std = if self.count > 1 {
            (self.m2 / self.count as f64).sqrt()
        } else {
            0.0
        };
        NormSnapshot {
            mean: self.mean,
            scale: std.max(self.floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSnapshot {
    pub mean: f64,
    pub scale: f64,
}

impl NormSnapshot {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

/// Inputs of the gain network before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainInputs {
    pub u_prev: f64,
    pub u_prev2: f64,
    pub s_prev: f64,
    pub s_prev2: f64,
    pub errors: PidErrors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedGains {
    pub gains: PidGains,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identification {
    pub mu: f64,
    pub sigma: f64,
    pub s_m: f64,
    pub v: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub actor: f64,
    pub critic: f64,
    pub total: f64,
}

/// Everything recorded at step `k` that the update at step `k+1` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    pub gain_trace: ForwardTrace,
    pub static_gains: PidGains,
    pub gain_scale: [f64; 3],
    pub errors: PidErrors,
    /// Saturated channel output fed to the identifier.
    pub u: f64,
    pub u_limits: (f64, f64),
    pub u_clamped: bool,
    pub s_prev: f64,
    pub s_prev2: f64,
    pub u_norm: NormSnapshot,
    pub s_norm: NormSnapshot,
    pub actor_trace: ForwardTrace,
    pub critic_trace: ForwardTrace,
    pub ident: Identification,
    /// Sample from the previous step, for the `ṡ_m` reward term.
    pub s_m_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerGradients {
    pub gain: ParamGrads,
    pub actor: ParamGrads,
    pub critic: ParamGrads,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainingReport {
    pub reward: f64,
    pub td_error: f64,
    pub v_next: f64,
    pub losses: Losses,
    /// `[gain, actor, critic]`
    pub grad_norms: [f64; 3],
    /// True when a non-finite gradient or update made the step a no-op.
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TunerBundle {
    pub config: TunerConfig,
    pub axis: AxisTuning,
    gain_net: MlpNetwork,
    actor_net: MlpNetwork,
    critic_net: MlpNetwork,
    gain_adam: AdamState,
    actor_adam: AdamState,
    critic_adam: AdamState,
    u_norm: RunningNorm,
    s_norm: RunningNorm,
    e_norm: [RunningNorm; 3],
    rng: ChaCha8Rng,
    last_sample: Option<f64>,
    incidents: u64,
}

impl TunerBundle {
    pub fn new(config: &TunerConfig, axis: AxisTuning, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(axis.output_scale > 0.0 && axis.dt > 0.0) {
            return Err(Error::Config(
                "axis output_scale and dt must be positive".into(),
            ));
        }
        if axis
            .gain_scale
            .iter()
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::Config("gain scale must be finite and >= 0".into()));
        }
        let [h1, h2] = config.hidden;
        let hidden = |out, act| {
            [
                LayerSpec::new(h1, Activation::Sigmoid),
                LayerSpec::new(h2, Activation::Sigmoid),
                LayerSpec::new(out, act),
            ]
        };
        let seeds = derive_seeds::<4>(seed);
        let gain_net = MlpNetwork::init_weights(
            GAIN_INPUTS,
            &hidden(3, Activation::Tanh),
            config.init_bound,
            seeds[0],
        )?;
        let actor_net = MlpNetwork::init_weights(
            IDENT_INPUTS,
            &hidden(2, Activation::Linear),
            config.init_bound,
            seeds[1],
        )?;
        let critic_net = MlpNetwork::init_weights(
            IDENT_INPUTS,
            &hidden(1, Activation::Linear),
            config.init_bound,
            seeds[2],
        )?;
        Self::from_networks(config, axis, gain_net, actor_net, critic_net, seeds[3])
    }

    pub fn from_networks(
        config: &TunerConfig,
        axis: AxisTuning,
        gain_net: MlpNetwork,
        actor_net: MlpNetwork,
        critic_net: MlpNetwork,
        rng_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_dims("gain network", &gain_net, GAIN_INPUTS, 3)?;
        check_dims("actor network", &actor_net, IDENT_INPUTS, 2)?;
        check_dims("critic network", &critic_net, IDENT_INPUTS, 1)?;
        let floor = config.norm_floor;
        Ok(Self {
            gain_adam: AdamState::new(&gain_net, config.adam),
            actor_adam: AdamState::new(&actor_net, config.adam),
            critic_adam: AdamState::new(&critic_net, config.adam),
            config: config.clone(),
            axis,
            gain_net,
            actor_net,
            critic_net,
            u_norm: RunningNorm::new(floor),
            s_norm: RunningNorm::new(floor),
            e_norm: [RunningNorm::new(floor); 3],
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            last_sample: None,
            incidents: 0,
        })
    }

    pub fn gain_net(&self) -> &MlpNetwork {
        &self.gain_net
    }
    pub fn actor_net(&self) -> &MlpNetwork {
        &self.actor_net
    }
    pub fn critic_net(&self) -> &MlpNetwork {
        &self.critic_net
    }
    pub fn adam_states(&self) -> [&AdamState; 3] {
        [&self.gain_adam, &self.actor_adam, &self.critic_adam]
    }
    /// Number of updates skipped because of non-finite values.
    pub fn incidents(&self) -> u64 {
        self.incidents
    }

    pub fn u_norm(&self) -> NormSnapshot {
        self.u_norm.snapshot()
    }
    pub fn s_norm(&self) -> NormSnapshot {
        self.s_norm.snapshot()
    }

    /// Records a control value in the running input statistics.
    pub fn observe_control(&mut self, u: f64) {
        self.u_norm.observe(u);
    }

    /// Gains `gain_scale ⊙ tanh(f_n(...))` for the current step.
    ///
    /// Folds the newest measurement and errors into the running statistics
    /// before normalizing.
    pub fn compute_dynamic_gains(&mut self, inputs: &GainInputs) -> Result<TunedGains> {
        let e = inputs.errors.to_array();
        let raw = [
            inputs.u_prev,
            inputs.u_prev2,
            inputs.s_prev,
            inputs.s_prev2,
            e[0],
            e[1],
            e[2],
        ];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("gain network"));
        }
        self.s_norm.observe(inputs.s_prev);
        for (n, &ei) in self.e_norm.iter_mut().zip(&e) {
            n.observe(ei);
        }
        let u = self.u_norm.snapshot();
        let s = self.s_norm.snapshot();
        let x = [
            u.apply(inputs.u_prev),
            u.apply(inputs.u_prev2),
            s.apply(inputs.s_prev),
            s.apply(inputs.s_prev2),
            self.e_norm[0].snapshot().apply(e[0]),
            self.e_norm[1].snapshot().apply(e[1]),
            self.e_norm[2].snapshot().apply(e[2]),
        ];
        let (out, trace) = self.gain_net.forward(&x)?;
        let g = &self.axis.gain_scale;
        Ok(TunedGains {
            gains: PidGains::new(g[0] * out[0], g[1] * out[1], g[2] * out[2]),
            trace,
        })
    }

    fn ident_input(
        u_norm: &NormSnapshot,
        s_norm: &NormSnapshot,
        u: f64,
        s1: f64,
        s2: f64,
    ) -> [f64; 3] {
        [u_norm.apply(u), s_norm.apply(s1), s_norm.apply(s2)]
    }

    /// Actor and critic forward passes with a caller-supplied `ε`.
    pub fn identify_with_noise(
        &self,
        u: f64,
        s_prev: f64,
        s_prev2: f64,
        eps: f64,
    ) -> Result<(Identification, ForwardTrace, ForwardTrace)> {
        self.identify_frozen(
            &self.u_norm.snapshot(),
            &self.s_norm.snapshot(),
            u,
            s_prev,
            s_prev2,
            eps,
        )
    }

    fn identify_frozen(
        &self,
        u_norm: &NormSnapshot,
        s_norm: &NormSnapshot,
        u: f64,
        s_prev: f64,
        s_prev2: f64,
        eps: f64,
    ) -> Result<(Identification, ForwardTrace, ForwardTrace)> {
        if ![u, s_prev, s_prev2, eps].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput("identifier"));
        }
        let x = Self::ident_input(u_norm, s_norm, u, s_prev, s_prev2);
        let (a, actor_trace) = self.actor_net.forward(&x)?;
        let (c, critic_trace) = self.critic_net.forward(&x)?;
        let scale = self.axis.output_scale;
        let mu = s_prev + scale * a[0];
        let sigma = scale * softplus(a[1]) + self.config.sigma_min;
        let ident = Identification {
            mu,
            sigma,
            s_m: mu + sigma * eps,
            v: c[0],
            eps,
        };
        if !(ident.s_m.is_finite() && ident.v.is_finite()) {
            return Err(Error::NonFinite {
                what: "identifier output",
                layer: 0,
            });
        }
        Ok((ident, actor_trace, critic_trace))
    }

    /// `(μ, σ, s_m, v)` for the applied control `u`, drawing `ε` from the
    /// bundle's generator.
    pub fn identify(&mut self, u: f64, s_prev: f64, s_prev2: f64) -> Result<Identification> {
        let eps = self.draw_noise();
        Ok(self.identify_with_noise(u, s_prev, s_prev2, eps)?.0)
    }

    fn draw_noise(&mut self) -> f64 {
        if self.config.explore {
            StandardNormal.sample(&mut self.rng)
        } else {
            0.0
        }
    }

    /// Runs the identifier for the control applied this step and packages
    /// the step context for the next update.
    #[allow(clippy::too_many_arguments)]
    pub fn record_step(
        &mut self,
        tuned: TunedGains,
        static_gains: PidGains,
        errors: PidErrors,
        u: crate::pid::ControlOutput,
        u_limits: (f64, f64),
        s_prev: f64,
        s_prev2: f64,
    ) -> Result<StepContext> {
        self.u_norm.observe(u.saturated);
        let u_norm = self.u_norm.snapshot();
        let s_norm = self.s_norm.snapshot();
        let eps = self.draw_noise();
        let (ident, actor_trace, critic_trace) =
            self.identify_frozen(&u_norm, &s_norm, u.saturated, s_prev, s_prev2, eps)?;
        let s_m_prev = self.last_sample.replace(ident.s_m);
        Ok(StepContext {
            gain_trace: tuned.trace,
            static_gains,
            gain_scale: self.axis.gain_scale,
            errors,
            u: u.saturated,
            u_limits,
            u_clamped: u.is_clamped(),
            s_prev,
            s_prev2,
            u_norm,
            s_norm,
            actor_trace,
            critic_trace,
            ident,
            s_m_prev,
        })
    }

    /// `R = -r1 (s_m - s)² - r2 (ṡ_m - ṡ)² - r3 u²`
    pub fn reward(&self, s_m: f64, s: f64, s_m_dot: f64, s_dot: f64, u: f64) -> f64 {
        let c = &self.config;
        -c.r1 * (s_m - s).powi(2) - c.r2 * (s_m_dot - s_dot).powi(2) - c.r3 * u * u
    }

    pub fn td_error(&self, reward_next: f64, v: f64, v_next: f64) -> f64 {
        td_error(self.config.gamma, reward_next, v, v_next)
    }

    pub fn losses(&self, s_m: f64, s: f64, sigma: f64, td: f64) -> Losses {
        let c = &self.config;
        let actor = c.w1 * (s_m - s).powi(2) * (c.eta + td.abs())
            + c.w2 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).sqrt();
        let critic = c.w3 * td * td;
        Losses {
            actor,
            critic,
            total: actor + critic,
        }
    }

    /// Reward, TD error and losses for `ctx` once `s_next` is observed.
    /// `next_error` feeds the optional tracking term of the reward.
    pub fn evaluate(
        &self,
        ctx: &StepContext,
        s_next: f64,
        next_error: f64,
    ) -> Result<TrainingReport> {
        if !(s_next.is_finite() && next_error.is_finite()) {
            return Err(Error::NonFiniteInput("tuner update"));
        }
        let dt = self.axis.dt;
        let x_next = Self::ident_input(
            &self.u_norm.snapshot(),
            &self.s_norm.snapshot(),
            ctx.u,
            s_next,
            ctx.s_prev,
        );
        let v_next = self.critic_net.forward(&x_next)?.0[0];
        let id = &ctx.ident;
        let s_m_dot = (id.s_m - ctx.s_m_prev.unwrap_or(ctx.s_prev)) / dt;
        let s_dot = (s_next - ctx.s_prev) / dt;
        let reward = self.reward(id.s_m, s_next, s_m_dot, s_dot, ctx.u)
            - self.config.tracking_weight * next_error * next_error;
        let td = self.td_error(reward, id.v, v_next);
        Ok(TrainingReport {
            reward,
            td_error: td,
            v_next,
            losses: self.losses(id.s_m, s_next, id.sigma, td),
            grad_norms: [0.0; 3],
            skipped: false,
        })
    }

    /// Gradients of the total loss for every parameter of the three networks.
    pub fn gradients(&self, ctx: &StepContext, s_next: f64, td: f64) -> Result<TunerGradients> {
        let c = &self.config;
        let id = &ctx.ident;
        let scale = self.axis.output_scale;

        let d_sm = 2.0 * c.w1 * (id.s_m - s_next) * (c.eta + td.abs());
        let d_sigma = c.w2 * ENTROPY_COEFF + d_sm * id.eps;
        let sigma_pre = ctx.actor_trace.output()[1];
        let actor_out_grad = [d_sm * scale, d_sigma * scale * sigmoid(sigma_pre)];
        // Semi-gradient: the target R + γ v[k+1] is a constant.
        let d_v = -2.0 * c.w3 * td;

        let (actor, actor_in) = self.actor_net.backward(&ctx.actor_trace, &actor_out_grad)?;
        let (critic, critic_in) = self.critic_net.backward(&ctx.critic_trace, &[d_v])?;

        let d_u = if ctx.u_clamped {
            0.0
        } else {
            (actor_in[0] + critic_in[0]) / ctx.u_norm.scale
        };
        let e = ctx.errors.to_array();
        let gain_out_grad: Vec<f64> = (0..3).map(|n| d_u * e[n] * ctx.gain_scale[n]).collect();
        let (gain, _) = self.gain_net.backward(&ctx.gain_trace, &gain_out_grad)?;

        Ok(TunerGradients {
            gain,
            actor,
            critic,
        })
    }

    /// The objective [`Self::gradients`] differentiates: the total loss as a
    /// function of the parameters of all three networks, with the control
    /// recomputed from the gain network, and with `ε`, the TD target
    /// `R + γ v[k+1]` and the `|δ|` weight of the actor loss held fixed.
    pub fn frozen_loss(
        &self,
        ctx: &StepContext,
        s_next: f64,
        target: f64,
        td_weight: f64,
    ) -> Result<f64> {
        let (out, _) = self.gain_net.forward(&ctx.gain_trace.input)?;
        let g = &ctx.gain_scale;
        let dynamic = PidGains::new(g[0] * out[0], g[1] * out[1], g[2] * out[2]);
        let e = ctx.errors;
        let raw = ctx.static_gains.kp * e.e_p
            + ctx.static_gains.ki * e.e_i
            + ctx.static_gains.kd * e.e_d
            + (dynamic.kp * e.e_p + dynamic.ki * e.e_i + dynamic.kd * e.e_d);
        let u = raw.clamp(ctx.u_limits.0, ctx.u_limits.1);
        let (id, _, _) = self.identify_frozen(
            &ctx.u_norm,
            &ctx.s_norm,
            u,
            ctx.s_prev,
            ctx.s_prev2,
            ctx.ident.eps,
        )?;
        let c = &self.config;
        let td = target - id.v;
        Ok(c.w1 * (id.s_m - s_next).powi(2) * (c.eta + td_weight)
            + c.w2 * ENTROPY_COEFF * id.sigma
            + c.w3 * td * td)
    }

    /// One online step: evaluate the pending prediction against `s_next`,
    /// backpropagate, and apply ADAM to all three networks.
    ///
    /// A non-finite gradient or update leaves every network untouched and
    /// sets `skipped` in the report.
    pub fn update(
        &mut self,
        ctx: &StepContext,
        s_next: f64,
        next_error: f64,
    ) -> Result<TrainingReport> {
        let mut report = self.evaluate(ctx, s_next, next_error)?;
        let grads = match self.gradients(ctx, s_next, report.td_error) {
            Ok(g) => g,
            Err(Error::NonFinite { .. }) => return Ok(self.skip(report)),
            Err(e) => return Err(e),
        };
        report.grad_norms = [grads.gain.norm(), grads.actor.norm(), grads.critic.norm()];
        if !(grads.gain.is_finite() && grads.actor.is_finite() && grads.critic.is_finite()) {
            return Ok(self.skip(report));
        }

        let mut gain_net = self.gain_net.clone();
        let mut actor_net = self.actor_net.clone();
        let mut critic_net = self.critic_net.clone();
        let mut gain_adam = self.gain_adam.clone();
        let mut actor_adam = self.actor_adam.clone();
        let mut critic_adam = self.critic_adam.clone();
        let applied = gain_adam
            .step(&mut gain_net, &grads.gain)
            .and_then(|_| actor_adam.step(&mut actor_net, &grads.actor))
            .and_then(|_| critic_adam.step(&mut critic_net, &grads.critic));
        match applied {
            Ok(()) => {
                self.gain_net = gain_net;
                self.actor_net = actor_net;
                self.critic_net = critic_net;
                self.gain_adam = gain_adam;
                self.actor_adam = actor_adam;
                self.critic_adam = critic_adam;
                Ok(report)
            }
            Err(Error::NonFinite { .. }) => Ok(self.skip(report)),
            Err(e) => Err(e),
        }
    }

    fn skip(&mut self, mut report: TrainingReport) -> TrainingReport {
        self.incidents += 1;
        report.skipped = true;
        report
    }

    /// `{"gain_net": ..., "actor_net": ..., "critic_net": ...}` using the
    /// network snapshot layout.
    pub fn snapshot_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "gain_net": serde_json::to_value(&self.gain_net)?,
            "actor_net": serde_json::to_value(&self.actor_net)?,
            "critic_net": serde_json::to_value(&self.critic_net)?,
        });
        Ok(serde_json::to_string(&v)?)
    }

    /// Overwrites network parameters; used by gradient checks.
    pub fn set_networks(
        &mut self,
        gain: MlpNetwork,
        actor: MlpNetwork,
        critic: MlpNetwork,
    ) -> Result<()> {
        check_dims("gain network", &gain, GAIN_INPUTS, 3)?;
        check_dims("actor network", &actor, IDENT_INPUTS, 2)?;
        check_dims("critic network", &critic, IDENT_INPUTS, 1)?;
        self.gain_net = gain;
        self.actor_net = actor;
        self.critic_net = critic;
        Ok(())
    }
}

pub fn td_error(gamma: f64, reward_next: f64, v: f64, v_next: f64) -> f64 {
    reward_next + gamma * v_next - v
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn check_dims(name: &str, net: &MlpNetwork, inputs: usize, outputs: usize) -> Result<()> {
    if net.input_dim() != inputs || net.output_dim() != outputs {
        return Err(Error::Config(format!(
            "{name} must map {inputs} inputs to {outputs} outputs, got {} -> {}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

/// SplitMix64 expansion of one seed into independent stream seeds.
pub fn derive_seeds<const N: usize>(seed: u64) -> [u64; N] {
    let mut state = seed;
    std::array::from_fn(|_| {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Layer;
    use crate::pid::ControlOutput;

    fn axis() -> AxisTuning {
        AxisTuning {
            gain_scale: [0.2, 0.05, 0.02],
            output_scale: 0.01,
            dt: 0.01,
        }
    }

    fn bundle(config: &TunerConfig) -> TunerBundle {
        TunerBundle::new(config, axis(), 17).unwrap()
    }

    fn inputs() -> GainInputs {
        GainInputs {
            u_prev: 0.1,
            u_prev2: 0.05,
            s_prev: 0.02,
            s_prev2: 0.01,
            errors: PidErrors {
                e_p: -0.02,
                e_i: 0.003,
                e_d: -1.0,
            },
        }
    }

    fn zero_net(i: usize, h: usize, o: usize, out: Activation) -> MlpNetwork {
        MlpNetwork::new(vec![
            Layer::zeros(i, h, Activation::Sigmoid),
            Layer::zeros(h, h, Activation::Sigmoid),
            Layer::zeros(h, o, out),
        ])
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_gains() {
        let cfg = TunerConfig::default();
        let mut b = TunerBundle::from_networks(
            &cfg,
            axis(),
            zero_net(7, 16, 3, Activation::Tanh),
            zero_net(3, 16, 2, Activation::Linear),
            zero_net(3, 16, 1, Activation::Linear),
            0,
        )
        .unwrap();
        let g = b.compute_dynamic_gains(&inputs()).unwrap().gains;
        assert_eq!(g.to_array(), [0.0; 3]);
    }

    #[test]
    fn gains_bounded_and_deterministic() {
        let cfg = TunerConfig {
            init_bound: 3.0,
            ..TunerConfig::default()
        };
        let mut a = bundle(&cfg);
        let mut b = bundle(&cfg);
        for k in 0..100 {
            let mut inp = inputs();
            inp.u_prev = (k as f64).sin() * 50.0;
            inp.errors.e_d = (k as f64 * 0.3).cos() * 100.0;
            let ga = a.compute_dynamic_gains(&inp).unwrap().gains.to_array();
            let gb = b.compute_dynamic_gains(&inp).unwrap().gains.to_array();
            assert_eq!(ga, gb);
            for (g, bound) in ga.iter().zip(axis().gain_scale) {
                assert!(g.abs() <= bound);
            }
        }
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let b = bundle(&TunerConfig::default());
        let (id, _, _) = b.identify_with_noise(0.3, 0.1, 0.09, 0.0).unwrap();
        assert_eq!(id.s_m, id.mu);
        assert!(id.sigma > 0.0);
    }

    #[test]
    fn identification_nets_are_deterministic() {
        let mut b = bundle(&TunerConfig::default());
        let x = b.identify(0.3, 0.1, 0.09).unwrap();
        let y = b.identify(0.3, 0.1, 0.09).unwrap();
        assert_eq!((x.mu, x.sigma, x.v), (y.mu, y.sigma, y.v));
        assert_ne!(x.s_m, y.s_m);
    }

    #[test]
    fn sample_mean_matches_mu() {
        let mut b = bundle(&TunerConfig::default());
        let n = 100_000;
        let mut sum = 0.0;
        let mut first = None;
        for _ in 0..n {
            let id = b.identify(0.3, 0.1, 0.09).unwrap();
            first.get_or_insert(id);
            sum += id.s_m;
        }
        let id = first.unwrap();
        let mean = sum / n as f64;
        assert!((mean - id.mu).abs() < 3.0 * id.sigma / (n as f64).sqrt());
    }

    #[test]
    fn reward_cases() {
        let cfg = TunerConfig {
            r1: 1.0,
            r2: 0.0,
            r3: 0.0,
            ..TunerConfig::default()
        };
        let b = bundle(&cfg);
        assert_eq!(b.reward(1.0, 1.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(b.reward(3.0, 1.0, 0.0, 0.0, 0.0), -4.0);
        let d = bundle(&TunerConfig::default());
        let mut prev = 0.0;
        for k in 1..20 {
            let r = d.reward(1.0 + k as f64 * 0.1, 1.0, 0.3, 0.2, 0.5);
            assert!(r < prev && r <= 0.0);
            prev = r;
        }
    }

    #[test]
    fn td_cases() {
        assert_eq!(td_error(1.0, 0.0, 2.0, 2.0), 0.0);
        assert_eq!(td_error(0.0, -1.5, 0.7, 99.0), -1.5 - 0.7);
        assert!((td_error(0.9, -1.0, 0.0, 1.0) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn loss_cases() {
        let cfg = TunerConfig::default();
        let b = bundle(&cfg);
        let l = b.losses(0.5, 0.5, 0.2, 0.0);
        assert!((l.actor - cfg.w2 * ENTROPY_COEFF * 0.2).abs() < 1e-15);
        assert_eq!(l.critic, 0.0);

        let cfg2 = TunerConfig {
            w1: 1.0,
            w2: 0.0,
            eta: 0.01,
            ..TunerConfig::default()
        };
        let l = bundle(&cfg2).losses(1.0, 0.0, 0.3, 0.0);
        assert!((l.actor - 0.01).abs() < 1e-15);

        let l1 = b.losses(0.0, 0.0, 0.1, 0.3).critic;
        let l2 = b.losses(0.0, 0.0, 0.1, 0.6).critic;
        assert!((l2 - 4.0 * l1).abs() < 1e-15);
        assert!(
            (ENTROPY_COEFF - (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt()).abs()
                < 1e-14
        );
    }

    fn context(b: &mut TunerBundle) -> StepContext {
        let inp = inputs();
        b.observe_control(inp.u_prev2);
        b.observe_control(inp.u_prev);
        let tuned = b.compute_dynamic_gains(&inp).unwrap();
        let u = ControlOutput {
            raw: 0.12,
            saturated: 0.12,
        };
        b.record_step(
            tuned,
            PidGains::new(1.0, 0.25, 0.1),
            inp.errors,
            u,
            (-1.0, 1.0),
            0.02,
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn zero_loss_weights_freeze_everything() {
        let cfg = TunerConfig {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            ..TunerConfig::default()
        };
        let mut b = bundle(&cfg);
        let ctx = context(&mut b);
        let before = (
            b.gain_net().clone(),
            b.actor_net().clone(),
            b.critic_net().clone(),
        );
        let rep = b.update(&ctx, 0.021, 0.0).unwrap();
        assert!(!rep.skipped);
        assert_eq!(rep.grad_norms, [0.0; 3]);
        assert_eq!(&before.0, b.gain_net());
        assert_eq!(&before.1, b.actor_net());
        assert_eq!(&before.2, b.critic_net());
    }

    #[test]
    fn without_actor_terms_only_critic_path_moves() {
        let cfg = TunerConfig {
            w1: 0.0,
            w2: 0.0,
            ..TunerConfig::default()
        };
        let mut b = bundle(&cfg);
        let ctx = context(&mut b);
        let rep = b.evaluate(&ctx, 0.021, 0.0).unwrap();
        let g = b.gradients(&ctx, 0.021, rep.td_error).unwrap();
        assert_eq!(g.actor.norm(), 0.0);
        assert!(g.critic.norm() > 0.0);
        assert!(g.gain.norm() > 0.0);
    }

    #[test]
    fn clamped_control_blocks_gain_gradient() {
        let mut b = bundle(&TunerConfig::default());
        let mut ctx = context(&mut b);
        ctx.u_clamped = true;
        let rep = b.evaluate(&ctx, 0.021, 0.0).unwrap();
        let g = b.gradients(&ctx, 0.021, rep.td_error).unwrap();
        assert_eq!(g.gain.norm(), 0.0);
    }

    #[test]
    fn gradient_shapes_exclude_errors() {
        let mut b = bundle(&TunerConfig::default());
        let ctx = context(&mut b);
        let g = b.gradients(&ctx, 0.021, 0.1).unwrap();
        assert_eq!(g.gain.len(), b.gain_net().param_count());
        assert_eq!(g.actor.len(), b.actor_net().param_count());
        assert_eq!(g.critic.len(), b.critic_net().param_count());
    }

    #[test]
    fn non_finite_update_is_skipped() {
        let mut b = bundle(&TunerConfig::default());
        let mut ctx = context(&mut b);
        ctx.ident.eps = f64::INFINITY;
        let before = b.actor_net().clone();
        let rep = b.update(&ctx, 0.021, 0.0).unwrap();
        assert!(rep.skipped);
        assert_eq!(b.incidents(), 1);
        assert_eq!(&before, b.actor_net());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        for cfg in [
            TunerConfig {
                gamma: 1.0,
                ..TunerConfig::default()
            },
            TunerConfig {
                eta: 0.0,
                ..TunerConfig::default()
            },
        ] {
            assert!(TunerBundle::new(&cfg, axis(), 0).is_err());
        }
    }

    #[test]
    fn snapshot_contains_all_networks() {
        let b = bundle(&TunerConfig::default());
        let s = b.snapshot_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["gain_net", "actor_net", "critic_net"] {
            let net = MlpNetwork::from_json(&v[key].to_string()).unwrap();
            assert_eq!(net.layers().len(), 3);
        }
    }
}
