//! Finite-difference checks of the analytic gradients, for the `gradcheck`
//! command and for tests.
//!
//! Derivatives are estimated with the sixth-order central stencil
//! `Σ_k w_k (f(θ+kh) - f(θ-kh)) / 60h`, `w = (45, -9, 1)`. An entry passes when
//! `|a - n| / max(|a|, |n|, ABS_FLOOR) < REL_TOL`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::mlp::{Activation, LayerSpec, MlpNetwork};
use crate::pid::{ControlOutput, PidErrors, PidGains};
use crate::tuner::{AxisTuning, GainInputs, StepContext, TunerBundle, TunerConfig};
use crate::Result;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;
const STEP: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub params: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Sixth-order central difference of `f` with respect to every entry of `theta`.
pub fn numeric_gradient(
    theta: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut p = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = STEP * theta[i].abs().max(1.0);
        let mut at = |d: f64, p: &mut Vec<f64>| -> Result<f64> {
            p[i] = theta[i] + d;
            let v = f(p);
            p[i] = theta[i];
            v
        };
        let mut acc = 0.0;
        for (k, w) in [(1.0, 45.0), (2.0, -9.0), (3.0, 1.0)] {
            acc += w * (at(k * h, &mut p)? - at(-k * h, &mut p)?);
        }
        g.push(acc / (60.0 * h));
    }
    Ok(g)
}

fn compare(name: &str, seed: u64, analytic: &[f64], numeric: &[f64]) -> CheckResult {
    let max_rel_err = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max);
    CheckResult {
        name: name.to_string(),
        seed,
        params: analytic.len(),
        max_rel_err,
        passed: max_rel_err < REL_TOL,
    }
}

/// Backpropagation through a mixed-activation network against finite
/// differences of `Σ cᵢ outᵢ`, for parameters and inputs.
pub fn check_mlp(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = [
        LayerSpec::new(5, Activation::Sigmoid),
        LayerSpec::new(4, Activation::Tanh),
        LayerSpec::new(3, Activation::Linear),
    ];
    let net = MlpNetwork::init_weights(4, &specs, 1.0, rng.random())?;
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |out: &[f64]| out.iter().zip(&c).map(|(o, c)| o * c).sum::<f64>();

    let (_, trace) = net.forward(&x)?;
    let (grads, input_grad) = net.backward(&trace, &c)?;

    let theta = net.params_flat();
    let numeric = numeric_gradient(&theta, |p| {
        let mut n = net.clone();
        n.set_params_flat(p)?;
        Ok(objective(&n.forward(&x)?.0))
    })?;
    let numeric_in = numeric_gradient(&x, |xi| Ok(objective(&net.forward(xi)?.0)))?;
    Ok(vec![
        compare("mlp parameters", seed, &grads.to_flat(), &numeric),
        compare("mlp inputs", seed, &input_grad, &numeric_in),
    ])
}

/// A tuner with randomized weights, warmed normalization statistics, and a
/// recorded step whose control is not saturated. Returns the bundle, the
/// step context, and the next measurement.
pub fn tuner_fixture(seed: u64) -> Result<(TunerBundle, StepContext, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let static_gains = PidGains::new(1.5, 0.4, 0.2);
    let axis = AxisTuning::from_static(static_gains, 0.2, 0.005, 0.01);
    let cfg = TunerConfig::default();
    let mut bundle = TunerBundle::new(&cfg, axis, rng.random())?;

    let hidden = |out, act| {
        [
            LayerSpec::new(16, Activation::Sigmoid),
            LayerSpec::new(16, Activation::Sigmoid),
            LayerSpec::new(out, act),
        ]
    };
    let gain = MlpNetwork::init_weights(7, &hidden(3, Activation::Tanh), 0.6, rng.random())?;
    let actor = MlpNetwork::init_weights(3, &hidden(2, Activation::Linear), 0.6, rng.random())?;
    let critic = MlpNetwork::init_weights(3, &hidden(1, Activation::Linear), 0.3, rng.random())?;
    bundle.set_networks(gain, actor, critic)?;

    let s0 = rng.random_range(-0.2..0.2);
    let mut s_hist = [s0 + rng.random_range(-0.005..0.005), s0];
    for _ in 0..20 {
        bundle.observe_control(rng.random_range(-1.0..1.0));
        let errors = PidErrors {
            e_p: rng.random_range(-0.3..0.3),
            e_i: rng.random_range(-0.1..0.1),
            e_d: rng.random_range(-1.0..1.0),
        };
        bundle.compute_dynamic_gains(&GainInputs {
            u_prev: rng.random_range(-1.0..1.0),
            u_prev2: rng.random_range(-1.0..1.0),
            s_prev: s_hist[0],
            s_prev2: s_hist[1],
            errors,
        })?;
        s_hist = [s_hist[0] + rng.random_range(-0.005..0.005), s_hist[0]];
    }

    let errors = PidErrors {
        e_p: rng.random_range(-1.0..1.0),
        e_i: rng.random_range(-0.5..0.5),
        e_d: rng.random_range(-3.0..3.0),
    };
    let tuned = bundle.compute_dynamic_gains(&GainInputs {
        u_prev: rng.random_range(-1.0..1.0),
        u_prev2: rng.random_range(-1.0..1.0),
        s_prev: s_hist[0],
        s_prev2: s_hist[1],
        errors,
    })?;
    let raw = static_gains.kp * errors.e_p
        + static_gains.ki * errors.e_i
        + static_gains.kd * errors.e_d
        + (tuned.gains.kp * errors.e_p + tuned.gains.ki * errors.e_i + tuned.gains.kd * errors.e_d);
    let limits = (-10.0, 10.0);
    let out = ControlOutput {
        raw,
        saturated: raw.clamp(limits.0, limits.1),
    };
    let ctx = bundle.record_step(
        tuned,
        static_gains,
        errors,
        out,
        limits,
        s_hist[0],
        s_hist[1],
    )?;
    let s_next = s_hist[0] + rng.random_range(-0.005..0.005);
    Ok((bundle, ctx, s_next))
}

/// Analytic tuner gradients for all three networks against finite
/// differences of [`TunerBundle::frozen_loss`].
pub fn check_tuner(seed: u64) -> Result<Vec<CheckResult>> {
    let (bundle, ctx, s_next) = tuner_fixture(seed)?;
    let report = bundle.evaluate(&ctx, s_next, 0.0)?;
    let target = report.reward + bundle.config.gamma * report.v_next;
    let td_weight = report.td_error.abs();
    let grads = bundle.gradients(&ctx, s_next, report.td_error)?;

    let nets = [
        bundle.gain_net().clone(),
        bundle.actor_net().clone(),
        bundle.critic_net().clone(),
    ];
    let analytic = [
        grads.gain.to_flat(),
        grads.actor.to_flat(),
        grads.critic.to_flat(),
    ];
    let names = [
        "tuner gain network",
        "tuner actor network",
        "tuner critic network",
    ];
    let mut results = Vec::new();
    for which in 0..3 {
        let theta = nets[which].params_flat();
        let numeric = numeric_gradient(&theta, |p| {
            let mut n = nets.clone();
            n[which].set_params_flat(p)?;
            let mut b = bundle.clone();
            let [g, a, c] = n;
            b.set_networks(g, a, c)?;
            b.frozen_loss(&ctx, s_next, target, td_weight)
        })?;
        results.push(compare(names[which], seed, &analytic[which], &numeric));
    }
    Ok(results)
}

/// Every suite over every seed.
pub fn run_all(seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &s in seeds {
        out.extend(check_mlp(s)?);
        out.extend(check_tuner(s)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], |p| Ok(p[0] * p[0] + 3.0 * p[1])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn frozen_loss_matches_reported_losses_at_the_nominal_point() {
        let (bundle, ctx, s_next) = tuner_fixture(11).unwrap();
        let r = bundle.evaluate(&ctx, s_next, 0.0).unwrap();
        let target = r.reward + bundle.config.gamma * r.v_next;
        let l = bundle
            .frozen_loss(&ctx, s_next, target, r.td_error.abs())
            .unwrap();
        assert!((l - r.losses.total).abs() <= 1e-12 * r.losses.total.abs().max(1.0));
    }

    #[test]
    fn all_suites_pass_for_one_seed() {
        for r in run_all(&[3]).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
