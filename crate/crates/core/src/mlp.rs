//! Dense feed-forward networks with hand-written backpropagation and ADAM.
//!
//! Each layer computes `y = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. The backward pass returns gradients for every
//! parameter as well as the gradient with respect to the network input,
//! which the tuner needs to chain losses through the control signal.
//!
//! Snapshot layout (JSON): `{"layers": [{"in_dim", "out_dim", "activation",
//! "weights": [row-major], "biases": [...]}, ...]}` with activation tags
//! `"sigmoid"`, `"tanh"` or `"linear"`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default half-width of the uniform initialization interval.
pub const DEFAULT_INIT_BOUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(out_dim: usize, activation: Activation) -> Self {
        Self {
            out_dim,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
}

/// Intermediates cached by [`MlpNetwork::forward`] for a single backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradient (or moment) buffers with the same shape as a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    fn same_shape(&self, net: &MlpNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

impl MlpNetwork {
    /// Builds a network from explicit layers, validating the dimension chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.in_dim * layer.out_dim {
                return Err(Error::Dimension {
                    context: "layer weights",
                    expected: layer.in_dim * layer.out_dim,
                    got: layer.weights.len(),
                });
            }
            if layer.biases.len() != layer.out_dim {
                return Err(Error::Dimension {
                    context: "layer biases",
                    expected: layer.out_dim,
                    got: layer.biases.len(),
                });
            }
            if layer
                .weights
                .iter()
                .chain(&layer.biases)
                .any(|w| !w.is_finite())
            {
                return Err(Error::NonFinite {
                    what: "parameter",
                    layer: i,
                });
            }
            if i > 0 && layers[i - 1].out_dim != layer.in_dim {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected: layers[i - 1].out_dim,
                    got: layer.in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Uniform initialization in `[-bound, bound]`, deterministic in `seed`.
    pub fn init_weights(
        input_dim: usize,
        specs: &[LayerSpec],
        bound: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::Config(format!("invalid init bound {bound}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::Config(format!("init distribution: {e}")))?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut in_dim = input_dim;
        for spec in specs {
            let mut layer = Layer::zeros(in_dim, spec.out_dim, spec.activation);
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = dist.sample(&mut rng);
            }
            in_dim = spec.out_dim;
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = activations.last().map(Vec::as_slice).unwrap_or(input);
            let mut z = layer.biases.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            activations.push(y);
        }
        let output = activations.last().cloned().unwrap_or_default();
        Ok((
            output,
            ForwardTrace {
                input: input.to_vec(),
                pre_activations,
                activations,
            },
        ))
    }

    /// Returns `(dL/dθ, dL/dinput)` given `dL/doutput`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
    ) -> Result<(ParamGrads, Vec<f64>)> {
        if trace.activations.len() != self.layers.len()
            || trace.pre_activations.len() != self.layers.len()
            || trace.input.len() != self.input_dim()
        {
            return Err(Error::Dimension {
                context: "forward trace",
                expected: self.layers.len(),
                got: trace.activations.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }

        let mut grads = ParamGrads::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[li];
            if y.len() != layer.out_dim {
                return Err(Error::Dimension {
                    context: "forward trace layer",
                    expected: layer.out_dim,
                    got: y.len(),
                });
            }
            let x = if li == 0 {
                &trace.input
            } else {
                &trace.activations[li - 1]
            };
            let delta: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, &yo)| g * layer.activation.derivative_from_output(yo))
                .collect();

            let lg = &mut grads.layers[li];
            let mut downstream = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                lg.biases[o] = d;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    lg.weights[row + i] = d * x[i];
                    downstream[i] += layer.weights[row + i] * d;
                }
            }
            upstream = downstream;
        }
        Ok((grads, upstream))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MlpNetwork = serde_json::from_str(s)?;
        Self::new(raw.layers)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter ADAM moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &MlpNetwork, config: AdamConfig) -> Self {
        Self {
            config,
            m: ParamGrads::zeros_like(net),
            v: ParamGrads::zeros_like(net),
            t: 0,
        }
    }

    /// One bias-corrected ADAM update, `θ -= α m̂ / sqrt(v̂ + ε)`.
    ///
    /// Nothing is written back unless every updated parameter is finite.
    pub fn step(&mut self, net: &mut MlpNetwork, grads: &ParamGrads) -> Result<()> {
        if !grads.same_shape(net) || !self.m.same_shape(net) {
            return Err(Error::Dimension {
                context: "adam gradient shape",
                expected: net.param_count(),
                got: grads.len(),
            });
        }
        if let Some(layer) = grads
            .layers
            .iter()
            .position(|l| l.weights.iter().chain(&l.biases).any(|g| !g.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "gradient",
                layer,
            });
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.t + 1;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);

        let mut new_m = self.m.clone();
        let mut new_v = self.v.clone();
        let mut new_layers: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(grads.layers.len());
        for (li, layer) in net.layers.iter().enumerate() {
            let g = &grads.layers[li];
            let m = &mut new_m.layers[li];
            let v = &mut new_v.layers[li];
            let update = |theta: &[f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                theta
                    .iter()
                    .zip(g)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((&th, &gi), (mi, vi))| {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        th - learning_rate * m_hat / (v_hat + epsilon).sqrt()
                    })
                    .collect::<Vec<f64>>()
            };
            let w = update(&layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            let b = update(&layer.biases, &g.biases, &mut m.biases, &mut v.biases);
            if w.iter().chain(&b).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter after adam update",
                    layer: li,
                });
            }
            new_layers.push((w, b));
        }

        for (layer, (w, b)) in net.layers_mut().iter_mut().zip(new_layers) {
            layer.weights = w;
            layer.biases = b;
        }
        self.m = new_m;
        self.v = new_v;
        self.t = t;
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(net: &mut MlpNetwork, state: &mut AdamState, grads: &ParamGrads) -> Result<()> {
    state.step(net, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer(seed: u64) -> MlpNetwork {
        MlpNetwork::init_weights(
            3,
            &[
                LayerSpec::new(4, Activation::Sigmoid),
                LayerSpec::new(2, Activation::Tanh),
            ],
            0.8,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn identity_linear_layer() {
        let layer = Layer {
            in_dim: 2,
            out_dim: 2,
            activation: Activation::Linear,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            biases: vec![0.0, 0.0],
        };
        let net = MlpNetwork::new(vec![layer]).unwrap();
        let (y, _) = net.forward(&[0.3, -0.3]).unwrap();
        assert_eq!(y, vec![0.3, -0.3]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = MlpNetwork::new(vec![Layer::zeros(3, 4, Activation::Sigmoid)]).unwrap();
        let (y, _) = net.forward(&[10.0, -3.0, 0.7]).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_rejects_wrong_input_len() {
        let net = two_layer(1);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn new_rejects_broken_chain() {
        let layers = vec![
            Layer::zeros(3, 4, Activation::Sigmoid),
            Layer::zeros(5, 1, Activation::Linear),
        ];
        assert!(matches!(
            MlpNetwork::new(layers),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let net = two_layer(3);
        let (_, trace) = net.forward(&[0.1, -0.4, 0.9]).unwrap();
        let (g, ig) = net.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_input_grad_is_transpose_product() {
        let layer = Layer {
            in_dim: 3,
            out_dim: 2,
            activation: Activation::Linear,
            weights: vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0],
            biases: vec![0.1, 0.2],
        };
        let net = MlpNetwork::new(vec![layer]).unwrap();
        let (_, trace) = net.forward(&[0.2, 0.3, 0.4]).unwrap();
        let (_, ig) = net.backward(&trace, &[2.0, -1.0]).unwrap();
        assert_eq!(ig, vec![2.0 + 1.0, 4.0 - 0.5, 6.0 - 4.0]);
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let net = two_layer(3);
        let other = MlpNetwork::new(vec![Layer::zeros(3, 2, Activation::Linear)]).unwrap();
        let (_, trace) = other.forward(&[0.0; 3]).unwrap();
        assert!(net.backward(&trace, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = two_layer(42);
        let b = two_layer(42);
        let c = two_layer(43);
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());

        let net = MlpNetwork::init_weights(
            7,
            &[
                LayerSpec::new(16, Activation::Sigmoid),
                LayerSpec::new(3, Activation::Tanh),
            ],
            DEFAULT_INIT_BOUND,
            9,
        )
        .unwrap();
        assert!(net.params_flat().iter().all(|p| p.abs() <= 0.1));
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut net = two_layer(5);
        let before = net.params_flat();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let zero = ParamGrads::zeros_like(&net);
        for _ in 0..3 {
            state.step(&mut net, &zero).unwrap();
        }
        assert_eq!(net.params_flat(), before);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn adam_single_scalar_step() {
        let layer = Layer {
            in_dim: 1,
            out_dim: 1,
            activation: Activation::Linear,
            weights: vec![0.0],
            biases: vec![0.0],
        };
        let mut net = MlpNetwork::new(vec![layer]).unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = 1.0;
        state.step(&mut net, &g).unwrap();
        // m̂ = v̂ = 1 after bias correction.
        let expected = -0.001 / (1.0f64 + 1e-8).sqrt();
        assert!((net.layers()[0].weights[0] - expected).abs() < 1e-15);
        assert_eq!(net.layers()[0].biases[0], 0.0);
    }

    #[test]
    fn adam_constant_gradient_decreases_monotonically() {
        let layer = Layer::zeros(1, 1, Activation::Linear);
        let mut net = MlpNetwork::new(vec![layer]).unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = 1.0;
        let mut prev = 0.0;
        for _ in 0..1000 {
            state.step(&mut net, &g).unwrap();
            let w = net.layers()[0].weights[0];
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn adam_rejects_non_finite_and_leaves_net_untouched() {
        let mut net = two_layer(5);
        let before = net.clone();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = ParamGrads::zeros_like(&net);
        g.layers[1].biases[0] = f64::NAN;
        let err = state.step(&mut net, &g).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 1, .. }));
        assert_eq!(net, before);
        assert_eq!(state.t, 0);

        let mut g = ParamGrads::zeros_like(&net);
        g.layers[0].weights[0] = 1.0;
        state.config.learning_rate = f64::INFINITY;
        let err = state.step(&mut net, &g).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0, .. }));
        assert_eq!(net, before);
    }

    #[test]
    fn json_snapshot_round_trip() {
        let net = two_layer(11);
        let s = net.to_json().unwrap();
        assert!(s.contains("\"sigmoid\""));
        let back = MlpNetwork::from_json(&s).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn activation_ranges() {
        let net = two_layer(2);
        for k in 0..50 {
            let x = [k as f64 - 25.0, 3.0 * (k as f64).sin(), 5.0];
            let (_, trace) = net.forward(&x).unwrap();
            assert!(trace.activations[0].iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(trace.activations[1].iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}
