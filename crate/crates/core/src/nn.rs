//! Minimal dense network machinery shared by the flow velocity field and the
//! policy: an MLP with tanh hidden layers and a linear head, exact
//! backpropagation, Adam, and a finite-difference gradient checker.
//!
//! Everything is `f64` and deterministic given the seedable init.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    NanLoss { step: usize },
    #[error("training needs a nonempty dataset")]
    EmptyDataset,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// Slope `LEAKY_SLOPE` on the negative side; units cannot die.
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative in terms of the activation output (all three activations
    /// are monotone, so the output sign determines the branch).
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Fully connected network: `dims[0]` inputs, nonlinear hidden layers, linear
/// output of `dims.last()` units. Parameters are a flat vector laid out
/// layer by layer as `[weights (out x in, row-major), bias (out)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Xavier-uniform init on a caller-provided RNG.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Mlp {
        Self::init_with(dims, Activation::Tanh, rng)
    }

    pub fn init_with<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut params = Vec::with_capacity(Self::param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp {
            dims: dims.to_vec(),
            params,
            activation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// All parameters are finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Round every parameter through `f32`; checkpoints store 32-bit floats,
    /// so this makes a save/load round trip bit-exact.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut acts = self.forward_cached(input);
        acts.pop().unwrap()
    }

    /// Activations of every layer, `out[0]` being the input itself.
    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(input.len(), self.dims[0], "input dim mismatch");
        let n_layers = self.dims.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let prev = acts.last().unwrap();
            let mut z = vec![0.0; n_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut s = bias[o];
                for (wi, pi) in row.iter().zip(prev.iter()) {
                    s += wi * pi;
                }
                *zo = s;
            }
            if l + 1 < n_layers {
                for zo in &mut z {
                    *zo = self.activation.apply(*zo);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagate `d_out = dL/dy` for one sample, accumulating parameter
    /// gradients into `grad` (same layout as `params`).
    pub fn accumulate_grad(&self, input: &[f64], d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let acts = self.forward_cached(input);
        let n_layers = self.dims.len() - 1;

        // Per-layer parameter offsets.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let base = offsets[l];
            let prev = &acts[l];
            // dW[o][i] += delta[o] * prev[i]; db[o] += delta[o].
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, p) in row.iter_mut().zip(prev.iter()) {
                    *g += d * p;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // delta_prev = W^T delta, through the tanh of the previous layer.
            let weights = &self.params[base..base + n_in * n_out];
            let mut prev_delta = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (pd, wi) in prev_delta.iter_mut().zip(row.iter()) {
                    *pd += wi * d;
                }
            }
            // acts[l] is the nonlinear output of hidden layer l; chain
            // through the activation derivative.
            for (pd, a) in prev_delta.iter_mut().zip(acts[l].iter()) {
                *pd *= self.activation.derivative_from_output(*a);
            }
            delta = prev_delta;
        }
    }
}

/// Standard Adam. `lr = 0` leaves parameters bit-identical.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Cosine decay toward 5% of the base rate over `total` steps; cuts the
    /// stochastic-minibatch noise floor late in training.
    pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return base;
        }
        let frac = step as f64 / (total - 1) as f64;
        let scale = 0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        base * scale
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Loss curves from a training run; `heldout` is empty when the dataset was
/// too small to split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, loss)` samples of the training loss.
    pub train: Vec<(usize, f64)>,
    /// `(step, loss)` samples on the held-out split.
    pub heldout: Vec<(usize, f64)>,
    /// Smoothed monitored loss decreased over the run.
    pub converged: bool,
}

impl TrainReport {
    /// Convergence judgment: compare the mean of the first and last quarters
    /// of the monitored curve.
    pub fn judge(&mut self) {
        let curve: &[(usize, f64)] = if self.heldout.is_empty() {
            &self.train
        } else {
            &self.heldout
        };
        if curve.len() < 4 {
            self.converged = !curve.is_empty();
            return;
        }
        let q = curve.len() / 4;
        let head: f64 = curve[..q].iter().map(|(_, l)| l).sum::<f64>() / q as f64;
        let tail: f64 = curve[curve.len() - q..].iter().map(|(_, l)| l).sum::<f64>() / q as f64;
        self.converged = tail < head;
    }
}

/// Central finite-difference gradient of `loss` with respect to the net's
/// parameters. Test oracle; O(n_params) loss evaluations.
pub fn finite_difference_grad<F>(net: &Mlp, loss: F, h: f64) -> Vec<f64>
where
    F: Fn(&Mlp) -> f64,
{
    let mut grad = vec![0.0; net.n_params()];
    let mut probe = net.clone();
    for i in 0..net.n_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let hi = loss(&probe);
        probe.params[i] = orig - h;
        let lo = loss(&probe);
        probe.params[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Max relative error between two gradients, with an absolute floor to keep
/// near-zero entries from dominating.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
