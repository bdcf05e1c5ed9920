//! Dense multilayer perceptrons with manual reverse-mode differentiation.
//!
//! Weights are stored row-major (`out_dim x in_dim`) per layer. Hidden
//! layers apply an elementwise activation; the output layer is linear.
//!
//! Besides the usual forward/backward pair, scalar-output networks support
//! a forward-over-reverse pass ([`Mlp::directional_grad_backward`]) that
//! differentiates the directional derivative `grad_x(B) . v` with respect
//! to parameters and input. Barrier-rate losses need this: their value
//! contains the input gradient of the barrier network, so their parameter
//! gradient contains Hessian-vector products.

use crate::error::{Error, Result};
use crate::math::dot;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Elementwise activation for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative as a function of the pre-activation.
    #[inline]
    fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative as a function of the pre-activation.
    #[inline]
    fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

/// Dense feedforward network. The last affine layer has no activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    /// `[input_dim, hidden..., output_dim]`
    pub layer_dims: Vec<usize>,
    /// Row-major `out x in` weight matrix per affine layer.
    pub weights: Vec<Vec<f64>>,
    /// Bias vector per affine layer.
    pub biases: Vec<Vec<f64>>,
    /// Activation applied after each non-final affine layer.
    pub activation: Activation,
}

/// Per-layer intermediate values from a cached forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Activations entering each affine layer; `acts[0]` is the input,
    /// `acts[L]` is the network output.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activation values of each affine layer.
    pub pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

/// Parameter gradients, shape-congruent with the owning [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        MlpGrads {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl Mlp {
    /// Random initialization: weights ~ N(0, 1/fan_in), zero biases.
    pub fn init<R: Rng>(layer_dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (n_in, n_out) = (layer_dims[l], layer_dims[l + 1]);
            let std = (1.0 / n_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            weights.push((0..n_in * n_out).map(|_| dist.sample(rng)).collect());
            biases.push(vec![0.0; n_out]);
        }
        Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        }
    }

    /// All-zero parameters (useful for bias-only and degenerate-case tests).
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Self {
        assert!(layer_dims.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            weights.push(vec![0.0; layer_dims[l] * layer_dims[l + 1]]);
            biases.push(vec![0.0; layer_dims[l + 1]]);
        }
        Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "mlp expects input dim {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            a = self.affine(l, &a, l + 1 < self.n_layers());
        }
        Ok(a)
    }

    fn affine(&self, l: usize, a: &[f64], activate: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = &self.weights[l];
        let mut out = self.biases[l].clone();
        for i in 0..n_out {
            out[i] += dot(&w[i * n_in..(i + 1) * n_in], a);
            if activate {
                out[i] = self.activation.apply(out[i]);
            }
        }
        out
    }

    /// Forward pass retaining intermediates for a later backward pass.
    pub fn forward_cache(&self, x: &[f64]) -> Result<MlpCache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        let mut pre = Vec::with_capacity(self.n_layers());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let z = self.affine(l, &acts[l], false);
            let is_last = l + 1 == self.n_layers();
            let a = if is_last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(MlpCache { acts, pre })
    }

    /// Exact reverse-mode gradients of `output . upstream` with respect to
    /// all parameters and the input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> (MlpGrads, Vec<f64>) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream dim mismatch");
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l + 1 < self.n_layers() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.d1(*z);
                }
            }
            let a_in = &cache.acts[l];
            let gw = &mut grads.weights[l];
            for i in 0..n_out {
                let di = delta[i];
                grads.biases[l][i] += di;
                for j in 0..n_in {
                    gw[i * n_in + j] += di * a_in[j];
                }
            }
            // delta for the previous layer: W^T delta
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for i in 0..n_out {
                let di = delta[i];
                for j in 0..n_in {
                    prev[j] += w[i * n_in + j] * di;
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    /// Input gradient only (no parameter gradients). For a scalar-output
    /// network with `upstream = [1]` this is `grad_x B(x)`.
    pub fn input_grad(&self, cache: &MlpCache, upstream: &[f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim());
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l + 1 < self.n_layers() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.d1(*z);
                }
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for i in 0..n_out {
                let di = delta[i];
                for j in 0..n_in {
                    prev[j] += w[i * n_in + j] * di;
                }
            }
            delta = prev;
        }
        delta
    }
}

/// Result of the forward-over-reverse pass on a scalar-output network.
#[derive(Debug, Clone)]
pub struct DirectionalGrad {
    /// `B(x)`
    pub value: f64,
    /// `grad_x B(x)`
    pub input_grad: Vec<f64>,
    /// Parameter gradients of `B(x)` itself.
    pub value_param_grads: MlpGrads,
    /// `grad_x B(x) . v`
    pub jvp: f64,
    /// Parameter gradients of `grad_x B(x) . v` (contains Hessian terms).
    pub jvp_param_grads: MlpGrads,
    /// `d/dx (grad_x B(x) . v)` with `v` held fixed, i.e. `H_x B(x) v`.
    pub jvp_input_grad: Vec<f64>,
}

impl Mlp {
    /// Forward-over-reverse differentiation for scalar-output networks.
    ///
    /// Computes `phi(theta, x) = grad_x B_theta(x) . v` along with its
    /// gradients with respect to parameters and input. `v` is treated as a
    /// constant.
    pub fn directional_grad_backward(&self, x: &[f64], v: &[f64]) -> Result<DirectionalGrad> {
        if self.output_dim() != 1 {
            return Err(Error::dim(
                "directional_grad_backward requires a scalar-output network",
            ));
        }
        self.check_input(x)?;
        if v.len() != self.input_dim() {
            return Err(Error::dim("direction dim mismatch"));
        }
        let n_layers = self.n_layers();

        // Forward with tangents: a-dot carries d(a)/dt along x + t v.
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut tangents: Vec<Vec<f64>> = vec![v.to_vec()];
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre_tan: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            let mut zt = vec![0.0; n_out];
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                z[i] += dot(row, &acts[l]);
                zt[i] = dot(row, &tangents[l]);
            }
            let is_last = l + 1 == n_layers;
            let (a, at) = if is_last {
                (z.clone(), zt.clone())
            } else {
                let a: Vec<f64> = z.iter().map(|&q| self.activation.apply(q)).collect();
                let at: Vec<f64> = z
                    .iter()
                    .zip(&zt)
                    .map(|(&q, &qt)| self.activation.d1(q) * qt)
                    .collect();
                (a, at)
            };
            pre.push(z);
            pre_tan.push(zt);
            acts.push(a);
            tangents.push(at);
        }
        let value = acts[n_layers][0];
        let jvp = tangents[n_layers][0];

        // Reverse pass for phi = zt_L[0]. Sensitivities flow through both
        // the primal and tangent streams.
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = vec![0.0; 1]; // d phi / d z_L
        let mut delta_t = vec![1.0; 1]; // d phi / d zt_L
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l + 1 < n_layers {
                // Activation: a = act(z), at = act'(z) * zt.
                for i in 0..n_out {
                    let z = pre[l][i];
                    let zt = pre_tan[l][i];
                    let da = delta[i];
                    let dat = delta_t[i];
                    delta[i] = self.activation.d1(z) * da + self.activation.d2(z) * zt * dat;
                    delta_t[i] = self.activation.d1(z) * dat;
                }
            }
            let a_in = &acts[l];
            let t_in = &tangents[l];
            let gw = &mut grads.weights[l];
            for i in 0..n_out {
                let dz = delta[i];
                let dzt = delta_t[i];
                grads.biases[l][i] += dz;
                for j in 0..n_in {
                    gw[i * n_in + j] += dz * a_in[j] + dzt * t_in[j];
                }
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            let mut prev_t = vec![0.0; n_in];
            for i in 0..n_out {
                let dz = delta[i];
                let dzt = delta_t[i];
                for j in 0..n_in {
                    prev[j] += w[i * n_in + j] * dz;
                    prev_t[j] += w[i * n_in + j] * dzt;
                }
            }
            delta = prev;
            delta_t = prev_t;
        }

        // Gradients of B itself, reusing the primal intermediates.
        let cache = MlpCache { acts, pre };
        let (value_param_grads, input_grad) = self.backward(&cache, &[1.0]);

        Ok(DirectionalGrad {
            value,
            input_grad,
            value_param_grads,
            jvp,
            jvp_param_grads: grads,
            jvp_input_grad: delta,
        })
    }

    /// Copy all parameters into a flat vector (layer order, weights then
    /// bias per layer, row-major).
    pub fn params_flat_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Load parameters from a flat slice; returns the number consumed.
    pub fn set_params_flat(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.len();
            w.copy_from_slice(&src[off..off + nw]);
            off += nw;
            let nb = b.len();
            b.copy_from_slice(&src[off..off + nb]);
            off += nb;
        }
        off
    }
}
