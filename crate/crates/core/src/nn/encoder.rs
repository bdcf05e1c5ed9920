//! Recurrent latent-state encoder over fused multi-view features.
//!
//! The latent state is produced step by step as
//! `x_t = tanh(core(fused_t, x_{t-1}, u_{t-1}))`, starting from a zero
//! state and a zero previous control. The elementwise squash keeps the
//! recurrence bounded over long trajectories. Training treats the
//! previous state as a fixed input at each step (one-step truncation), so
//! per-step gradients flow through the aggregator and the core network
//! only.

use crate::error::{Error, Result};
use crate::nn::attention::{AttentionAggregator, AttentionCache};
use crate::nn::mlp::{Mlp, MlpCache, MlpGrads};
use serde::{Deserialize, Serialize};

pub const CONTROL_DIM: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEncoder {
    pub aggregator: AttentionAggregator,
    /// Maps `(fused_dim + state_dim + control_dim) -> state_dim`.
    pub core: Mlp,
    pub state_dim: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub attention: AttentionCache,
    pub core: MlpCache,
    /// `tanh` of the core output.
    pub state: Vec<f64>,
}

impl EncoderCache {
    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

/// Gradients for every trainable encoder parameter.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub score: MlpGrads,
    pub core: MlpGrads,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &StateEncoder) -> Self {
        EncoderGrads {
            score: MlpGrads::zeros_like(&enc.aggregator.score_net),
            core: MlpGrads::zeros_like(&enc.core),
        }
    }

    pub fn add_scaled(&mut self, other: &EncoderGrads, scale: f64) {
        self.score.add_scaled(&other.score, scale);
        self.core.add_scaled(&other.core, scale);
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.score.flatten_into(out);
        self.core.flatten_into(out);
    }
}

impl StateEncoder {
    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim]
    }

    pub fn fused_dim(&self) -> usize {
        self.aggregator.fused_dim()
    }

    /// One encoding step.
    pub fn encode(
        &self,
        views: &[Vec<f64>],
        prev_state: &[f64],
        prev_control: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self
            .encode_cache(views, prev_state, prev_control)?
            .state()
            .to_vec())
    }

    pub fn encode_cache(
        &self,
        views: &[Vec<f64>],
        prev_state: &[f64],
        prev_control: &[f64],
    ) -> Result<EncoderCache> {
        if prev_state.len() != self.state_dim {
            return Err(Error::dim(format!(
                "prev state dim {} != {}",
                prev_state.len(),
                self.state_dim
            )));
        }
        if prev_control.len() != CONTROL_DIM {
            return Err(Error::dim("control must be 2-dimensional"));
        }
        let attention = self.aggregator.aggregate_cache(views)?;
        let mut input = Vec::with_capacity(attention.fused.len() + self.state_dim + CONTROL_DIM);
        input.extend_from_slice(&attention.fused);
        input.extend_from_slice(prev_state);
        input.extend_from_slice(prev_control);
        let core = self.core.forward_cache(&input)?;
        let state = core.output().iter().map(|z| z.tanh()).collect();
        Ok(EncoderCache {
            attention,
            core,
            state,
        })
    }

    /// Encode a whole trajectory of per-frame views and logged controls.
    /// Step t consumes the frame-t views together with the state and
    /// control of step t-1 (zeros at t = 0).
    pub fn encode_trajectory(
        &self,
        frames_views: &[Vec<Vec<f64>>],
        controls: &[[f64; 2]],
    ) -> Result<Vec<Vec<f64>>> {
        let mut states = Vec::with_capacity(frames_views.len());
        let mut prev_state = self.initial_state();
        let mut prev_control = [0.0; 2];
        for (t, views) in frames_views.iter().enumerate() {
            let x = self.encode(views, &prev_state, &prev_control)?;
            prev_state = x.clone();
            if t < controls.len() {
                prev_control = controls[t];
            }
            states.push(x);
        }
        Ok(states)
    }

    /// Gradients of `state . upstream` with respect to all encoder
    /// parameters. The previous state and control are inputs, not
    /// parameters; their gradients are discarded.
    pub fn backward(&self, cache: &EncoderCache, upstream: &[f64]) -> EncoderGrads {
        // Through the output squash: d tanh(z) = 1 - tanh(z)^2.
        let squashed: Vec<f64> = upstream
            .iter()
            .zip(&cache.state)
            .map(|(u, s)| u * (1.0 - s * s))
            .collect();
        let (core_grads, core_input_grad) = self.core.backward(&cache.core, &squashed);
        let fused_dim = cache.attention.fused.len();
        let score_grads = self
            .aggregator
            .backward(&cache.attention, &core_input_grad[..fused_dim]);
        EncoderGrads {
            score: score_grads,
            core: core_grads,
        }
    }

    pub fn param_count(&self) -> usize {
        self.aggregator.score_net.param_count() + self.core.param_count()
    }

    pub fn params_flat_into(&self, out: &mut Vec<f64>) {
        self.aggregator.score_net.params_flat_into(out);
        self.core.params_flat_into(out);
    }

    pub fn set_params_flat(&mut self, src: &[f64]) -> usize {
        let n = self.aggregator.score_net.set_params_flat(src);
        n + self.core.set_params_flat(&src[n..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dot;
    use crate::nn::attention::PosEncoding;
    use crate::nn::mlp::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn test_encoder(seed: u64) -> StateEncoder {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (feat, posd, state) = (5, 4, 6);
        StateEncoder {
            aggregator: AttentionAggregator {
                score_net: Mlp::init(&[feat + posd, 12, 1], Activation::Tanh, &mut rng),
                temperature: 1.0,
                pos: PosEncoding::sinusoidal(3, posd),
            },
            core: Mlp::init(&[feat + posd + state + CONTROL_DIM, 16, state], Activation::Tanh, &mut rng),
            state_dim: state,
        }
    }

    fn random_views(rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
        (0..3)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn initial_step_uses_zero_state_and_control() {
        let enc = test_encoder(1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let views = random_views(&mut rng);
        let by_hand = enc
            .encode(&views, &vec![0.0; 6], &[0.0, 0.0])
            .unwrap();
        let via_traj = enc
            .encode_trajectory(&[views], &[[3.0, -1.0]])
            .unwrap();
        assert_eq!(via_traj[0], by_hand);
    }

    #[test]
    fn prev_control_affects_output() {
        let enc = test_encoder(3);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let views = random_views(&mut rng);
        let state = vec![0.1; 6];
        let a = enc.encode(&views, &state, &[0.0, 0.0]).unwrap();
        let b = enc.encode(&views, &state, &[1.0, -0.5]).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "control input had no effect");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut enc = test_encoder(5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let views = random_views(&mut rng);
        let prev_state: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let prev_control = [0.3, -0.7];
        let upstream: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let cache = enc.encode_cache(&views, &prev_state, &prev_control).unwrap();
        let grads = enc.backward(&cache, &upstream);
        let mut analytic = Vec::new();
        grads.flatten_into(&mut analytic);

        let mut params = Vec::new();
        enc.params_flat_into(&mut params);
        assert_eq!(params.len(), analytic.len());
        assert_eq!(params.len(), enc.param_count());

        let h = 1e-6;
        let eval = |enc: &StateEncoder| -> f64 {
            let x = enc.encode(&views, &prev_state, &prev_control).unwrap();
            dot(&x, &upstream)
        };
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            enc.set_params_flat(&p);
            let up = eval(&enc);
            p[k] -= 2.0 * h;
            enc.set_params_flat(&p);
            let dn = eval(&enc);
            enc.set_params_flat(&params);
            let num = (up - dn) / (2.0 * h);
            let rel = (num - analytic[k]).abs() / (num.abs() + analytic[k].abs()).max(1e-8);
            if num.abs() > 1e-7 || analytic[k].abs() > 1e-7 {
                assert!(rel < 1e-4, "param {k}: numeric {num} vs analytic {}", analytic[k]);
            }
        }
    }
}
