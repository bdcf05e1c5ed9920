//! Control-affine latent dynamics: `xdot = f(x) + g(x) u`, with both heads
//! as small networks over the latent state. Affinity in the control is
//! structural: `u` only ever multiplies the actuation matrix.

use super::views::FamilyViews;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::nn::{Activation, Mlp, MlpGrads, MomentumSgd, StateEncoder, CONTROL_DIM};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsHeads {
    /// `state_dim -> state_dim` drift.
    pub f_net: Mlp,
    /// `state_dim -> state_dim * 2` actuation, row-major over controls.
    pub g_net: Mlp,
    pub state_dim: usize,
    /// One-step prediction error on held-out transitions, recorded at
    /// training time.
    pub val_mse: f64,
}

impl DynamicsHeads {
    pub fn init<R: Rng>(state_dim: usize, rng: &mut R) -> Self {
        DynamicsHeads {
            f_net: Mlp::init(&[state_dim, 64, state_dim], Activation::Tanh, rng),
            g_net: Mlp::init(&[state_dim, 64, state_dim * CONTROL_DIM], Activation::Tanh, rng),
            state_dim,
            val_mse: f64::NAN,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.f_net.forward(x)
    }

    /// Flattened `state_dim x 2` actuation matrix.
    pub fn actuation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.g_net.forward(x)
    }

    /// `f(x) + g(x) u`
    pub fn derivative(&self, x: &[f64], u: Vec2) -> Result<Vec<f64>> {
        let mut out = self.drift(x)?;
        let g = self.actuation(x)?;
        for i in 0..self.state_dim {
            out[i] += g[i * CONTROL_DIM] * u.x + g[i * CONTROL_DIM + 1] * u.y;
        }
        Ok(out)
    }

    /// One-step prediction `x + dt * (f(x) + g(x) u)`.
    pub fn predict_next(&self, x: &[f64], u: Vec2, dt: f64) -> Result<Vec<f64>> {
        let d = self.derivative(x, u)?;
        Ok(x.iter().zip(&d).map(|(xi, di)| xi + dt * di).collect())
    }

    /// `J_f(x)^T v` by reverse mode.
    pub fn drift_vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let cache = self.f_net.forward_cache(x)?;
        Ok(self.f_net.input_grad(&cache, v))
    }

    /// `d(g(x) u)/dx ^T v` by reverse mode: the upstream on the flattened
    /// actuation entries is `v_i u_j`.
    pub fn actuation_vjp(&self, x: &[f64], u: Vec2, v: &[f64]) -> Result<Vec<f64>> {
        let cache = self.g_net.forward_cache(x)?;
        let mut upstream = vec![0.0; self.state_dim * CONTROL_DIM];
        for i in 0..self.state_dim {
            upstream[i * CONTROL_DIM] = v[i] * u.x;
            upstream[i * CONTROL_DIM + 1] = v[i] * u.y;
        }
        Ok(self.g_net.input_grad(&cache, &upstream))
    }
}

/// A single supervised transition in latent space.
#[derive(Debug, Clone)]
pub struct Triple {
    pub x: Vec<f64>,
    pub u: Vec2,
    pub x_next: Vec<f64>,
}

/// Fit the heads to one-step predictions over explicit latent triples.
/// A deterministic tail of the data is held out for the validation error.
/// With `fit_actuation = false` the actuation head is frozen at zero and
/// the drift alone must explain the transitions.
pub fn train_dynamics_on_triples(
    triples: &[Triple],
    dt: f64,
    config: &TrainConfig,
    state_dim: usize,
    fit_actuation: bool,
) -> Result<DynamicsHeads> {
    config.validate()?;
    if triples.len() < 8 {
        return Err(Error::Train("too few transitions for dynamics".into()));
    }
    let n_val = (triples.len() / 6).max(1);
    let n_train = triples.len() - n_val;
    let (train, val) = triples.split_at(n_train);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x00d1_5ee5);
    let mut heads = DynamicsHeads::init(state_dim, &mut rng);
    if !fit_actuation {
        heads.g_net = Mlp::zeros(&[state_dim, 64, state_dim * CONTROL_DIM], Activation::Tanh);
    }

    let n_params = heads.f_net.param_count()
        + if fit_actuation {
            heads.g_net.param_count()
        } else {
            0
        };
    let n_batches = train.len().div_ceil(config.batch_size);
    let mut opt = MomentumSgd::new(n_params, config.learning_rate, config.epochs * n_batches);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut f_grads = MlpGrads::zeros_like(&heads.f_net);
            let mut g_grads = MlpGrads::zeros_like(&heads.g_net);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let t = &train[idx];
                let f_cache = heads.f_net.forward_cache(&t.x)?;
                let g_cache = heads.g_net.forward_cache(&t.x)?;
                let f = f_cache.output();
                let g = g_cache.output();
                // e = x + dt (f + G u) - x_next
                let mut err = vec![0.0; state_dim];
                for i in 0..state_dim {
                    let gu = g[i * CONTROL_DIM] * t.u.x + g[i * CONTROL_DIM + 1] * t.u.y;
                    err[i] = t.x[i] + dt * (f[i] + gu) - t.x_next[i];
                    batch_loss += err[i] * err[i];
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite dynamics loss at transition {idx}"
                    )));
                }
                let up_f: Vec<f64> = err.iter().map(|e| 2.0 * dt * e / chunk.len() as f64).collect();
                let (gf, _) = heads.f_net.backward(&f_cache, &up_f);
                f_grads.add_scaled(&gf, 1.0);
                if fit_actuation {
                    let mut up_g = vec![0.0; state_dim * CONTROL_DIM];
                    for i in 0..state_dim {
                        up_g[i * CONTROL_DIM] = up_f[i] * t.u.x;
                        up_g[i * CONTROL_DIM + 1] = up_f[i] * t.u.y;
                    }
                    let (gg, _) = heads.g_net.backward(&g_cache, &up_g);
                    g_grads.add_scaled(&gg, 1.0);
                }
            }
            let mut flat_grads = Vec::with_capacity(n_params);
            f_grads.flatten_into(&mut flat_grads);
            if fit_actuation {
                g_grads.flatten_into(&mut flat_grads);
            }
            let mut params = Vec::with_capacity(n_params);
            heads.f_net.params_flat_into(&mut params);
            if fit_actuation {
                heads.g_net.params_flat_into(&mut params);
            }
            opt.step(&mut params, &flat_grads);
            let used = heads.f_net.set_params_flat(&params);
            if fit_actuation {
                heads.g_net.set_params_flat(&params[used..]);
            }
        }
    }

    heads.val_mse = mse_on(&heads, val, dt)?;
    Ok(heads)
}

fn mse_on(heads: &DynamicsHeads, triples: &[Triple], dt: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in triples {
        let pred = heads.predict_next(&t.x, t.u, dt)?;
        for (p, y) in pred.iter().zip(&t.x_next) {
            total += (p - y) * (p - y);
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Gather latent transitions from trajectories through a (frozen) encoder.
/// Transitions after a collision are skipped: the crashed dynamics mode
/// (frozen ego) is not the mode the filter acts in.
pub fn gather_triples(
    views: &FamilyViews,
    encoder: &StateEncoder,
    traj_indices: &[usize],
) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for &k in traj_indices {
        let traj_views = &views.views[k];
        let controls = &views.controls[k];
        let states = encoder.encode_trajectory(traj_views, controls)?;
        let cutoff = views.collision_frames[k].unwrap_or(states.len());
        for t in 0..states.len().saturating_sub(1) {
            if t + 1 > cutoff {
                break;
            }
            triples.push(Triple {
                x: states[t].clone(),
                u: Vec2::new(controls[t][0], controls[t][1]),
                x_next: states[t + 1].clone(),
            });
        }
    }
    Ok(triples)
}

/// Pre-train the dynamics heads over the encoder's latent trajectories.
/// The encoder is not modified.
pub fn train_dynamics(
    views: &FamilyViews,
    encoder: &StateEncoder,
    traj_indices: &[usize],
    dt: f64,
    config: &TrainConfig,
) -> Result<DynamicsHeads> {
    let triples = gather_triples(views, encoder, traj_indices)?;
    train_dynamics_on_triples(&triples, dt, config, encoder.state_dim, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_system_triples(n: usize, state_dim: usize, seed: u64) -> (Vec<Triple>, f64) {
        // x' = x + dt (A x + B u) with fixed random A, B.
        let dt = 0.1;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..state_dim * state_dim)
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        let b: Vec<f64> = (0..state_dim * CONTROL_DIM)
            .map(|_| rng.gen_range(-0.8..0.8))
            .collect();
        let mut triples = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let mut x_next = x.clone();
            for i in 0..state_dim {
                let mut ax = 0.0;
                for j in 0..state_dim {
                    ax += a[i * state_dim + j] * x[j];
                }
                let bu = b[i * CONTROL_DIM] * u.x + b[i * CONTROL_DIM + 1] * u.y;
                x_next[i] += dt * (ax + bu);
            }
            triples.push(Triple { x, u, x_next });
        }
        (triples, dt)
    }

    #[test]
    fn learns_linear_latent_system() {
        let state_dim = 6;
        let (triples, dt) = linear_system_triples(3000, state_dim, 9);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let heads = train_dynamics_on_triples(&triples, dt, &cfg, state_dim, true).unwrap();
        // Compare against the variance of the state targets.
        let mean: f64 = triples
            .iter()
            .flat_map(|t| t.x_next.iter())
            .sum::<f64>()
            / (triples.len() * state_dim) as f64;
        let var: f64 = triples
            .iter()
            .flat_map(|t| t.x_next.iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (triples.len() * state_dim) as f64;
        assert!(
            heads.val_mse < 1e-3 * var,
            "val mse {} vs variance {}",
            heads.val_mse,
            var
        );
    }

    #[test]
    fn zero_control_data_fits_drift_alone() {
        // Pure-drift data: x' = x + dt A x with u = 0 throughout. The
        // actuation head is unconstrained; the drift head alone must fit
        // about as well as the full model does.
        let state_dim = 4;
        let dt = 0.1;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..state_dim * state_dim)
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        let mut triples = Vec::new();
        for _ in 0..2000 {
            let x: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x_next = x.clone();
            for i in 0..state_dim {
                let mut ax = 0.0;
                for j in 0..state_dim {
                    ax += a[i * state_dim + j] * x[j];
                }
                x_next[i] += dt * ax;
            }
            triples.push(Triple {
                x,
                u: Vec2::ZERO,
                x_next,
            });
        }
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 128,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let full = train_dynamics_on_triples(&triples, dt, &cfg, state_dim, true).unwrap();
        let drift_only = train_dynamics_on_triples(&triples, dt, &cfg, state_dim, false).unwrap();
        assert!(drift_only.val_mse < 5e-4, "drift-only mse {}", drift_only.val_mse);
        assert!(
            drift_only.val_mse < 4.0 * full.val_mse.max(1e-6),
            "drift-only {} vs full {}",
            drift_only.val_mse,
            full.val_mse
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (triples, dt) = linear_system_triples(400, 4, 13);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let h1 = train_dynamics_on_triples(&triples, dt, &cfg, 4, true).unwrap();
        let h2 = train_dynamics_on_triples(&triples, dt, &cfg, 4, true).unwrap();
        assert_eq!(h1.f_net.weights, h2.f_net.weights);
        assert_eq!(h1.g_net.weights, h2.g_net.weights);
        assert_eq!(h1.val_mse, h2.val_mse);
    }

    #[test]
    fn derivative_is_affine_in_control() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let heads = DynamicsHeads::init(5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u1 = Vec2::new(0.3, -0.8);
        let u2 = Vec2::new(-1.1, 0.4);
        let alpha = 0.37;
        let mix = u1 * alpha + u2 * (1.0 - alpha);
        let d1 = heads.derivative(&x, u1).unwrap();
        let d2 = heads.derivative(&x, u2).unwrap();
        let dm = heads.derivative(&x, mix).unwrap();
        for i in 0..5 {
            let expect = alpha * d1[i] + (1.0 - alpha) * d2[i];
            assert!((dm[i] - expect).abs() < 1e-9);
        }
    }
}
