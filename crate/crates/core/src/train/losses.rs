//! Per-sample training losses and their exact gradients.
//!
//! Every loss is a sum of hinge terms `relu(margin -/+ z)` over class
//! means, with the unsafe-action term scaled by lambda. The quantity `z`
//! depends on the method:
//!
//! - state terms: the barrier value `B(x)` (barrier methods only);
//! - iDBF action terms: the analytic rate
//!   `grad B(x) . (f(x) + g(x) u) + alpha B(x)` — its parameter gradient
//!   carries Hessian-vector products through the barrier network;
//! - SABLAS action terms: the discrepancy-corrected discrete rate, which
//!   at the logged control reduces exactly to
//!   `(B(x_next) - B(x)) / dt + alpha B(x)`;
//! - DH action terms: the hyperplane margin `a(x) . u - b(x)`.
//!
//! Each sample treats the previous latent state as a fixed input (replayed
//! from the epoch-start encoder), so gradients flow through the encoder
//! applications of the sample itself only.

use super::dynamics::DynamicsHeads;
use super::TrainMethod;
use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::nn::{EncoderGrads, Mlp, MlpGrads, StateEncoder, CONTROL_DIM};
use crate::sim::SafetyLabel;

/// The trainable parts of a member during loss evaluation. Dynamics heads
/// are frozen context, not parameters.
#[derive(Debug, Clone)]
pub struct Trainee {
    pub encoder: StateEncoder,
    /// Barrier net (scalar out) or hyperplane net (3 outputs).
    pub head_net: Mlp,
    pub dynamics: Option<DynamicsHeads>,
    pub method: TrainMethod,
    pub gamma_alpha: f64,
    pub dt: f64,
}

impl Trainee {
    pub fn n_params(&self) -> usize {
        self.encoder.param_count() + self.head_net.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.encoder.params_flat_into(&mut out);
        self.head_net.params_flat_into(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        let n = self.encoder.set_params_flat(src);
        self.head_net.set_params_flat(&src[n..]);
    }
}

/// Gradient accumulator congruent with [`Trainee`] parameters.
#[derive(Debug, Clone)]
pub struct TraineeGrads {
    pub encoder: EncoderGrads,
    pub head: MlpGrads,
}

impl TraineeGrads {
    pub fn zeros_like(t: &Trainee) -> Self {
        TraineeGrads {
            encoder: EncoderGrads::zeros_like(&t.encoder),
            head: MlpGrads::zeros_like(&t.head_net),
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.encoder.flatten_into(out);
        self.head.flatten_into(out);
    }
}

/// Per-class weights making each hinge family a class mean, plus the
/// shared margin and the unsafe-action multiplier.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub margin: f64,
    pub lambda_unsafe: f64,
    pub w_safe_state: f64,
    pub w_unsafe_state: f64,
    pub w_safe_action: f64,
    pub w_unsafe_action: f64,
}

impl LossWeights {
    pub fn uniform(margin: f64, lambda_unsafe: f64) -> Self {
        LossWeights {
            margin,
            lambda_unsafe,
            w_safe_state: 1.0,
            w_unsafe_state: 1.0,
            w_safe_action: 1.0,
            w_unsafe_action: 1.0,
        }
    }
}

/// One training transition. `x_prev` and (for SABLAS) `x_replay` are
/// fixed inputs replayed from the epoch-start encoder parameters.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub views: &'a [Vec<f64>],
    pub x_prev: &'a [f64],
    pub u_prev: [f64; 2],
    /// Logged control at this frame.
    pub u: Vec2,
    pub state_label: SafetyLabel,
    pub control_label: SafetyLabel,
    /// Next-frame material for the SABLAS corrected rate.
    pub next: Option<SablasNext<'a>>,
}

#[derive(Debug, Clone)]
pub struct SablasNext<'a> {
    pub views: &'a [Vec<f64>],
    /// Replayed latent state at the current frame, input of the next-frame
    /// encoding.
    pub x_replay: &'a [f64],
}

#[inline]
fn hinge(margin: f64, z: f64) -> (f64, f64) {
    // relu(margin - z) and d/dz
    let v = margin - z;
    if v > 0.0 {
        (v, -1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Loss of one sample; accumulates exact parameter gradients into `grads`
/// when given. This is the composite the finite-difference oracle checks.
pub fn sample_loss(
    trainee: &Trainee,
    sample: &Sample,
    w: &LossWeights,
    mut grads: Option<&mut TraineeGrads>,
) -> Result<f64> {
    match trainee.method {
        TrainMethod::Idbf => idbf_loss(trainee, sample, w, grads.as_deref_mut()),
        TrainMethod::Sablas => sablas_loss(trainee, sample, w, grads.as_deref_mut()),
        TrainMethod::Dh => dh_loss(trainee, sample, w, grads.as_deref_mut()),
    }
}

/// Hinge pair on the barrier value: safe states want `B >= margin`,
/// unsafe states want `B <= -margin`. Returns `(loss, dloss/dB)`.
fn state_terms(b: f64, label: SafetyLabel, w: &LossWeights) -> (f64, f64) {
    match label {
        SafetyLabel::Safe => {
            let (l, dz) = hinge(w.margin, b);
            (w.w_safe_state * l, w.w_safe_state * dz)
        }
        SafetyLabel::Unsafe => {
            let (l, dz) = hinge(w.margin, -b);
            (w.w_unsafe_state * l, -w.w_unsafe_state * dz)
        }
    }
}

/// Hinge pair on a rate-like quantity for the control label, with lambda
/// on the unsafe side. Returns `(loss, dloss/drate)`.
fn action_terms(rate: f64, label: SafetyLabel, w: &LossWeights) -> (f64, f64) {
    match label {
        SafetyLabel::Safe => {
            let (l, dz) = hinge(w.margin, rate);
            (w.w_safe_action * l, w.w_safe_action * dz)
        }
        SafetyLabel::Unsafe => {
            let (l, dz) = hinge(w.margin, -rate);
            (
                w.lambda_unsafe * w.w_unsafe_action * l,
                -w.lambda_unsafe * w.w_unsafe_action * dz,
            )
        }
    }
}

fn idbf_loss(
    trainee: &Trainee,
    sample: &Sample,
    w: &LossWeights,
    grads: Option<&mut TraineeGrads>,
) -> Result<f64> {
    let dyn_heads = trainee
        .dynamics
        .as_ref()
        .ok_or_else(|| Error::Train("iDBF loss requires dynamics heads".into()))?;
    let enc_cache = trainee
        .encoder
        .encode_cache(sample.views, sample.x_prev, &sample.u_prev)?;
    let x = enc_cache.state().to_vec();

    let f_cache = dyn_heads.f_net.forward_cache(&x)?;
    let g_cache = dyn_heads.g_net.forward_cache(&x)?;
    let f = f_cache.output();
    let g = g_cache.output();
    let state_dim = x.len();
    let mut v = vec![0.0; state_dim];
    for i in 0..state_dim {
        v[i] = f[i] + g[i * CONTROL_DIM] * sample.u.x + g[i * CONTROL_DIM + 1] * sample.u.y;
    }

    let dg = trainee.head_net.directional_grad_backward(&x, &v)?;
    let b = dg.value;
    let rate = dg.jvp + trainee.gamma_alpha * b;

    let (l_state, c_b_state) = state_terms(b, sample.state_label, w);
    let (l_action, c_rate) = action_terms(rate, sample.control_label, w);
    let loss = l_state + l_action;

    if let Some(gr) = grads {
        let c_b = c_b_state + c_rate * trainee.gamma_alpha;
        gr.head.add_scaled(&dg.value_param_grads, c_b);
        gr.head.add_scaled(&dg.jvp_param_grads, c_rate);

        if c_b != 0.0 || c_rate != 0.0 {
            // dx = c_b grad(B) + c_rate (H(B) v + J_v^T grad(B))
            let mut dx: Vec<f64> = dg.input_grad.iter().map(|gi| c_b * gi).collect();
            if c_rate != 0.0 {
                for (d, h) in dx.iter_mut().zip(&dg.jvp_input_grad) {
                    *d += c_rate * h;
                }
                let jf = dyn_heads.f_net.input_grad(&f_cache, &dg.input_grad);
                let mut up_g = vec![0.0; state_dim * CONTROL_DIM];
                for i in 0..state_dim {
                    up_g[i * CONTROL_DIM] = dg.input_grad[i] * sample.u.x;
                    up_g[i * CONTROL_DIM + 1] = dg.input_grad[i] * sample.u.y;
                }
                let jg = dyn_heads.g_net.input_grad(&g_cache, &up_g);
                for i in 0..state_dim {
                    dx[i] += c_rate * (jf[i] + jg[i]);
                }
            }
            let enc_grads = trainee.encoder.backward(&enc_cache, &dx);
            gr.encoder.add_scaled(&enc_grads, 1.0);
        }
    }
    Ok(loss)
}

fn sablas_loss(
    trainee: &Trainee,
    sample: &Sample,
    w: &LossWeights,
    grads: Option<&mut TraineeGrads>,
) -> Result<f64> {
    let enc_cache_t = trainee
        .encoder
        .encode_cache(sample.views, sample.x_prev, &sample.u_prev)?;
    let x_t = enc_cache_t.state().to_vec();
    let b_cache_t = trainee.head_net.forward_cache(&x_t)?;
    let b_t = b_cache_t.output()[0];

    let (l_state, mut c_bt) = state_terms(b_t, sample.state_label, w);
    let mut loss = l_state;

    let mut next_part = None;
    if let Some(next) = &sample.next {
        let enc_cache_n = trainee
            .encoder
            .encode_cache(next.views, next.x_replay, &sample.u.to_array())?;
        let x_n = enc_cache_n.state().to_vec();
        let b_cache_n = trainee.head_net.forward_cache(&x_n)?;
        let b_n = b_cache_n.output()[0];
        // Corrected discrete rate at the logged control: the nominal-model
        // rollout cancels against its own correction, leaving the true
        // next state.
        let rate = (b_n - b_t) / trainee.dt + trainee.gamma_alpha * b_t;
        let (l_action, c_rate) = action_terms(rate, sample.control_label, w);
        loss += l_action;
        c_bt += c_rate * (trainee.gamma_alpha - 1.0 / trainee.dt);
        next_part = Some((enc_cache_n, b_cache_n, c_rate / trainee.dt));
    }

    if let Some(gr) = grads {
        if c_bt != 0.0 {
            let (head_g, dx_t) = trainee.head_net.backward(&b_cache_t, &[c_bt]);
            gr.head.add_scaled(&head_g, 1.0);
            let enc_g = trainee.encoder.backward(&enc_cache_t, &dx_t);
            gr.encoder.add_scaled(&enc_g, 1.0);
        }
        if let Some((enc_cache_n, b_cache_n, c_bn)) = next_part {
            if c_bn != 0.0 {
                let (head_g, dx_n) = trainee.head_net.backward(&b_cache_n, &[c_bn]);
                gr.head.add_scaled(&head_g, 1.0);
                let enc_g = trainee.encoder.backward(&enc_cache_n, &dx_n);
                gr.encoder.add_scaled(&enc_g, 1.0);
            }
        }
    }
    Ok(loss)
}

fn dh_loss(
    trainee: &Trainee,
    sample: &Sample,
    w: &LossWeights,
    grads: Option<&mut TraineeGrads>,
) -> Result<f64> {
    let enc_cache = trainee
        .encoder
        .encode_cache(sample.views, sample.x_prev, &sample.u_prev)?;
    let x = enc_cache.state().to_vec();
    let ab_cache = trainee.head_net.forward_cache(&x)?;
    let out = ab_cache.output();
    let z = out[0] * sample.u.x + out[1] * sample.u.y - out[2];

    let (loss, c_z) = action_terms(z, sample.control_label, w);

    if let Some(gr) = grads {
        if c_z != 0.0 {
            let upstream = [c_z * sample.u.x, c_z * sample.u.y, -c_z];
            let (head_g, dx) = trainee.head_net.backward(&ab_cache, &upstream);
            gr.head.add_scaled(&head_g, 1.0);
            let enc_g = trainee.encoder.backward(&enc_cache, &dx);
            gr.encoder.add_scaled(&enc_g, 1.0);
        }
    }
    Ok(loss)
}

/// The SABLAS corrected rate at an arbitrary evaluated control: the
/// nominal model rolls out the evaluated control, and the discrepancy
/// between the logged next state and the nominal rollout of the logged
/// control corrects it. At `u_eval == u_logged` the model terms cancel
/// exactly and the true next state remains.
pub fn sablas_corrected_rate(
    head_net: &Mlp,
    dynamics: &DynamicsHeads,
    gamma_alpha: f64,
    dt: f64,
    x_t: &[f64],
    x_next_true: &[f64],
    u_eval: Vec2,
    u_logged: Vec2,
) -> Result<f64> {
    let pred_eval = dynamics.predict_next(x_t, u_eval, dt)?;
    let pred_logged = dynamics.predict_next(x_t, u_logged, dt)?;
    let corrected: Vec<f64> = pred_eval
        .iter()
        .zip(&pred_logged)
        .zip(x_next_true)
        .map(|((pe, pl), xt)| (pe - pl) + xt)
        .collect();
    let b_t = head_net.forward(x_t)?[0];
    let b_c = head_net.forward(&corrected)?[0];
    Ok((b_c - b_t) / dt + gamma_alpha * b_t)
}

/// Class-mean weights over a set of counted samples.
pub fn class_weights(
    margin: f64,
    lambda_unsafe: f64,
    n_safe_states: usize,
    n_unsafe_states: usize,
    n_safe_actions: usize,
    n_unsafe_actions: usize,
) -> LossWeights {
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    LossWeights {
        margin,
        lambda_unsafe,
        w_safe_state: inv(n_safe_states),
        w_unsafe_state: inv(n_unsafe_states),
        w_safe_action: inv(n_safe_actions),
        w_unsafe_action: inv(n_unsafe_actions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, AttentionAggregator, PosEncoding};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    const N_VIEWS: usize = 3;
    const FEAT: usize = 5;
    const POS: usize = 4;
    const SD: usize = 6;

    fn test_trainee(method: TrainMethod, seed: u64) -> Trainee {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder = StateEncoder {
            aggregator: AttentionAggregator {
                score_net: Mlp::init(&[FEAT + POS, 10, 1], Activation::Tanh, &mut rng),
                temperature: 1.0,
                pos: PosEncoding::sinusoidal(N_VIEWS, POS),
            },
            core: Mlp::init(&[FEAT + POS + SD + 2, 14, SD], Activation::Tanh, &mut rng),
            state_dim: SD,
        };
        let head_out = if method == TrainMethod::Dh { 3 } else { 1 };
        let head_net = Mlp::init(&[SD, 12, 10, head_out], Activation::Tanh, &mut rng);
        let dynamics = if method == TrainMethod::Dh {
            None
        } else {
            Some(DynamicsHeads::init(SD, &mut rng))
        };
        Trainee {
            encoder,
            head_net,
            dynamics,
            method,
            gamma_alpha: 0.8,
            dt: 0.1,
        }
    }

    fn random_views(rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
        (0..N_VIEWS)
            .map(|_| (0..FEAT).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn check_gradients(method: TrainMethod, state_label: SafetyLabel, control_label: SafetyLabel) {
        let mut trainee = test_trainee(method, 42);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let views = random_views(&mut rng);
        let views_next = random_views(&mut rng);
        let x_prev: Vec<f64> = (0..SD).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x_replay: Vec<f64> = (0..SD).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // A large margin keeps every hinge active (and far from its kink)
        // at a freshly initialized model, so all gradient paths are
        // exercised.
        let w = LossWeights::uniform(5.0, 3.0);
        let sample = Sample {
            views: &views,
            x_prev: &x_prev,
            u_prev: [0.1, -0.2],
            u: Vec2::new(0.4, 0.9),
            state_label,
            control_label,
            next: Some(SablasNext {
                views: &views_next,
                x_replay: &x_replay,
            }),
        };

        let mut grads = TraineeGrads::zeros_like(&trainee);
        let loss = sample_loss(&trainee, &sample, &w, Some(&mut grads)).unwrap();
        assert!(loss.is_finite());
        assert!(loss > 0.0, "expected active hinges, got {loss}");

        let mut analytic = Vec::new();
        grads.flatten_into(&mut analytic);
        let params = trainee.params_flat();
        assert_eq!(params.len(), analytic.len());

        let h = 1e-5;
        let mut worst: (f64, usize) = (0.0, 0);
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            trainee.set_params_flat(&p);
            let up = sample_loss(&trainee, &sample, &w, None).unwrap();
            p[k] -= 2.0 * h;
            trainee.set_params_flat(&p);
            let dn = sample_loss(&trainee, &sample, &w, None).unwrap();
            trainee.set_params_flat(&params);
            let num = (up - dn) / (2.0 * h);
            let rel = (num - analytic[k]).abs() / (num.abs() + analytic[k].abs()).max(1e-7);
            if (num.abs() > 1e-7 || analytic[k].abs() > 1e-7) && rel > worst.0 {
                worst = (rel, k);
            }
        }
        assert!(
            worst.0 < 1e-4,
            "{method:?}: worst relative error {} at param {}",
            worst.0,
            worst.1
        );
    }

    #[test]
    fn idbf_gradients_match_finite_differences() {
        check_gradients(TrainMethod::Idbf, SafetyLabel::Safe, SafetyLabel::Unsafe);
        check_gradients(TrainMethod::Idbf, SafetyLabel::Unsafe, SafetyLabel::Safe);
    }

    #[test]
    fn sablas_gradients_match_finite_differences() {
        check_gradients(TrainMethod::Sablas, SafetyLabel::Safe, SafetyLabel::Unsafe);
        check_gradients(TrainMethod::Sablas, SafetyLabel::Unsafe, SafetyLabel::Safe);
    }

    #[test]
    fn dh_gradients_match_finite_differences() {
        check_gradients(TrainMethod::Dh, SafetyLabel::Safe, SafetyLabel::Unsafe);
        check_gradients(TrainMethod::Dh, SafetyLabel::Safe, SafetyLabel::Safe);
    }

    #[test]
    fn zero_init_head_hinges_equal_margin() {
        // With an all-zero barrier head every value and rate is zero, so
        // each active hinge contributes exactly the margin.
        let mut trainee = test_trainee(TrainMethod::Idbf, 1);
        trainee.head_net = Mlp::zeros(&[SD, 12, 10, 1], Activation::Tanh);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let views = random_views(&mut rng);
        let x_prev = vec![0.0; SD];
        let margin = 0.3;
        let w = LossWeights::uniform(margin, 2.0);
        let sample = Sample {
            views: &views,
            x_prev: &x_prev,
            u_prev: [0.0, 0.0],
            u: Vec2::new(1.0, 0.0),
            state_label: SafetyLabel::Safe,
            control_label: SafetyLabel::Safe,
            next: None,
        };
        let loss = sample_loss(&trainee, &sample, &w, None).unwrap();
        // One state hinge plus one action hinge, both at the margin.
        assert!((loss - 2.0 * margin).abs() < 1e-12);
    }

    #[test]
    fn sablas_logged_control_cancels_model() {
        let trainee = test_trainee(TrainMethod::Sablas, 5);
        let dynamics = trainee.dynamics.as_ref().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x_t: Vec<f64> = (0..SD).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x_next: Vec<f64> = (0..SD).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let u = Vec2::new(0.7, -0.3);
        let rate = sablas_corrected_rate(
            &trainee.head_net,
            dynamics,
            trainee.gamma_alpha,
            trainee.dt,
            &x_t,
            &x_next,
            u,
            u,
        )
        .unwrap();
        let b_t = trainee.head_net.forward(&x_t).unwrap()[0];
        let b_n = trainee.head_net.forward(&x_next).unwrap()[0];
        let expected = (b_n - b_t) / trainee.dt + trainee.gamma_alpha * b_t;
        assert_eq!(rate, expected, "model terms must cancel bitwise");
    }

    #[test]
    fn sablas_perfect_model_matches_model_rate() {
        // If the logged next state equals the model prediction, the
        // corrected rate equals the plain model finite-difference rate at
        // any evaluated control.
        let trainee = test_trainee(TrainMethod::Sablas, 8);
        let dynamics = trainee.dynamics.as_ref().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x_t: Vec<f64> = (0..SD).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let u_logged = Vec2::new(0.2, 0.5);
        let u_eval = Vec2::new(-0.6, 0.1);
        let x_next_model = dynamics.predict_next(&x_t, u_logged, trainee.dt).unwrap();
        let rate = sablas_corrected_rate(
            &trainee.head_net,
            dynamics,
            trainee.gamma_alpha,
            trainee.dt,
            &x_t,
            &x_next_model,
            u_eval,
            u_logged,
        )
        .unwrap();
        let pred_eval = dynamics.predict_next(&x_t, u_eval, trainee.dt).unwrap();
        let b_t = trainee.head_net.forward(&x_t).unwrap()[0];
        let b_p = trainee.head_net.forward(&pred_eval).unwrap()[0];
        let expected = (b_p - b_t) / trainee.dt + trainee.gamma_alpha * b_t;
        assert!((rate - expected).abs() < 1e-9);
    }

    #[test]
    fn dh_degenerate_hyperplane_semantics() {
        // a = 0: sign(-b) classifies every control identically.
        let mut trainee = test_trainee(TrainMethod::Dh, 11);
        trainee.head_net = Mlp::zeros(&[SD, 3], Activation::Tanh);
        // b < 0 everywhere -> z = -b > 0 -> everything safe.
        trainee.head_net.biases[0] = vec![0.0, 0.0, -1.0];
        let x = vec![0.0; SD];
        let out = trainee.head_net.forward(&x).unwrap();
        for u in [Vec2::new(5.0, 5.0), Vec2::new(-5.0, 0.0), Vec2::ZERO] {
            let z = out[0] * u.x + out[1] * u.y - out[2];
            assert!(z >= 0.0);
        }
        // b > 0 -> everything unsafe.
        trainee.head_net.biases[0] = vec![0.0, 0.0, 1.0];
        let out = trainee.head_net.forward(&x).unwrap();
        for u in [Vec2::new(5.0, 5.0), Vec2::new(-5.0, 0.0), Vec2::ZERO] {
            let z = out[0] * u.x + out[1] * u.y - out[2];
            assert!(z < 0.0);
        }
    }
}
