//! Training of member safety-filter models.
//!
//! Three methods over a shared recurrent encoder:
//!
//! - **iDBF**: pre-trains a control-affine latent dynamics model, then
//!   jointly trains the encoder and a barrier head with hinge losses on
//!   state labels and on the analytic barrier rate of logged controls.
//! - **SABLAS (offline)**: same losses, but the rate on observed
//!   transitions is discrepancy-corrected so the logged next state repairs
//!   the nominal model's rollout.
//! - **DH**: trains the encoder and a hyperplane head directly on control
//!   labels; no dynamics model.

pub mod dynamics;
pub mod losses;
pub mod member;
pub mod model_io;
pub mod pool;
pub mod views;

pub use dynamics::{train_dynamics, train_dynamics_on_triples, DynamicsHeads};
pub use losses::{sablas_corrected_rate, sample_loss, LossWeights, Sample, Trainee, TraineeGrads};
pub use member::{
    train_dh, train_idbf, train_member, train_sablas_offline, validation_metrics, MemberSpec,
};
pub use model_io::{load_model, load_pool, save_model, save_pool, PoolManifest, MODEL_FORMAT_VERSION};
pub use pool::{member_spec_for_cell, select_members, train_member_pool, PoolMember, PoolSpec};
pub use views::FamilyViews;

use crate::error::{Error, Result};
use crate::filter::HalfspaceConstraint;
use crate::math::Vec2;
use crate::nn::{Mlp, StateEncoder};
use crate::sim::FeatureFamily;
use serde::{Deserialize, Serialize};

pub const DEFAULT_STATE_DIM: usize = 16;
pub const POS_DIM: usize = 8;

/// Which training method produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Idbf,
    Sablas,
    Dh,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 3] = [TrainMethod::Idbf, TrainMethod::Sablas, TrainMethod::Dh];

    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Idbf => "idbf",
            TrainMethod::Sablas => "sablas",
            TrainMethod::Dh => "dh",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMethod> {
        match s {
            "idbf" => Ok(TrainMethod::Idbf),
            "sablas" => Ok(TrainMethod::Sablas),
            "dh" => Ok(TrainMethod::Dh),
            other => Err(Error::config(format!("unknown training method '{other}'"))),
        }
    }
}

/// Hyperparameters shared by all training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hinge margin in latent units.
    pub margin: f64,
    /// Extra weight on misclassified unsafe actions; must exceed 1.
    pub lambda_unsafe: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.05,
            margin: 0.05,
            lambda_unsafe: 18.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.margin > 0.0) {
            return Err(Error::config("learning rate and margin must be positive"));
        }
        if !(self.lambda_unsafe > 1.0) {
            return Err(Error::config("lambda_unsafe must exceed 1"));
        }
        Ok(())
    }
}

/// Hidden geometry of the filter heads (barrier / hyperplane networks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadGeometry {
    pub hidden_layers: usize,
    pub width: usize,
}

impl HeadGeometry {
    /// Standard ensemble member head: two hidden layers of 64.
    pub fn member() -> Self {
        HeadGeometry {
            hidden_layers: 2,
            width: 64,
        }
    }

    /// Large single-model baseline grown in depth: five layers of 95.
    pub fn large_deep() -> Self {
        HeadGeometry {
            hidden_layers: 5,
            width: 95,
        }
    }

    /// Large single-model baseline grown in width: two layers of 220.
    pub fn large_wide() -> Self {
        HeadGeometry {
            hidden_layers: 2,
            width: 220,
        }
    }

    pub fn head_dims(&self, state_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(state_dim);
        dims.extend(std::iter::repeat(self.width).take(self.hidden_layers));
        dims.push(out_dim);
        dims
    }
}

/// Barrier head: scalar certificate over latent states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbfHead {
    pub b_net: Mlp,
}

/// Hyperplane head: maps a latent state to `(a, b)` with safe controls
/// `a . u >= b`. A zero `a` is a documented degenerate case: the sign of
/// `-b` then classifies every control the same way.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DhHead {
    pub ab_net: Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FilterHead {
    Cbf(CbfHead),
    Dh(DhHead),
}

/// Validation accuracies recorded with each trained member (percent).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub safe_state_acc: Option<f64>,
    pub unsafe_state_acc: Option<f64>,
    pub safe_action_acc: f64,
    pub unsafe_action_acc: f64,
}

/// One trained member filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterModel {
    pub encoder: StateEncoder,
    /// Present for barrier-based methods, absent for DH.
    pub dynamics: Option<DynamicsHeads>,
    pub head: FilterHead,
    pub method: TrainMethod,
    /// Slope of the linear class-K function applied to the barrier value.
    pub gamma_alpha: f64,
    pub dt: f64,
    pub family: FeatureFamily,
    pub geometry: HeadGeometry,
    pub hyper: TrainConfig,
    pub val_metrics: ValMetrics,
}

impl FilterModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_alpha > 0.0) {
            return Err(Error::config("gamma_alpha must be positive"));
        }
        match (&self.head, self.method) {
            (FilterHead::Cbf(_), TrainMethod::Idbf | TrainMethod::Sablas) => {}
            (FilterHead::Dh(_), TrainMethod::Dh) => {}
            _ => return Err(Error::config("method tag inconsistent with head type")),
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.state_dim
    }

    fn cbf_parts(&self) -> Result<(&CbfHead, &DynamicsHeads)> {
        match (&self.head, &self.dynamics) {
            (FilterHead::Cbf(h), Some(d)) => Ok((h, d)),
            _ => Err(Error::Ensemble(
                "barrier operation requested from a hyperplane model".into(),
            )),
        }
    }

    /// Barrier value `B(x)`.
    pub fn cbf_value(&self, x: &[f64]) -> Result<f64> {
        let (head, _) = self.cbf_parts()?;
        Ok(head.b_net.forward(x)?[0])
    }

    /// Analytic barrier rate `grad B(x) . (f(x) + g(x) u) + alpha B(x)`;
    /// affine in `u` by construction.
    pub fn cbf_rate(&self, x: &[f64], u: Vec2) -> Result<f64> {
        let (head, dyn_heads) = self.cbf_parts()?;
        let cache = head.b_net.forward_cache(x)?;
        let value = cache.output()[0];
        let grad = head.b_net.input_grad(&cache, &[1.0]);
        let xdot = dyn_heads.derivative(x, u)?;
        Ok(crate::math::dot(&grad, &xdot) + self.gamma_alpha * value)
    }

    /// The member's halfspace over controls at latent state `x`.
    ///
    /// Barrier members expose `a = (grad B . g)` and
    /// `b = -grad B . f - alpha B`, so `a . u - b` equals the barrier
    /// rate; hyperplane members return their head outputs directly.
    pub fn constraint_at(&self, x: &[f64]) -> Result<HalfspaceConstraint> {
        match &self.head {
            FilterHead::Cbf(head) => {
                let dyn_heads = self
                    .dynamics
                    .as_ref()
                    .ok_or_else(|| Error::Ensemble("barrier model missing dynamics".into()))?;
                let cache = head.b_net.forward_cache(x)?;
                let value = cache.output()[0];
                let grad = head.b_net.input_grad(&cache, &[1.0]);
                let f = dyn_heads.drift(x)?;
                let g = dyn_heads.actuation(x)?;
                // a_j = sum_i grad_i G[i][j]
                let mut a = Vec2::ZERO;
                for i in 0..self.state_dim() {
                    a.x += grad[i] * g[i * 2];
                    a.y += grad[i] * g[i * 2 + 1];
                }
                let b = -crate::math::dot(&grad, &f) - self.gamma_alpha * value;
                Ok(HalfspaceConstraint::new(a, b))
            }
            FilterHead::Dh(head) => {
                let out = head.ab_net.forward(x)?;
                Ok(HalfspaceConstraint::new(Vec2::new(out[0], out[1]), out[2]))
            }
        }
    }

    /// Safe/unsafe state decision; hyperplane models do not classify
    /// states.
    pub fn classify_state(&self, x: &[f64]) -> Option<bool> {
        match &self.head {
            FilterHead::Cbf(head) => {
                let b = head.b_net.forward(x).ok()?[0];
                Some(b >= 0.0)
            }
            FilterHead::Dh(_) => None,
        }
    }

    /// Safe/unsafe action decision at latent state `x`.
    pub fn classify_action(&self, x: &[f64], u: Vec2) -> Result<bool> {
        Ok(self.constraint_at(x)?.margin(u) >= 0.0)
    }

    /// Latent trajectory under this member's feature family.
    pub fn encode_trajectory(
        &self,
        frames_views: &[Vec<Vec<f64>>],
        controls: &[[f64; 2]],
    ) -> Result<Vec<Vec<f64>>> {
        self.encoder.encode_trajectory(frames_views, controls)
    }
}
