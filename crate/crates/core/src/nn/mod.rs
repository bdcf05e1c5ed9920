//! Minimal dense neural-network kernel with manual backpropagation.

pub mod attention;
pub mod encoder;
pub mod mlp;
pub mod optim;

pub use attention::{softmax_scaled, AttentionAggregator, PosEncoding};
pub use encoder::{EncoderCache, EncoderGrads, StateEncoder, CONTROL_DIM};
pub use mlp::{Activation, DirectionalGrad, Mlp, MlpCache, MlpGrads};
pub use optim::MomentumSgd;
