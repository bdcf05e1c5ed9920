//! Learned safety control filters, trained and aggregated as ensembles.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`sim`]: a deterministic planar collision-avoidance world that emits
//!   trajectories of multi-view range embeddings together with safe/unsafe
//!   labels on states and controls.
//! - [`nn`]: a minimal dense network kernel (MLPs with manual
//!   backpropagation, attention over views, a recurrent state encoder).
//! - [`train`]: member filter training by three methods (iDBF, offline
//!   SABLAS, discriminating hyperplanes) over a learned control-affine
//!   latent dynamics model.
//! - [`ensemble`]: averaging, majority-voting, and consensus aggregation of
//!   member filters.
//! - [`filter`]: quadratic-program safety filtering, the majority-vote MIQP
//!   oracle and its heuristic, and closed-loop rollouts.
//! - [`eval`]: classification accuracies and ensemble improvement rates,
//!   with the in/out-of-distribution comparison harness.
//! - [`pipeline`]: stage drivers shared by the CLI and the acceptance suite.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod filter;
pub mod math;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use math::Vec2;
