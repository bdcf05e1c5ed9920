//! Closed-loop rollouts with a safety filter in the loop (completed after
//! the ensemble module).

use serde::{Deserialize, Serialize};

/// Aggregate outcome of filtered rollouts over a set of seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutReport {
    pub collision_rate: f64,
    pub mean_intervention_rate: f64,
    pub mean_deviation: f64,
    pub outcomes: Vec<SeedOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub collision: bool,
    pub intervention_rate: f64,
    pub mean_deviation: f64,
}

/// Placeholder; completed with the ensemble module.
#[derive(Debug, Clone)]
pub enum FilterChoice {
    None,
}

pub fn rollout_filtered() {}
