//! Stage drivers shared by the command-line interface and the acceptance
//! suite: dataset generation, pool training, ensemble construction,
//! evaluation, and rollouts, all as pure functions of their inputs.

use crate::error::Result;
use crate::sim::label::UnlabeledTrajectory;
use crate::sim::{
    label_dataset, render_views_with, simulate_trajectory_full, FeatureFamily, FrozenBackbone,
    LabeledDataset, Policy, WorldConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How many trajectories to simulate, where, and with which policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_trajectories: usize,
    pub base_seed: u64,
    /// Regimes to simulate; trajectories are spread evenly across them.
    pub regimes: Vec<String>,
    /// Fraction of each regime's trajectories driven by the avoiding
    /// policy; the rest use the crash-prone nominal policy.
    pub avoiding_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_trajectories: 350,
            base_seed: 10_000,
            regimes: (0..7).map(|i| format!("r{i}")).collect(),
            avoiding_fraction: 0.5,
        }
    }
}

/// Simulate, render, and label the full dataset. Deterministic in
/// `(world, spec)`; trajectory generation is parallel across seeds.
pub fn generate_dataset(world: &WorldConfig, spec: &DatasetSpec) -> Result<LabeledDataset> {
    world.validate()?;
    if spec.regimes.is_empty() || spec.n_trajectories == 0 {
        return Err(crate::error::Error::config(
            "dataset spec needs regimes and a positive trajectory count",
        ));
    }
    let fam = FeatureFamily::primary(world);
    let n = spec.n_trajectories;
    let per_regime = n.div_ceil(spec.regimes.len());

    let jobs: Vec<(usize, String)> = (0..n)
        .map(|i| (i, spec.regimes[i / per_regime].clone()))
        .collect();

    let raw: Result<Vec<UnlabeledTrajectory>> = jobs
        .par_iter()
        .map(|(i, regime)| {
            let cfg = world.regime_variant(regime);
            let backbone = FrozenBackbone::new(&cfg, &fam);
            let seed = spec.base_seed + *i as u64;
            let pos_in_regime = i % per_regime;
            let policy = if (pos_in_regime as f64) < spec.avoiding_fraction * per_regime as f64 {
                Policy::Avoiding
            } else {
                Policy::Nominal
            };
            let (frames, collision) = simulate_trajectory_full(&cfg, policy, seed)?;
            let view_embeddings = frames
                .iter()
                .map(|f| render_views_with(f, &cfg, &backbone))
                .collect();
            Ok(UnlabeledTrajectory {
                frames,
                view_embeddings,
                collision_frame: collision,
                regime_id: regime.clone(),
                seed,
                policy,
            })
        })
        .collect();

    label_dataset(world.clone(), raw?)
}
