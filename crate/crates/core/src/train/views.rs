//! Per-family view features over a labeled dataset, precomputed once and
//! shared read-only by all members of that family.

use crate::sim::{FeatureFamily, FrozenBackbone, LabeledDataset, SafetyLabel};
use serde::{Deserialize, Serialize};

/// A dataset's per-frame view features under one feature family, plus the
/// per-trajectory material training needs alongside them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyViews {
    pub family: FeatureFamily,
    /// `[trajectory][frame][view] -> features`
    pub views: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[trajectory][frame] -> logged control`
    pub controls: Vec<Vec<[f64; 2]>>,
    pub collision_frames: Vec<Option<usize>>,
    pub state_labels: Vec<Vec<SafetyLabel>>,
    pub control_labels: Vec<Vec<SafetyLabel>>,
    /// Simulation step of the source world.
    pub dt: f64,
}

impl FamilyViews {
    /// Extract or recompute the dataset's features under `family`. The
    /// primary family reuses the stored embeddings; any other family is
    /// rendered from the raw frames through its own frozen backbone.
    pub fn build(dataset: &LabeledDataset, family: &FeatureFamily) -> FamilyViews {
        let cfg = &dataset.base_config;
        let is_primary = *family == FeatureFamily::primary(cfg);
        let backbone = if is_primary {
            None
        } else {
            Some(FrozenBackbone::new(cfg, family))
        };
        let mut views = Vec::with_capacity(dataset.trajectories.len());
        let mut controls = Vec::with_capacity(dataset.trajectories.len());
        let mut collision_frames = Vec::with_capacity(dataset.trajectories.len());
        let mut state_labels = Vec::with_capacity(dataset.trajectories.len());
        let mut control_labels = Vec::with_capacity(dataset.trajectories.len());
        for t in &dataset.trajectories {
            let traj_views: Vec<Vec<Vec<f64>>> = match &backbone {
                None => t
                    .view_embeddings
                    .iter()
                    .map(|frame| frame.iter().map(|v| v.features.clone()).collect())
                    .collect(),
                Some(b) => t
                    .frames
                    .iter()
                    .map(|f| {
                        crate::sim::render_views_with(f, cfg, b)
                            .into_iter()
                            .map(|v| v.features)
                            .collect()
                    })
                    .collect(),
            };
            views.push(traj_views);
            controls.push(t.frames.iter().map(|f| f.control.to_array()).collect());
            collision_frames.push(t.collision_frame);
            state_labels.push(t.state_labels.clone());
            control_labels.push(t.control_labels.clone());
        }
        FamilyViews {
            family: family.clone(),
            views,
            controls,
            collision_frames,
            state_labels,
            control_labels,
            dt: cfg.dt,
        }
    }

    pub fn n_trajectories(&self) -> usize {
        self.views.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::label::{label_dataset, UnlabeledTrajectory};
    use crate::sim::{render_views, simulate_trajectory_full, Policy, WorldConfig};

    fn small_dataset() -> LabeledDataset {
        let mut cfg = WorldConfig::default();
        cfg.horizon = 12;
        cfg.n_obstacles = 5;
        let mut raw = Vec::new();
        for seed in 0..2u64 {
            let (frames, collision) =
                simulate_trajectory_full(&cfg, Policy::Avoiding, seed).unwrap();
            let embeddings = frames.iter().map(|f| render_views(f, &cfg)).collect();
            raw.push(UnlabeledTrajectory {
                frames,
                view_embeddings: embeddings,
                collision_frame: collision,
                regime_id: "r0".into(),
                seed,
                policy: Policy::Avoiding,
            });
        }
        label_dataset(cfg, raw).unwrap()
    }

    #[test]
    fn primary_family_reuses_stored_embeddings() {
        let ds = small_dataset();
        let fam = FeatureFamily::primary(&ds.base_config);
        let fv = FamilyViews::build(&ds, &fam);
        assert_eq!(fv.views[0][0][0], ds.trajectories[0].view_embeddings[0][0].features);
    }

    #[test]
    fn secondary_family_differs_but_matches_shape() {
        let ds = small_dataset();
        let fam_b = FeatureFamily::secondary(&ds.base_config);
        let fv_a = FamilyViews::build(&ds, &FeatureFamily::primary(&ds.base_config));
        let fv_b = FamilyViews::build(&ds, &fam_b);
        assert_eq!(fv_a.views.len(), fv_b.views.len());
        assert_eq!(fv_a.views[0].len(), fv_b.views[0].len());
        assert_eq!(fv_a.views[0][0].len(), fv_b.views[0][0].len());
        assert_ne!(fv_a.views[0][0][0], fv_b.views[0][0][0]);
    }
}
