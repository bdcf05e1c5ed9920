//! Frozen multi-view feature extraction.
//!
//! Each view covers an angular sector around the ego. Per-view ray
//! proximities are passed through a fixed, seeded two-layer tanh
//! projection that is generated once and never trained — a stand-in for a
//! frozen perception backbone. Distinct feature families (different seeds
//! and widths) provide the feature-diversity axis for ensembles.

use super::{RawFrame, WorldConfig};
use crate::math::{ray_disk_intersection, Vec2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Embedding of one view at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEmbedding {
    pub view_index: usize,
    pub features: Vec<f64>,
}

/// Identity of a frozen feature extractor. Families with different seeds
/// or widths produce distinct feature spaces over the same rays.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureFamily {
    pub name: String,
    pub embed_seed: u64,
    /// Hidden width of the frozen projection.
    pub proj_hidden: usize,
}

impl FeatureFamily {
    /// The family whose embeddings are stored with a dataset.
    pub fn primary(cfg: &WorldConfig) -> FeatureFamily {
        FeatureFamily {
            name: "fam-a".to_string(),
            embed_seed: cfg.embed_seed,
            proj_hidden: 32,
        }
    }

    /// A second family over the same rays: different seed, wider hidden
    /// layer. Stands in for a second pre-trained backbone.
    pub fn secondary(cfg: &WorldConfig) -> FeatureFamily {
        FeatureFamily {
            name: "fam-b".to_string(),
            embed_seed: cfg.embed_seed.wrapping_add(101),
            proj_hidden: 48,
        }
    }
}

/// Fixed random two-layer tanh projection from ray proximities to
/// features. Generated once from the family seed; identical across all
/// frames and trajectories.
#[derive(Debug, Clone)]
pub struct FrozenBackbone {
    pub family: FeatureFamily,
    pub rays_per_view: usize,
    pub embed_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl FrozenBackbone {
    pub fn new(cfg: &WorldConfig, family: &FeatureFamily) -> FrozenBackbone {
        let (n_in, hidden, n_out) = (cfg.rays_per_view, family.proj_hidden, cfg.embed_dim);
        let mut rng = ChaCha12Rng::seed_from_u64(family.embed_seed ^ 0x8f1bbcdc0b5c1ed3);
        let d1 = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).unwrap();
        let d2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).unwrap();
        let w1: Vec<f64> = (0..hidden * n_in).map(|_| d1.sample(&mut rng)).collect();
        let b1: Vec<f64> = (0..hidden).map(|_| 0.3 * d1.sample(&mut rng)).collect();
        let w2: Vec<f64> = (0..n_out * hidden).map(|_| d2.sample(&mut rng)).collect();
        let b2: Vec<f64> = (0..n_out).map(|_| 0.3 * d2.sample(&mut rng)).collect();
        FrozenBackbone {
            family: family.clone(),
            rays_per_view: n_in,
            embed_dim: n_out,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Project one view's ray proximities to its feature vector.
    pub fn project(&self, proximities: &[f64]) -> Vec<f64> {
        assert_eq!(proximities.len(), self.rays_per_view);
        let hidden = self.b1.len();
        let mut h = vec![0.0; hidden];
        for i in 0..hidden {
            let mut s = self.b1[i];
            for j in 0..self.rays_per_view {
                s += self.w1[i * self.rays_per_view + j] * proximities[j];
            }
            h[i] = s.tanh();
        }
        let mut out = vec![0.0; self.embed_dim];
        for i in 0..self.embed_dim {
            let mut s = self.b2[i];
            for j in 0..hidden {
                s += self.w2[i * hidden + j] * h[j];
            }
            out[i] = s.tanh();
        }
        out
    }
}

/// Ray directions of one view: evenly spaced across the view's sector,
/// cell-centered so adjacent views do not share boundary rays.
pub fn view_ray_angles(cfg: &WorldConfig, view: usize) -> Vec<f64> {
    let center = std::f64::consts::TAU * view as f64 / cfg.n_views as f64;
    let k = cfg.rays_per_view;
    (0..k)
        .map(|j| center - cfg.view_fov / 2.0 + cfg.view_fov * (j as f64 + 0.5) / k as f64)
        .collect()
}

/// Per-ray proximity readings in `[0, 1]`: 0 means clear to sensor range,
/// 1 means touching. Only obstacle disks reflect rays; walls do not.
pub fn ray_proximities(frame: &RawFrame, cfg: &WorldConfig, view: usize) -> Vec<f64> {
    let origin = frame.ego_position;
    view_ray_angles(cfg, view)
        .iter()
        .map(|&theta| {
            let dir = Vec2::from_angle(theta);
            let mut range = cfg.sensor_range;
            for (pos, _) in &frame.obstacle_states {
                if let Some(d) = ray_disk_intersection(origin, dir, *pos, cfg.obstacle_radius) {
                    range = range.min(d);
                }
            }
            1.0 - range / cfg.sensor_range
        })
        .collect()
}

/// Render every view of a frame through the given frozen backbone.
pub fn render_views_with(
    frame: &RawFrame,
    cfg: &WorldConfig,
    backbone: &FrozenBackbone,
) -> Vec<ViewEmbedding> {
    (0..cfg.n_views)
        .map(|view| ViewEmbedding {
            view_index: view,
            features: backbone.project(&ray_proximities(frame, cfg, view)),
        })
        .collect()
}

/// Render with the primary feature family (the one stored in datasets).
pub fn render_views(frame: &RawFrame, cfg: &WorldConfig) -> Vec<ViewEmbedding> {
    let backbone = FrozenBackbone::new(cfg, &FeatureFamily::primary(cfg));
    render_views_with(frame, cfg, &backbone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_trajectory, Policy};

    fn empty_frame(cfg: &WorldConfig) -> RawFrame {
        let (start, _) = cfg.start_and_goal();
        RawFrame {
            ego_position: start,
            ego_velocity: Vec2::ZERO,
            obstacle_states: vec![],
            control: Vec2::ZERO,
            time_index: 0,
        }
    }

    #[test]
    fn no_obstacles_projects_the_clear_ray_vector() {
        let cfg = WorldConfig::default();
        let backbone = FrozenBackbone::new(&cfg, &FeatureFamily::primary(&cfg));
        let f1 = empty_frame(&cfg);
        let mut f2 = empty_frame(&cfg);
        f2.ego_position = Vec2::new(3.0, -2.0);
        f2.time_index = 9;
        let e1 = render_views_with(&f1, &cfg, &backbone);
        let e2 = render_views_with(&f2, &cfg, &backbone);
        // Clear in every sector: the embedding equals the projection of
        // the max-range (zero-proximity) ray vector and is identical
        // across frames.
        let expected = backbone.project(&vec![0.0; cfg.rays_per_view]);
        for e in e1.iter().chain(e2.iter()) {
            assert_eq!(e.features, expected);
        }
        assert_eq!(e1, e2);
    }

    #[test]
    fn different_embed_seed_different_features() {
        let cfg = WorldConfig::default();
        let fam_a = FeatureFamily::primary(&cfg);
        let fam_b = FeatureFamily {
            name: "other".into(),
            embed_seed: cfg.embed_seed + 1,
            proj_hidden: fam_a.proj_hidden,
        };
        let ba = FrozenBackbone::new(&cfg, &fam_a);
        let bb = FrozenBackbone::new(&cfg, &fam_b);
        let (frames, _) = simulate_trajectory(&cfg, Policy::Nominal, 3).unwrap();
        let ea = render_views_with(&frames[10], &cfg, &ba);
        let eb = render_views_with(&frames[10], &cfg, &bb);
        assert_ne!(ea[0].features, eb[0].features);
    }

    #[test]
    fn perturbing_one_sector_only_changes_that_view() {
        let cfg = WorldConfig::default();
        let backbone = FrozenBackbone::new(&cfg, &FeatureFamily::primary(&cfg));
        // Obstacle dead-center in view 2's sector, close enough to hit
        // several of its rays and none of any other view's.
        let center_angle = std::f64::consts::TAU * 2.0 / cfg.n_views as f64;
        let mut frame = empty_frame(&cfg);
        let base_pos = frame.ego_position + Vec2::from_angle(center_angle) * 5.0;
        frame.obstacle_states = vec![(base_pos, Vec2::ZERO)];
        let before = render_views_with(&frame, &cfg, &backbone);

        let mut moved = frame.clone();
        moved.obstacle_states[0].0 = frame.ego_position + Vec2::from_angle(center_angle) * 4.0;
        let after = render_views_with(&moved, &cfg, &backbone);

        for v in 0..cfg.n_views {
            if v == 2 {
                assert_ne!(before[v].features, after[v].features);
            } else {
                assert_eq!(before[v].features, after[v].features, "view {v} changed");
            }
        }
    }

    #[test]
    fn embeddings_are_finite_and_sized() {
        let cfg = WorldConfig::default();
        let (frames, _) = simulate_trajectory(&cfg, Policy::Nominal, 11).unwrap();
        let views = render_views(&frames[5], &cfg);
        assert_eq!(views.len(), cfg.n_views);
        for (i, v) in views.iter().enumerate() {
            assert_eq!(v.view_index, i);
            assert_eq!(v.features.len(), cfg.embed_dim);
            assert!(v.features.iter().all(|f| f.is_finite()));
        }
    }

    #[test]
    fn proximity_rises_as_obstacle_nears() {
        let cfg = WorldConfig::default();
        let mut frame = empty_frame(&cfg);
        // Straight ahead is the middle of view 0.
        let near = frame.ego_position + Vec2::new(2.0, 0.0);
        let far = frame.ego_position + Vec2::new(9.0, 0.0);
        frame.obstacle_states = vec![(far, Vec2::ZERO)];
        let p_far: f64 = ray_proximities(&frame, &cfg, 0).iter().cloned().fold(0.0, f64::max);
        frame.obstacle_states = vec![(near, Vec2::ZERO)];
        let p_near: f64 = ray_proximities(&frame, &cfg, 0).iter().cloned().fold(0.0, f64::max);
        assert!(p_near > p_far && p_far > 0.0);
    }
}
