//! Safety labeling of simulated trajectories.
//!
//! Labeling rule: in a trajectory with a collision at frame `c`, frames
//! `c..` are unsafe states; the five frames before `c` are safe states
//! whose controls are unsafe; everything else (including all frames of
//! collision-free trajectories) is safe. If fewer than five frames precede
//! the collision, as many as exist get the unsafe-control label.

use super::embed::ViewEmbedding;
use super::{Policy, RawFrame};
use crate::error::{Error, Result};
use crate::sim::WorldConfig;
use serde::{Deserialize, Serialize};

/// Frames before a collision whose controls are labeled unsafe.
pub const UNSAFE_CONTROL_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

impl SafetyLabel {
    pub fn is_safe(self) -> bool {
        self == SafetyLabel::Safe
    }
}

/// One labeled trajectory: frames, per-frame view embeddings of the
/// primary feature family, and per-frame state/control labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub frames: Vec<RawFrame>,
    pub view_embeddings: Vec<Vec<ViewEmbedding>>,
    pub state_labels: Vec<SafetyLabel>,
    pub control_labels: Vec<SafetyLabel>,
    pub had_collision: bool,
    pub collision_frame: Option<usize>,
    pub regime_id: String,
    pub seed: u64,
    pub policy: Policy,
}

/// Label-class counts over a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub safe_states: usize,
    pub unsafe_states: usize,
    pub safe_controls: usize,
    pub unsafe_controls: usize,
}

impl LabelCounts {
    pub fn add(&mut self, other: LabelCounts) {
        self.safe_states += other.safe_states;
        self.unsafe_states += other.unsafe_states;
        self.safe_controls += other.safe_controls;
        self.unsafe_controls += other.unsafe_controls;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    /// Base world; per-regime variants derive from it.
    pub base_config: WorldConfig,
    pub trajectories: Vec<LabeledTrajectory>,
}

impl LabeledDataset {
    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for t in &self.trajectories {
            for l in &t.state_labels {
                if l.is_safe() {
                    c.safe_states += 1;
                } else {
                    c.unsafe_states += 1;
                }
            }
            for l in &t.control_labels {
                if l.is_safe() {
                    c.safe_controls += 1;
                } else {
                    c.unsafe_controls += 1;
                }
            }
        }
        c
    }

    pub fn regimes(&self) -> Vec<String> {
        let mut rs: Vec<String> = self
            .trajectories
            .iter()
            .map(|t| t.regime_id.clone())
            .collect();
        rs.sort();
        rs.dedup();
        rs
    }

    pub fn n_frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).sum()
    }
}

/// Compute state and control labels for one trajectory.
pub fn label_frames(n_frames: usize, collision_frame: Option<usize>) -> (Vec<SafetyLabel>, Vec<SafetyLabel>) {
    use SafetyLabel::*;
    let mut states = vec![Safe; n_frames];
    let mut controls = vec![Safe; n_frames];
    if let Some(c) = collision_frame {
        for s in states.iter_mut().skip(c) {
            *s = Unsafe;
        }
        let from = c.saturating_sub(UNSAFE_CONTROL_WINDOW);
        for u in controls.iter_mut().take(c).skip(from) {
            *u = Unsafe;
        }
    }
    (states, controls)
}

/// Raw material for labeling: a simulated trajectory plus its provenance.
pub struct UnlabeledTrajectory {
    pub frames: Vec<RawFrame>,
    pub view_embeddings: Vec<Vec<ViewEmbedding>>,
    pub collision_frame: Option<usize>,
    pub regime_id: String,
    pub seed: u64,
    pub policy: Policy,
}

/// Apply the labeling rule to a batch of simulated trajectories.
pub fn label_dataset(
    base_config: WorldConfig,
    raw: Vec<UnlabeledTrajectory>,
) -> Result<LabeledDataset> {
    let mut trajectories = Vec::with_capacity(raw.len());
    for r in raw {
        if r.frames.is_empty() {
            return Err(Error::Dataset("empty trajectory".into()));
        }
        if let Some(c) = r.collision_frame {
            if c >= r.frames.len() {
                return Err(Error::Dataset(format!(
                    "collision frame {c} outside trajectory of {} frames",
                    r.frames.len()
                )));
            }
        }
        let (state_labels, control_labels) = label_frames(r.frames.len(), r.collision_frame);
        trajectories.push(LabeledTrajectory {
            had_collision: r.collision_frame.is_some(),
            collision_frame: r.collision_frame,
            frames: r.frames,
            view_embeddings: r.view_embeddings,
            state_labels,
            control_labels,
            regime_id: r.regime_id,
            seed: r.seed,
            policy: r.policy,
        });
    }
    Ok(LabeledDataset {
        base_config,
        trajectories,
    })
}
