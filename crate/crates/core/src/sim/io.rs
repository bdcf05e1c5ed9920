//! Dataset persistence: a manifest plus one JSON-lines file with one
//! trajectory per line. Embeddings are stored as base64-encoded
//! little-endian f32 arrays to keep lines compact.

use super::embed::ViewEmbedding;
use super::label::{LabelCounts, LabeledDataset, LabeledTrajectory, SafetyLabel};
use super::{Policy, RawFrame, WorldConfig};
use crate::error::{Error, Result};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";

/// Dataset directory manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Hash of the pipeline configuration that produced the dataset.
    pub config_hash: String,
    pub world: WorldConfig,
    pub regimes: Vec<String>,
    pub n_trajectories: usize,
    pub n_frames: usize,
    pub label_counts: LabelCounts,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    regime_id: String,
    seed: u64,
    policy: Policy,
    had_collision: bool,
    collision_frame: Option<usize>,
    frames: Vec<RawFrame>,
    /// Per frame, per view: base64 little-endian f32 features.
    embeddings: Vec<Vec<String>>,
    state_labels: Vec<SafetyLabel>,
    control_labels: Vec<SafetyLabel>,
}

fn encode_features(features: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(features.len() * 4);
    for &f in features {
        bytes.extend_from_slice(&(f as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_features(s: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Dataset(format!("bad embedding blob: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Dataset("embedding blob length not f32-aligned".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Write a dataset directory (manifest + trajectory lines).
pub fn save_dataset(dir: &Path, dataset: &LabeledDataset, config_hash: &str) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        world: dataset.base_config.clone(),
        regimes: dataset.regimes(),
        n_trajectories: dataset.trajectories.len(),
        n_frames: dataset.n_frames(),
        label_counts: dataset.label_counts(),
    };
    let mut out = BufWriter::new(fs::File::create(dir.join(TRAJECTORIES_FILE))?);
    for t in &dataset.trajectories {
        let rec = TrajectoryRecord {
            regime_id: t.regime_id.clone(),
            seed: t.seed,
            policy: t.policy,
            had_collision: t.had_collision,
            collision_frame: t.collision_frame,
            frames: t.frames.clone(),
            embeddings: t
                .view_embeddings
                .iter()
                .map(|frame| frame.iter().map(|v| encode_features(&v.features)).collect())
                .collect(),
            state_labels: t.state_labels.clone(),
            control_labels: t.control_labels.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(LabeledDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|_| {
            Error::Stage(format!("no dataset manifest in {}", dir.display()))
        })?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "dataset format {} unsupported (expected {DATASET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let file = fs::File::open(dir.join(TRAJECTORIES_FILE))?;
    let mut trajectories = Vec::with_capacity(manifest.n_trajectories);
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)?;
        let view_embeddings: Vec<Vec<ViewEmbedding>> = rec
            .embeddings
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, blob)| {
                        Ok(ViewEmbedding {
                            view_index: i,
                            features: decode_features(blob)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(LabeledTrajectory {
            frames: rec.frames,
            view_embeddings,
            state_labels: rec.state_labels,
            control_labels: rec.control_labels,
            had_collision: rec.had_collision,
            collision_frame: rec.collision_frame,
            regime_id: rec.regime_id,
            seed: rec.seed,
            policy: rec.policy,
        });
    }
    if trajectories.len() != manifest.n_trajectories {
        return Err(Error::Dataset(format!(
            "manifest lists {} trajectories, file has {}",
            manifest.n_trajectories,
            trajectories.len()
        )));
    }
    Ok((
        LabeledDataset {
            base_config: manifest.world.clone(),
            trajectories,
        },
        manifest,
    ))
}
