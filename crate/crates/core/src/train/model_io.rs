//! Filter-model persistence: each model is one self-describing JSON
//! bundle (weights, method tag, metrics); a pool directory adds a
//! manifest listing members with their cell coordinates.

use super::pool::{PoolCell, PoolMember};
use super::FilterModel;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::Arc;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const POOL_MANIFEST_FILE: &str = "pool_manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ModelBundle {
    format_version: u32,
    config_hash: String,
    model: FilterModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub members: Vec<PoolManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolManifestEntry {
    pub file: String,
    pub cell: PoolCell,
}

pub fn save_model(path: &Path, model: &FilterModel, config_hash: &str) -> Result<()> {
    let bundle = ModelBundle {
        format_version: MODEL_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&bundle)? + "\n")?;
    Ok(())
}

/// Load a model bundle, checking format version and (when given) the
/// expected configuration hash.
pub fn load_model(path: &Path, expect_hash: Option<&str>) -> Result<FilterModel> {
    let bundle: ModelBundle = serde_json::from_str(
        &fs::read_to_string(path)
            .map_err(|_| Error::Stage(format!("missing model bundle {}", path.display())))?,
    )?;
    if bundle.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "model format {} unsupported",
            bundle.format_version
        )));
    }
    if let Some(h) = expect_hash {
        if bundle.config_hash != h {
            return Err(Error::Stage(format!(
                "model {} was built under config {}, expected {}",
                path.display(),
                bundle.config_hash,
                h
            )));
        }
    }
    bundle.model.validate()?;
    Ok(bundle.model)
}

/// Persist a trained pool as `member_NNN.json` files plus a manifest.
pub fn save_pool(dir: &Path, pool: &[PoolMember], config_hash: &str) -> Result<PoolManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(pool.len());
    for (i, m) in pool.iter().enumerate() {
        let file = format!("member_{i:03}.json");
        save_model(&dir.join(&file), &m.model, config_hash)?;
        entries.push(PoolManifestEntry {
            file,
            cell: PoolCell {
                method: m.method,
                family_name: m.family_name.clone(),
                replicate: m.replicate,
            },
        });
    }
    let manifest = PoolManifest {
        format_version: MODEL_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        members: entries,
    };
    fs::write(
        dir.join(POOL_MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Load a pool directory written by [`save_pool`].
pub fn load_pool(dir: &Path, expect_hash: Option<&str>) -> Result<Vec<PoolMember>> {
    let manifest: PoolManifest = serde_json::from_str(
        &fs::read_to_string(dir.join(POOL_MANIFEST_FILE))
            .map_err(|_| Error::Stage(format!("no pool manifest in {}", dir.display())))?,
    )?;
    if let Some(h) = expect_hash {
        if manifest.config_hash != h {
            return Err(Error::Stage(format!(
                "pool was built under config {}, expected {}",
                manifest.config_hash, h
            )));
        }
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    for e in &manifest.members {
        let model = load_model(&dir.join(&e.file), expect_hash)?;
        members.push(PoolMember {
            model: Arc::new(model),
            method: e.cell.method,
            family_name: e.cell.family_name.clone(),
            replicate: e.cell.replicate,
        });
    }
    Ok(members)
}
