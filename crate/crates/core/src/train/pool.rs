//! Pool training: one member per (method, family, replicate) cell, with
//! per-replicate seeds and jittered hyperparameters. Members train
//! independently and in parallel; the dataset views are shared read-only.

use super::member::{train_member, MemberSpec};
use super::views::FamilyViews;
use super::{FilterModel, HeadGeometry, TrainConfig, TrainMethod};
use crate::error::Result;
use crate::sim::{stable_name_seed, DataSplit, FeatureFamily, LabeledDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// What to train: the grid of methods and feature families, replicates
/// per cell, and the head geometry.
#[derive(Debug, Clone)]
pub struct PoolSpec {
    pub methods: Vec<TrainMethod>,
    pub families: Vec<FeatureFamily>,
    pub n_per_cell: usize,
    pub geometry: HeadGeometry,
    /// Shared optimizer knobs. The unsafe-action weight and the class-K
    /// slope come from the per-method recipe, not from this value.
    pub base_train: TrainConfig,
    pub base_seed: u64,
}

impl PoolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_cell == 0 {
            return Err(crate::error::Error::config("n_per_cell must be >= 1"));
        }
        if self.methods.is_empty() || self.families.is_empty() {
            return Err(crate::error::Error::config(
                "pool needs at least one method and one family",
            ));
        }
        self.base_train.validate()
    }
}

/// One trained pool entry with its cell coordinates.
#[derive(Debug, Clone)]
pub struct PoolMember {
    pub model: Arc<FilterModel>,
    pub method: TrainMethod,
    pub family_name: String,
    pub replicate: usize,
}

/// Cell coordinates in serializable form (for the pool manifest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolCell {
    pub method: TrainMethod,
    pub family_name: String,
    pub replicate: usize,
}

/// Derive the member spec for one (method, family, replicate) cell:
/// a unique seed plus jittered learning rate and margin on top of the
/// per-method recipe.
pub fn member_spec_for_cell(
    pool: &PoolSpec,
    method: TrainMethod,
    family: &FeatureFamily,
    replicate: usize,
) -> MemberSpec {
    let cell_key = format!("{}|{}|{}", method.name(), family.name, replicate);
    let seed = pool.base_seed ^ stable_name_seed(&cell_key);
    let mut jitter_rng = ChaCha12Rng::seed_from_u64(seed ^ 0x7e57_7e57);
    let mut train = pool.base_train.clone();
    train.seed = seed;
    train.lambda_unsafe = MemberSpec::method_lambda(method);
    train.learning_rate *= jitter_rng.gen_range(0.85..1.2);
    train.margin *= jitter_rng.gen_range(0.9..1.1);
    let mut spec = MemberSpec::new(method, family.clone(), train);
    spec.geometry = pool.geometry;
    spec.gamma_alpha = MemberSpec::method_gamma_alpha(method);
    spec
}

/// Train the full grid. Feature views are computed once per family;
/// members train in parallel with per-member seeds, so results do not
/// depend on scheduling.
pub fn train_member_pool(
    dataset: &LabeledDataset,
    split: &DataSplit,
    pool: &PoolSpec,
) -> Result<Vec<PoolMember>> {
    pool.validate()?;
    let family_views: Vec<FamilyViews> = pool
        .families
        .iter()
        .map(|f| FamilyViews::build(dataset, f))
        .collect();

    let mut jobs = Vec::new();
    for (fi, family) in pool.families.iter().enumerate() {
        for &method in &pool.methods {
            for replicate in 0..pool.n_per_cell {
                jobs.push((fi, method, family.clone(), replicate));
            }
        }
    }

    let members: Result<Vec<PoolMember>> = jobs
        .par_iter()
        .map(|(fi, method, family, replicate)| {
            let spec = member_spec_for_cell(pool, *method, family, *replicate);
            let model = train_member(&family_views[*fi], split, &spec)?;
            Ok(PoolMember {
                model: Arc::new(model),
                method: *method,
                family_name: family.name.clone(),
                replicate: *replicate,
            })
        })
        .collect();
    members
}

/// Select pool members by method and family names. Empty selectors accept
/// everything.
pub fn select_members<'a>(
    pool: &'a [PoolMember],
    methods: &[TrainMethod],
    family_names: &[String],
) -> Vec<&'a PoolMember> {
    pool.iter()
        .filter(|m| methods.is_empty() || methods.contains(&m.method))
        .filter(|m| family_names.is_empty() || family_names.contains(&m.family_name))
        .collect()
}
