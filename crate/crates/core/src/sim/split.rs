//! Dataset partitioning: regime-based in/out-of-distribution splits and the
//! deterministic train/val/test split by trajectory hash.

use super::label::LabeledDataset;
use super::stable_name_seed;
use crate::error::{Error, Result};
use std::collections::BTreeSet;

/// Split a dataset into in-distribution and out-of-distribution parts by
/// regime membership. The regime sets must be disjoint and both resulting
/// partitions must be non-empty.
pub fn split_ind_ood(
    dataset: &LabeledDataset,
    ind_regimes: &BTreeSet<String>,
    ood_regimes: &BTreeSet<String>,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if ind_regimes.is_empty() || ood_regimes.is_empty() {
        return Err(Error::Dataset("regime sets must be non-empty".into()));
    }
    if ind_regimes.intersection(ood_regimes).next().is_some() {
        return Err(Error::Dataset("regime sets overlap".into()));
    }
    let mut ind = LabeledDataset {
        base_config: dataset.base_config.clone(),
        trajectories: Vec::new(),
    };
    let mut ood = LabeledDataset {
        base_config: dataset.base_config.clone(),
        trajectories: Vec::new(),
    };
    for t in &dataset.trajectories {
        if ind_regimes.contains(&t.regime_id) {
            ind.trajectories.push(t.clone());
        } else if ood_regimes.contains(&t.regime_id) {
            ood.trajectories.push(t.clone());
        }
    }
    if ind.trajectories.is_empty() || ood.trajectories.is_empty() {
        return Err(Error::Dataset(
            "a regime partition matched no trajectories".into(),
        ));
    }
    Ok((ind, ood))
}

/// Index split of a dataset's trajectories.
#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 70/15/15 train/val/test split, deterministic in each trajectory's
/// identity (regime, seed, policy) and independent of dataset order.
pub fn train_val_test(dataset: &LabeledDataset) -> DataSplit {
    let mut split = DataSplit::default();
    for (i, t) in dataset.trajectories.iter().enumerate() {
        let key = format!("{}|{}|{:?}", t.regime_id, t.seed, t.policy);
        let h = stable_name_seed(&key);
        // Map to [0, 1) using the top 53 bits.
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < 0.70 {
            split.train.push(i);
        } else if u < 0.85 {
            split.val.push(i);
        } else {
            split.test.push(i);
        }
    }
    split
}

/// View of a dataset restricted to a subset of trajectory indices.
pub fn subset(dataset: &LabeledDataset, indices: &[usize]) -> LabeledDataset {
    LabeledDataset {
        base_config: dataset.base_config.clone(),
        trajectories: indices
            .iter()
            .map(|&i| dataset.trajectories[i].clone())
            .collect(),
    }
}
