use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::dataset::ManifestRecord;
use crate::env::LightingId;
use crate::{Error, Result};

/// Illuminants reserved for test frames, and the pool train frames draw from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingHoldout {
    pub test_ids: Vec<LightingId>,
    pub train_ids: Vec<LightingId>,
}

impl LightingHoldout {
    /// Holds out `test_ids`; training draws from the rest of `variants`.
    pub fn new(test_ids: &[LightingId], variants: &[LightingId]) -> Result<Self> {
        for id in test_ids {
            if !variants.contains(id) {
                return Err(Error::Eval(format!("holdout lighting id {id} not in palette")));
            }
        }
        let train_ids: Vec<LightingId> = variants.iter().copied().filter(|id| !test_ids.contains(id)).collect();
        if test_ids.is_empty() || train_ids.is_empty() {
            return Err(Error::Eval("holdout must leave ids for both train and test".into()));
        }
        Ok(LightingHoldout {
            test_ids: test_ids.to_vec(),
            train_ids,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitItem {
    /// Index into the manifest.
    pub index: usize,
    /// Class index into [`Split::classes`]; 0 when unlabeled.
    pub label: usize,
    pub lighting: LightingId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<SplitItem>,
    pub test: Vec<SplitItem>,
    /// Sorted room labels.
    pub classes: Vec<String>,
}

/// Seeded train/test partition. With `labeled_only`, frames outside every
/// room are dropped first. With a holdout, lighting ids are reassigned.
pub fn split_dataset(
    records: &[ManifestRecord],
    fraction: f64,
    seed: u64,
    labeled_only: bool,
    holdout: Option<&LightingHoldout>,
) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Eval(format!("train fraction {fraction} outside (0, 1)")));
    }
    let classes: Vec<String> = records
        .iter()
        .filter_map(|r| r.room_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut items: Vec<SplitItem> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !labeled_only || r.room_label.is_some())
        .map(|(index, r)| SplitItem {
            index,
            label: r
                .room_label
                .as_ref()
                .map(|l| classes.binary_search(l).expect("label collected above"))
                .unwrap_or(0),
            lighting: r.lighting_id,
        })
        .collect();
    if items.len() < 2 {
        return Err(Error::Eval(format!("{} usable frames, need at least 2", items.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n_train = ((fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
    let test = items.split_off(n_train);
    let mut split = Split {
        train: items,
        test,
        classes,
    };
    if let Some(h) = holdout {
        for it in &mut split.train {
            it.lighting = h.train_ids[rng.random_range(0..h.train_ids.len())];
        }
        for it in &mut split.test {
            it.lighting = h.test_ids[rng.random_range(0..h.test_ids.len())];
        }
    }
    if labeled_only {
        for c in 0..split.classes.len() {
            if !split.train.iter().any(|it| it.label == c) {
                return Err(Error::Eval(format!("class {:?} has no training frames", split.classes[c])));
            }
        }
    }
    Ok(split)
}
