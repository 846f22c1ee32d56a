use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SplitTag};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Labeled/unlabeled partition of the train records, both in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSplit {
    pub ratio: f64,
    pub seed: u64,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
}

/// Number of labeled samples for `ratio` of `n` (half-way cases round up).
pub fn labeled_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Draws `round(ratio * N)` labeled train records uniformly among those with
/// masks; the rest of the train set is unlabeled.
pub fn make_split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SemiSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1], got {ratio}")));
    }
    let train: Vec<_> = manifest.split(SplitTag::Train).collect();
    let k = labeled_count(ratio, train.len());
    if k == 0 {
        return Err(Error::Config(format!(
            "ratio {ratio} of {} train samples leaves no labeled samples",
            train.len()
        )));
    }
    let mut candidates: Vec<usize> = (0..train.len()).filter(|&i| train[i].mask.is_some()).collect();
    if candidates.len() < k {
        return Err(Error::Config(format!(
            "{k} labeled samples requested but only {} train records have masks",
            candidates.len()
        )));
    }
    let mut rng = SeedTree::new(seed).child("data").child("split").rng();
    candidates.shuffle(&mut rng);
    let mut chosen = vec![false; train.len()];
    for &i in &candidates[..k] {
        chosen[i] = true;
    }
    let (mut labeled, mut unlabeled) = (Vec::with_capacity(k), Vec::with_capacity(train.len() - k));
    for (r, is_labeled) in train.iter().zip(chosen) {
        if is_labeled {
            labeled.push(r.id.clone());
        } else {
            unlabeled.push(r.id.clone());
        }
    }
    Ok(SemiSplit {
        ratio,
        seed,
        labeled,
        unlabeled,
    })
}

impl SemiSplit {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Every id is a train record of `manifest`, labeled ids have masks, and
    /// the two lists are disjoint.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (id, labeled) in self
            .labeled
            .iter()
            .map(|id| (id, true))
            .chain(self.unlabeled.iter().map(|id| (id, false)))
        {
            if !seen.insert(id) {
                return Err(Error::Config(format!("split lists {id} twice")));
            }
            let record = manifest
                .get(id)
                .filter(|r| r.split == SplitTag::Train)
                .ok_or_else(|| Error::Config(format!("split id {id} is not a train record")))?;
            if labeled && record.mask.is_none() {
                return Err(Error::Config(format!("labeled id {id} has no mask")));
            }
        }
        Ok(())
    }
}
