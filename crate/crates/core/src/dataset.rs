//! Featurized instances and train/test splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Bow,
    Embedding,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub index: usize,
    pub features: Features,
    pub label: u8,
    pub text: Option<String>,
}

impl Instance {
    pub fn new(index: usize, features: impl Into<Features>, label: u8) -> Self {
        Self {
            index,
            features: features.into(),
            label,
            text: None,
        }
    }

    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }
}

/// A split whose instance indices are exactly `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    kind: SplitKind,
    dim: usize,
    instances: Vec<Instance>,
}

impl DatasetSplit {
    /// Validates dimensions and labels, and renumbers nothing: the caller's
    /// indices must already be dense and in order.
    pub fn new(kind: SplitKind, dim: usize, instances: Vec<Instance>) -> Result<Self> {
        for (pos, inst) in instances.iter().enumerate() {
            if inst.index != pos {
                return Err(Error::Input(format!(
                    "instance at position {pos} has index {}; indices must be 0..N",
                    inst.index
                )));
            }
            if inst.label > 1 {
                return Err(Error::Input(format!(
                    "instance {pos} has non-binary label {}",
                    inst.label
                )));
            }
            if inst.features.dim() != dim {
                return Err(Error::Input(format!(
                    "instance {pos} has dimension {}, split declares {dim}",
                    inst.features.dim()
                )));
            }
        }
        Ok(Self {
            kind,
            dim,
            instances,
        })
    }

    /// Builds a split from features and labels, assigning indices in order.
    pub fn from_parts(
        kind: SplitKind,
        dim: usize,
        rows: impl IntoIterator<Item = (Features, u8)>,
    ) -> Result<Self> {
        let instances = rows
            .into_iter()
            .enumerate()
            .map(|(i, (f, y))| Instance::new(i, f, y))
            .collect();
        Self::new(kind, dim, instances)
    }

    pub fn kind(&self) -> SplitKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, index: usize) -> Option<&Instance> {
        self.instances.get(index)
    }

    pub fn instance(&self, index: usize) -> Result<&Instance> {
        self.get(index).ok_or_else(|| {
            Error::Input(format!(
                "index {index} out of range for {:?} split of size {}",
                self.kind,
                self.len()
            ))
        })
    }

    /// All instances, borrowed.
    pub fn rows(&self) -> Vec<&Instance> {
        self.instances.iter().collect()
    }

    /// Instances whose index is not in `removed` (which must be sorted).
    pub fn rows_without(&self, removed: &[usize]) -> Vec<&Instance> {
        debug_assert!(removed.windows(2).all(|w| w[0] < w[1]));
        self.instances
            .iter()
            .filter(|inst| removed.binary_search(&inst.index).is_err())
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.instances.iter().map(|i| i.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub feature_kind: FeatureKind,
}

impl DatasetSplits {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Sorts and deduplicates an index set, checking it against a split size.
pub fn normalize_indices(indices: &[usize], len: usize) -> Result<Vec<usize>> {
    let mut out = indices.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&i| i >= len) {
        return Err(Error::Input(format!(
            "train index {bad} out of range (train size {len})"
        )));
    }
    Ok(out)
}
