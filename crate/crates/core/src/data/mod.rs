//! Datasets: synthetic generators, IDX and CIFAR binary parsers and a native
//! cache format. Every feature lies in `[0, 1]`.

mod binary;
mod cache;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use binary::{load_cifar_binary, load_idx, parse_cifar_binary, parse_idx, CifarVariant, IdxArray};
pub use cache::{load_dataset, save_dataset};
pub use synthetic::{gen_blobs, gen_two_moons, two_moons_split, blobs_split, SYNTHETIC_RANGE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Labelled examples: features `[N, ...]` in `[0, 1]`, labels `< classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.shape().len() < 2 {
            return Err(Error::InvalidInput(format!(
                "features need a leading example axis, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::InvalidInput("dataset has no examples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape { expected: vec![features.rows()], got: vec![labels.len()] });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("features must lie in [0, 1]".into()));
        }
        Ok(Dataset { features, labels, classes, split })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single example.
    pub fn input_shape(&self) -> &[usize] {
        self.features.row_shape()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Gather a batch of examples by index.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.features.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `k` examples (all of them if `k >= len`).
    pub fn take(&self, k: usize) -> Result<Self> {
        let k = k.min(self.len());
        let idx: Vec<usize> = (0..k).collect();
        let (features, labels) = self.batch(&idx);
        Dataset::new(features, labels, self.classes, self.split)
    }

    /// Collapse each example to a flat vector, for dense networks.
    pub fn flattened(&self) -> Self {
        let d = self.features.row_len();
        let features =
            Tensor::from_parts_unchecked(vec![self.len(), d], self.features.data().to_vec());
        Dataset { features, ..self.clone() }
    }

    /// Number of examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let f = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(Dataset::new(f.clone(), vec![0, 1], 2, Split::Train).is_ok());
        assert!(Dataset::new(f.clone(), vec![0, 2], 2, Split::Train).is_err());
        assert!(Dataset::new(f, vec![0], 2, Split::Train).is_err());
        let out = Tensor::new(vec![1, 2], vec![1.2, 0.0]).unwrap();
        assert!(Dataset::new(out, vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(Tensor::zeros(vec![0, 2]), vec![], 2, Split::Train).is_err());
    }

    #[test]
    fn take_and_flatten() {
        let f = Tensor::new(vec![3, 1, 2], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let d = Dataset::new(f, vec![0, 1, 0], 2, Split::Test).unwrap();
        let t = d.take(2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.labels(), &[0, 1]);
        let flat = d.flattened();
        assert_eq!(flat.features().shape(), &[3, 2]);
        assert_eq!(flat.class_counts(), vec![2, 1]);
    }
}
