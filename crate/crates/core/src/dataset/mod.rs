//! Labeled data: IDX ingestion, a synthetic stand-in, non-i.i.d. partitioning
//! across nodes, and the class-drift schedule that gradually introduces new
//! classes into a node's effective data.

mod drift;
mod idx;
mod partition;
mod synth;

pub use drift::{drift_view, drift_view_indices, DriftSchedule};
pub use idx::{
    load_idx_images, load_idx_labels, load_mnist_dir, write_idx_images, write_idx_labels, ImageSet,
    MnistSplit, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
pub use partition::{partition, partition_indices, PartitionSpec, PartitionStrategy};
pub use synth::synth_blobs;

use crate::error::{Error, Result};
use crate::model::Matrix;

/// Feature rows in `[0, 1]` with class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Domain("num_classes must be positive".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Domain(format!(
                "label {y} at row {i} is out of range for {num_classes} classes"
            )));
        }
        if let Some(v) = features
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!("feature value {v} outside [0, 1]")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}
