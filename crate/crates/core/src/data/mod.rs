//! Datasets, semantic descriptors, their on-disk formats, and the synthetic
//! orthogonal-subspace generator.

mod manifest;
mod pmx;
mod synth;

pub use manifest::{load_labels, load_manifest, save_labels, write_manifest, MANIFEST_KEYS};
pub use pmx::{decode_matrix, encode_matrix, load_matrix, save_matrix, MAGIC};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{check_dim, Error, Result};
use crate::numerics::Matrix;

/// Labeled samples, one per feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        check_dim("label count", features.rows(), labels.len())?;
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, l)| **l >= class_count) {
            return Err(Error::validation(
                "dataset",
                Some(row),
                format!("label {label} out of range for {class_count} classes"),
            ));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Classes with at least one sample, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.class_count).filter(|&c| seen[c]).collect()
    }

    /// The d×N_v matrix whose columns are the samples of `class`, in order.
    pub fn class_submatrix(&self, class: usize) -> Result<Matrix> {
        if class >= self.class_count {
            return Err(Error::ClassOutOfRange {
                class,
                class_count: self.class_count,
            });
        }
        let idx = self.class_indices(class);
        if idx.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        Ok(Matrix::from_fn(self.dim(), idx.len(), |r, c| self.features.get(idx[c], r)))
    }

    /// All samples as columns (d×N).
    pub fn column_matrix(&self) -> Matrix {
        self.features.transpose()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.class_count)
    }

    /// Same labels over a replacement feature matrix (e.g. encoder embeddings).
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        Dataset::new(features, self.labels.clone(), self.class_count)
    }
}

/// Per-class semantic descriptors with the seen/unseen partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpace {
    descriptors: Matrix,
    seen_mask: Vec<bool>,
}

impl SemanticSpace {
    pub fn new(descriptors: Matrix, seen_mask: Vec<bool>) -> Result<Self> {
        check_dim("seen mask length", descriptors.rows(), seen_mask.len())?;
        for c in 0..descriptors.rows() {
            if descriptors.row(c).iter().all(|v| *v == 0.0) {
                return Err(Error::validation("descriptors", Some(c), "descriptor row is all zero"));
            }
        }
        Ok(Self {
            descriptors,
            seen_mask,
        })
    }

    pub fn descriptors(&self) -> &Matrix {
        &self.descriptors
    }

    pub fn descriptor(&self, class: usize) -> &[f64] {
        self.descriptors.row(class)
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen_mask
    }

    pub fn class_count(&self) -> usize {
        self.seen_mask.len()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_mask[class]
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.class_count()).filter(|&c| self.seen_mask[c]).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.class_count()).filter(|&c| !self.seen_mask[c]).collect()
    }

    /// Checks the partition needed for generalized evaluation.
    pub fn require_both_partitions(&self) -> Result<()> {
        if self.seen_classes().is_empty() || self.unseen_classes().is_empty() {
            return Err(Error::validation(
                "seen_mask",
                None,
                "at least one seen and one unseen class are required",
            ));
        }
        Ok(())
    }

    /// Mean of the seen-class descriptors.
    pub fn mean_seen_descriptor(&self) -> Vec<f64> {
        let seen = self.seen_classes();
        let mut mean = vec![0.0; self.dim()];
        for &c in &seen {
            for (m, v) in mean.iter_mut().zip(self.descriptor(c)) {
                *m += v;
            }
        }
        let n = seen.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// The three evaluation splits plus descriptors, as described by a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ZslSplits {
    pub train: Dataset,
    pub test_seen: Dataset,
    pub test_unseen: Dataset,
    pub space: SemanticSpace,
}
