//! Dataset ingestion, preprocessing and label-regime construction.

mod binarize;
mod idx;
mod preprocess;
mod regime;
mod synthetic;
mod tabular;

pub use binarize::binarize_batch;
pub use idx::{encode_idx_images, encode_idx_labels, load_idx_images, parse_idx_images, parse_idx_labels};
pub use preprocess::{apply_preprocess, fit_preprocess, PreprocessOptions, PreprocessSpec};
pub use regime::{build_regime, default_labelled_classes, Regime, RegimeDataset, RegimeOptions};
pub use synthetic::{gaussian_blobs, synthetic_sus, SyntheticSpec};
pub use tabular::{load_tabular, TabularOptions};

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::error::{contract, Result};
use crate::rng::{stream, Stream};

/// Feature matrix with ground-truth class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    /// `[N, x_dim]`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_gt: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, n_gt: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(contract(format!("features must be a matrix, got shape {:?}", features.shape())));
        }
        if features.rows() != labels.len() {
            return Err(contract(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_gt) {
            return Err(contract(format!("label {bad} out of range for {n_gt} classes")));
        }
        if !features.is_finite() {
            return Err(contract("features contain NaN or infinite values"));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            n_gt,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_gt: self.n_gt,
        }
    }

    /// Examples whose class is in `classes`, in original order.
    pub fn restrict_to_classes(&self, classes: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&keep)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_gt];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// A seeded uniform subsample of `n` examples (all of them if `n >= N`),
    /// returned in original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(seed, Stream::Data));
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }
}
