use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{config, Result};

use super::LabeledDataset;

/// Choices made before fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Keep only dimensions whose training std exceeds this; 0 keeps all.
    pub std_threshold: f64,
    /// Rescale kept dimensions to zero mean and unit variance.
    pub standardize: bool,
    /// Resample binary inputs from the grey levels for every training batch.
    pub binarize_dynamic: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            std_threshold: 0.1,
            standardize: false,
            binarize_dynamic: true,
        }
    }
}

/// Preprocessing fit on a training split and reused verbatim for test data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub options: PreprocessOptions,
    /// Width of the raw feature vectors.
    pub input_dim: usize,
    pub kept_dims: Vec<usize>,
    /// Per kept dimension; empty unless standardising.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.shape()[1]);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, std)
}

pub fn fit_preprocess(train: &LabeledDataset, options: &PreprocessOptions) -> Result<PreprocessSpec> {
    if !(options.std_threshold >= 0.0) {
        return Err(config(format!("std threshold must be >= 0, got {}", options.std_threshold)));
    }
    if train.is_empty() {
        return Err(config("cannot fit preprocessing on an empty dataset"));
    }
    let (mean, std) = column_stats(&train.features);
    let kept_dims: Vec<usize> = (0..std.len())
        .filter(|&j| options.std_threshold == 0.0 || std[j] > options.std_threshold)
        .collect();
    if kept_dims.is_empty() {
        return Err(config(format!(
            "no feature has std above {}; nothing left to model",
            options.std_threshold
        )));
    }
    let (mean, scale) = if options.standardize {
        (
            kept_dims.iter().map(|&j| mean[j]).collect(),
            kept_dims.iter().map(|&j| if std[j] > 0.0 { std[j] } else { 1.0 }).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(PreprocessSpec {
        options: options.clone(),
        input_dim: train.x_dim(),
        kept_dims,
        mean,
        scale,
    })
}

pub fn apply_preprocess(ds: &LabeledDataset, spec: &PreprocessSpec) -> Result<LabeledDataset> {
    if ds.x_dim() != spec.input_dim {
        return Err(config(format!(
            "`{}` has {} features but the preprocessing was fit on {}",
            ds.name,
            ds.x_dim(),
            spec.input_dim
        )));
    }
    let d = spec.kept_dims.len();
    let mut data = Vec::with_capacity(ds.len() * d);
    for i in 0..ds.len() {
        let row = ds.features.row(i);
        for (k, &j) in spec.kept_dims.iter().enumerate() {
            let v = row[j];
            data.push(if spec.options.standardize { (v - spec.mean[k]) / spec.scale[k] } else { v });
        }
    }
    Ok(LabeledDataset {
        name: ds.name.clone(),
        features: Tensor::matrix(ds.len(), d, data)?,
        labels: ds.labels.clone(),
        n_gt: ds.n_gt,
    })
}

impl PreprocessSpec {
    pub fn output_dim(&self) -> usize {
        self.kept_dims.len()
    }

    /// Maps a processed row back to the raw layout; dropped dimensions are 0.
    pub fn expand(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim];
        for (k, (&j, &v)) in self.kept_dims.iter().zip(row).enumerate() {
            out[j] = if self.options.standardize { v * self.scale[k] + self.mean[k] } else { v };
        }
        out
    }
}
