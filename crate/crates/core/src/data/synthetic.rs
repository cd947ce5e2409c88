use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{config, Result};
use crate::rng::{stream, Stream};

use super::LabeledDataset;

/// Isotropic Gaussian classes centred at `separation · e_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    /// Four well-separated 8-dimensional classes: under the semi-unsupervised
    /// split two of them are sparsely labelled and two never are.
    fn default() -> Self {
        Self {
            n_classes: 4,
            dim: 8,
            train_per_class: 500,
            test_per_class: 250,
            separation: 5.0,
            noise_std: 1.0,
        }
    }
}

fn draw<R: Rng>(spec: &SyntheticSpec, per_class: usize, rng: &mut R, name: &str) -> Result<LabeledDataset> {
    let n = spec.n_classes * per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    // Interleave classes so prefixes of the data are balanced.
    for i in 0..n {
        let c = i % spec.n_classes;
        for j in 0..spec.dim {
            let centre = if j == c { spec.separation } else { 0.0 };
            data.push(centre + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(c);
    }
    LabeledDataset::new(name, Tensor::matrix(n, spec.dim, data)?, labels, spec.n_classes)
}

/// Train and test splits of the synthetic fixture.
pub fn synthetic_sus(spec: &SyntheticSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.n_classes == 0 || spec.dim < spec.n_classes {
        return Err(config(format!(
            "synthetic fixture needs 1 <= classes <= dim, got {} classes in {} dims",
            spec.n_classes, spec.dim
        )));
    }
    let mut rng = stream(seed, Stream::Data);
    let train = draw(spec, spec.train_per_class, &mut rng, "synthetic")?;
    let test = draw(spec, spec.test_per_class, &mut rng, "synthetic")?;
    Ok((train, test))
}

/// Two Gaussian blobs at `±separation/2` along every axis.
pub fn gaussian_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    let mut rng = stream(seed, Stream::Data);
    let mut data = Vec::with_capacity(n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for &c in &labels {
        let centre = if c == 0 { -separation / 2.0 } else { separation / 2.0 };
        for _ in 0..dim {
            data.push(centre + rng.sample::<f64, _>(StandardNormal));
        }
    }
    LabeledDataset::new("blobs", Tensor::matrix(n, dim, data)?, labels, 2)
}
