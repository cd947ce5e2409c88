use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Normal;

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::rng::{stream, Stream};

use super::network::Bound;
use super::{Family, ModelSpec};

/// Standard deviation of the Gaussian used for every weight matrix and for
/// the GM-DGM prior means.
pub const INIT_STD: f64 = 0.001;

/// Named parameter tensors. Generative parameters live under `gen.`,
/// recognition parameters under `rec.`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn insert(&mut self, name: String, value: Tensor) {
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn generative(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter().filter(|(n, _)| n.starts_with("gen."))
    }

    pub fn recognition(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter().filter(|(n, _)| n.starts_with("rec."))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Registers every tensor on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Bound::new(vars)
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((n1, a), (n2, b))| {
                n1 == n2
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Layer widths `(input, output)` for the named dense layers of one network.
pub(crate) fn layer_shapes(spec: &ModelSpec) -> Vec<(String, usize, usize)> {
    let h = spec.hidden_units;
    let mut layers = Vec::new();
    let trunk = |prefix: &str, input: usize, layers: &mut Vec<(String, usize, usize)>| {
        let mut width = input;
        for i in 0..spec.hidden_layers {
            layers.push((format!("{prefix}.{i}"), width, h));
            width = h;
        }
    };

    trunk("rec.classifier", spec.x_dim, &mut layers);
    layers.push((format!("rec.classifier.{}", spec.hidden_layers), h, spec.y_dim));

    trunk("rec.encoder", spec.x_dim + spec.y_dim, &mut layers);
    layers.push(("rec.encoder.mean".into(), h, spec.z_dim));
    layers.push(("rec.encoder.log_var".into(), h, spec.z_dim));

    let decoder_in = match spec.family {
        Family::Ssvae => spec.z_dim + spec.y_dim,
        Family::GmDgm => spec.z_dim,
    };
    trunk("gen.decoder", decoder_in, &mut layers);
    layers.push((format!("gen.decoder.{}", spec.hidden_layers), h, spec.x_dim));
    layers
}

/// Initial parameters: weights `N(0, 0.001²)`, biases zero; for GM-DGM the
/// prior table means are `N(0, prior_init_std²)` and log-variances zero.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = stream(seed, Stream::Init);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut draw = |shape: &[usize]| -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(normal)).collect()).expect("shape")
    };

    let mut store = ParamStore::default();
    for (name, input, output) in layer_shapes(spec) {
        store.insert(format!("{name}.weight"), draw(&[input, output]));
        store.insert(format!("{name}.bias"), Tensor::zeros(&[output]));
    }
    if spec.family == Family::GmDgm {
        let scale = spec.prior_init_std / INIT_STD;
        let mean = draw(&[spec.y_dim, spec.z_dim]).map(|v| v * scale);
        store.insert("gen.prior.mean".into(), mean);
        store.insert("gen.prior.log_var".into(), Tensor::zeros(&[spec.y_dim, spec.z_dim]));
    }
    Ok(store)
}
