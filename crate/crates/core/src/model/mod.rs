//! SSVAE and GM-DGM networks and their variational objectives.
//!
//! Both families share the recognition model `q(y|x) q(z|x,y)` and differ
//! only in the generative side:
//!
//! * SSVAE: `p(x|y,z) p(y) p(z)` with `p(z) = N(0, I)`.
//! * GM-DGM: `p(x|z) p(z|y) p(y)` with a learned per-class lookup table for
//!   the mean and log-variance of `p(z|y)`.

mod checkpoint;
mod network;
mod objective;
mod params;
mod prior;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor};
use crate::distributions::{CategoricalParams, Likelihood};
use crate::error::{config, Error, Result};

pub use checkpoint::Checkpoint;
pub use network::{Bound, Network};
pub use objective::{
    elbo_labelled, elbo_unlabelled, total_objective, LabelledNoise, Objective, ObjectiveValue,
    UnlabelledNoise,
};
pub use params::{build_model, ParamStore, INIT_STD};
pub use prior::{build_class_prior, ClassPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ssvae,
    GmDgm,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssvae" | "m2" => Ok(Family::Ssvae),
            "gm-dgm" | "gmdgm" => Ok(Family::GmDgm),
            other => Err(config(format!("unknown model family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Ssvae => "ssvae",
            Family::GmDgm => "gm-dgm",
        })
    }
}

/// How the Gaussian KL term of the ELBO is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    /// Closed form between diagonal Gaussians.
    #[default]
    Analytic,
    /// Single-sample `log q(z) - log p(z)` at the reparameterised draw.
    MonteCarlo,
}

/// Declarative description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub x_dim: usize,
    pub z_dim: usize,
    pub y_dim: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
    /// Weight of the labelled cross-entropy term.
    pub alpha: f64,
    pub prior: ClassPrior,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    pub kl_mode: KlMode,
    /// Standard deviation of the GM-DGM prior table means at initialisation.
    #[serde(default = "default_prior_init_std")]
    pub prior_init_std: f64,
}

fn default_prior_init_std() -> f64 {
    ModelSpec::DEFAULT_PRIOR_INIT_STD
}

impl ModelSpec {
    pub const DEFAULT_TEMPERATURE: f64 = 0.5;
    /// Table means drawn as small as the network weights leave every
    /// component at the origin, and the classifier never breaks the symmetry.
    pub const DEFAULT_PRIOR_INIT_STD: f64 = 1.0;

    /// A spec with two hidden layers, ReLU, analytic KL, τ = 0.5 and a
    /// uniform prior over `y_dim` classes.
    pub fn new(family: Family, x_dim: usize, z_dim: usize, y_dim: usize, hidden_units: usize) -> Result<Self> {
        Ok(Self {
            family,
            x_dim,
            z_dim,
            y_dim,
            hidden_units,
            hidden_layers: 2,
            activation: Activation::Relu,
            likelihood: Likelihood::Bernoulli,
            alpha: 0.0,
            prior: ClassPrior::uniform(y_dim)?,
            temperature: Self::DEFAULT_TEMPERATURE,
            kl_mode: KlMode::Analytic,
            prior_init_std: Self::DEFAULT_PRIOR_INIT_STD,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("x_dim", self.x_dim),
            ("z_dim", self.z_dim),
            ("y_dim", self.y_dim),
            ("hidden_units", self.hidden_units),
            ("hidden_layers", self.hidden_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be positive")));
            }
        }
        if self.prior.len() != self.y_dim {
            return Err(config(format!(
                "class prior has {} entries but y_dim is {}",
                self.prior.len(),
                self.y_dim
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(config(format!("alpha must be a finite non-negative number, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.prior_init_std >= 0.0 && self.prior_init_std.is_finite()) {
            return Err(config(format!("prior_init_std must be finite and non-negative, got {}", self.prior_init_std)));
        }
        self.likelihood.validate()
    }
}

/// A spec together with its live parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = build_model(&spec, seed)?;
        Ok(Self { spec, params })
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.spec.x_dim {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: vec![x.rows(), self.spec.x_dim],
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `q(y|x)` for every row of `x`.
    pub fn classify(&self, x: &Tensor) -> Result<CategoricalParams> {
        self.check_x(x)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let net = Network::new(&self.spec, &bound);
        let xv = tape.constant(x.clone());
        let logits = net.classifier_logits(&mut tape, xv)?;
        let probs = tape.softmax(logits);
        Ok(CategoricalParams::new(tape.value(probs).clone()).expect("softmax rows are normalised"))
    }

    /// Mean of `q(z|x,y)` for the given (possibly relaxed) label rows.
    pub fn posterior_mean(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        self.check_x(x)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let net = Network::new(&self.spec, &bound);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let q = net.encode(&mut tape, xv, yv)?;
        Ok(tape.value(q.mean).clone())
    }

    /// Mean of `p(x|·)` for latent rows `z` and label rows `y`.
    pub fn decode_mean(&self, z: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let net = Network::new(&self.spec, &bound);
        let zv = tape.constant(z.clone());
        let yv = tape.constant(y.clone());
        let out = net.decode(&mut tape, zv, yv)?;
        Ok(self.spec.likelihood.mean(tape.value(out)))
    }

    /// Per-row labelled ELBO values.
    pub fn elbo_labelled(&self, x: &Tensor, y: &Tensor, noise: &LabelledNoise) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let net = Network::new(&self.spec, &bound);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let e = elbo_labelled(&mut tape, &net, xv, yv, noise)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Per-row unlabelled ELBO values.
    pub fn elbo_unlabelled(&self, x: &Tensor, noise: &UnlabelledNoise) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let net = Network::new(&self.spec, &bound);
        let xv = tape.constant(x.clone());
        let e = elbo_unlabelled(&mut tape, &net, xv, noise)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Objective value and its gradient (ascent direction) with respect to
    /// every parameter.
    pub fn objective_with_grads(
        &self,
        labelled: Option<(&Tensor, &Tensor, &LabelledNoise)>,
        unlabelled: Option<(&Tensor, &UnlabelledNoise)>,
    ) -> Result<(ObjectiveValue, ParamStore)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let net = Network::new(&self.spec, &bound);
        let lab = match labelled {
            Some((x, y, noise)) => {
                self.check_x(x)?;
                Some((tape.constant(x.clone()), tape.constant(y.clone()), noise))
            }
            None => None,
        };
        let unl = match unlabelled {
            Some((x, noise)) => {
                self.check_x(x)?;
                Some((tape.constant(x.clone()), noise))
            }
            None => None,
        };
        let obj = total_objective(&mut tape, &net, lab, unl)?;
        let value = obj.value(&tape);
        tape.backward(obj.total)?;
        let mut grads = ParamStore::default();
        for (name, var) in bound.iter() {
            grads.insert(name.clone(), tape.grad(*var)?);
        }
        Ok((value, grads))
    }
}

/// One-hot rows for the given class ids.
pub fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &c) in labels.iter().enumerate() {
        t.data_mut()[i * k + c] = 1.0;
    }
    t
}

#[cfg(test)]
mod tests;
