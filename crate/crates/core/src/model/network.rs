use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::distributions::DiagGaussian;
use crate::error::{contract, Result};

use super::{Family, ModelSpec};

/// Parameter handles on one tape, keyed by parameter name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn new(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Forward passes of the classifier, encoder, decoder and latent prior.
pub struct Network<'a> {
    spec: &'a ModelSpec,
    params: &'a Bound,
}

impl<'a> Network<'a> {
    pub fn new(spec: &'a ModelSpec, params: &'a Bound) -> Self {
        Self { spec, params }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    fn dense(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    fn trunk(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let mut h = x;
        for i in 0..self.spec.hidden_layers {
            let pre = self.dense(tape, h, &format!("{prefix}.{i}"))?;
            h = self.spec.activation.apply(tape, pre);
        }
        Ok(h)
    }

    /// Unnormalised log-probabilities of `q(y|x)`.
    pub fn classifier_logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.trunk(tape, x, "rec.classifier")?;
        self.dense(tape, h, &format!("rec.classifier.{}", self.spec.hidden_layers))
    }

    /// `q(z|x,y)`; the mean and log-variance heads share the hidden trunk.
    pub fn encode(&self, tape: &mut Tape, x: Var, y: Var) -> Result<DiagGaussian> {
        let input = tape.concat(x, y)?;
        let h = self.trunk(tape, input, "rec.encoder")?;
        let mean = self.dense(tape, h, "rec.encoder.mean")?;
        let log_var = self.dense(tape, h, "rec.encoder.log_var")?;
        Ok(DiagGaussian { mean, log_var })
    }

    /// Raw decoder output: logits for Bernoulli data, the mean otherwise.
    /// The SSVAE decoder reads `[z; y]`, the GM-DGM decoder reads `z` only.
    pub fn decode(&self, tape: &mut Tape, z: Var, y: Var) -> Result<Var> {
        let input = match self.spec.family {
            Family::Ssvae => tape.concat(z, y)?,
            Family::GmDgm => z,
        };
        let h = self.trunk(tape, input, "gen.decoder")?;
        self.dense(tape, h, &format!("gen.decoder.{}", self.spec.hidden_layers))
    }

    /// Prior over `z` given (possibly relaxed) label rows `y`.
    ///
    /// For GM-DGM the table rows are mixed by the weights in `y`; with a
    /// one-hot `y` this selects exactly one component.
    pub fn latent_prior(&self, tape: &mut Tape, y: Var) -> Result<DiagGaussian> {
        let rows = tape.shape(y)[0];
        match self.spec.family {
            Family::Ssvae => Ok(DiagGaussian::standard(tape, &[rows, self.spec.z_dim])),
            Family::GmDgm => {
                let means = self.params.get("gen.prior.mean")?;
                let log_vars = self.params.get("gen.prior.log_var")?;
                let mean = tape.matmul(y, means)?;
                let log_var = tape.matmul(y, log_vars)?;
                Ok(DiagGaussian { mean, log_var })
            }
        }
    }
}
