use crate::autodiff::{Tape, Tensor, Var};
use crate::distributions::{gaussian_logpdf, gumbel_softmax_sample, kl_diag_gaussians, reparam_sample, DiagGaussian};
use crate::error::{contract, Error, Result};

use super::network::Network;
use super::KlMode;

/// Standard-normal draws for the `z` reparameterisation, `[rows, z_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledNoise {
    pub z: Tensor,
}

/// Noise for one unlabelled batch: `z` draws plus `(0, 1)` uniforms
/// `[rows, y_dim]` for the Gumbel-Softmax sample.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabelledNoise {
    pub z: Tensor,
    pub gumbel: Tensor,
}

/// Handles to the scalar objective and its monitored pieces.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    /// Quantity to maximise.
    pub total: Var,
    /// Mean `-log q(y|x)` over the labelled batch.
    pub cross_entropy: Option<Var>,
    pub labelled_elbo: Option<Var>,
    pub unlabelled_elbo: Option<Var>,
}

/// Plain values read off an [`Objective`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub cross_entropy: Option<f64>,
    pub labelled_elbo: Option<f64>,
    pub unlabelled_elbo: Option<f64>,
}

impl Objective {
    pub fn value(&self, tape: &Tape) -> ObjectiveValue {
        let read = |v: Option<Var>| v.map(|v| tape.value(v).item());
        ObjectiveValue {
            total: tape.value(self.total).item(),
            cross_entropy: read(self.cross_entropy),
            labelled_elbo: read(self.labelled_elbo),
            unlabelled_elbo: read(self.unlabelled_elbo),
        }
    }
}

/// `E_q[log p(y)]` style term: row-wise dot product of `weights` with the
/// constant log-prior.
fn expected_log_prior(tape: &mut Tape, net: &Network, weights: Var) -> Result<Var> {
    let rows = tape.shape(weights)[0];
    let log_prior = net.spec().prior.log_probs();
    let lp = tape.constant(Tensor::matrix(rows, log_prior.len(), log_prior.repeat(rows))?);
    let prod = tape.mul(weights, lp)?;
    Ok(tape.sum_last(prod))
}

/// `KL(q(z|x,y) ‖ p(z|y))`, analytic or as a one-sample log ratio at `z`.
fn latent_kl(tape: &mut Tape, mode: KlMode, q: &DiagGaussian, p: &DiagGaussian, z: Var) -> Result<Var> {
    match mode {
        KlMode::Analytic => kl_diag_gaussians(tape, q, p),
        KlMode::MonteCarlo => {
            let lq = gaussian_logpdf(tape, z, q)?;
            let lp = gaussian_logpdf(tape, z, p)?;
            tape.sub(lq, lp)
        }
    }
}

/// Reconstruction and latent-KL part shared by both ELBO branches.
fn reconstruction_minus_kl(tape: &mut Tape, net: &Network, x: Var, y: Var, z_noise: &Tensor) -> Result<Var> {
    let spec = net.spec();
    let q = net.encode(tape, x, y)?;
    let z = reparam_sample(tape, &q, z_noise)?;
    let out = net.decode(tape, z, y)?;
    let recon = spec.likelihood.log_likelihood(tape, x, out)?;
    let prior = net.latent_prior(tape, y)?;
    let kl = latent_kl(tape, spec.kl_mode, &q, &prior, z)?;
    tape.sub(recon, kl)
}

fn check_one_hot(y: &Tensor, k: usize) -> Result<()> {
    if y.shape().len() != 2 || y.shape()[1] != k {
        return Err(Error::ShapeMismatch {
            op: "one-hot labels",
            left: vec![y.rows(), k],
            right: y.shape().to_vec(),
        });
    }
    for i in 0..y.rows() {
        let row = y.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(contract(format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// Labelled ELBO per row:
/// `log p(x|·) + log p(y) - KL(q(z|x,y) ‖ p(z|y))` with one reparameterised `z`.
pub fn elbo_labelled(tape: &mut Tape, net: &Network, x: Var, y: Var, noise: &LabelledNoise) -> Result<Var> {
    check_one_hot(tape.value(y), net.spec().y_dim)?;
    let body = reconstruction_minus_kl(tape, net, x, y, &noise.z)?;
    let log_py = expected_log_prior(tape, net, y)?;
    tape.add(body, log_py)
}

/// Unlabelled ELBO per row.
///
/// One relaxed sample `ŷ ~ q(y|x)` drives the encoder, decoder and latent
/// prior; the categorical part `E_q[log p(y) - log q(y|x)]` is summed exactly
/// over all classes.
pub fn elbo_unlabelled(tape: &mut Tape, net: &Network, x: Var, noise: &UnlabelledNoise) -> Result<Var> {
    let spec = net.spec();
    let logits = net.classifier_logits(tape, x)?;
    let log_q = tape.log_softmax(logits);
    let q = tape.softmax(logits);
    let y_hat = gumbel_softmax_sample(tape, log_q, spec.temperature, &noise.gumbel)?;
    let body = reconstruction_minus_kl(tape, net, x, y_hat, &noise.z)?;

    let rows = tape.shape(q)[0];
    let log_prior = spec.prior.log_probs();
    let lp = tape.constant(Tensor::matrix(rows, log_prior.len(), log_prior.repeat(rows))?);
    let ratio = tape.sub(lp, log_q)?;
    let weighted = tape.mul(q, ratio)?;
    let categorical = tape.sum_last(weighted);
    tape.add(body, categorical)
}

/// The training objective, to be maximised:
///
/// `mean_ℓ[ELBO_ℓ(x, y) + α log q(y|x)] + mean_u[ELBO_u(x)]`
///
/// Either batch may be absent, but not both.
pub fn total_objective(
    tape: &mut Tape,
    net: &Network,
    labelled: Option<(Var, Var, &LabelledNoise)>,
    unlabelled: Option<(Var, &UnlabelledNoise)>,
) -> Result<Objective> {
    let labelled = labelled.filter(|(x, _, _)| tape.shape(*x)[0] > 0);
    let unlabelled = unlabelled.filter(|(x, _)| tape.shape(*x)[0] > 0);
    if labelled.is_none() && unlabelled.is_none() {
        return Err(contract("objective needs a non-empty labelled or unlabelled batch"));
    }
    let alpha = net.spec().alpha;

    let mut parts = Vec::new();
    let (mut cross_entropy, mut labelled_elbo, mut unlabelled_elbo) = (None, None, None);

    if let Some((x, y, noise)) = labelled {
        let elbo = elbo_labelled(tape, net, x, y, noise)?;
        let logits = net.classifier_logits(tape, x)?;
        let log_q = tape.log_softmax(logits);
        let picked = tape.mul(log_q, y)?;
        let log_qy = tape.sum_last(picked);
        let weighted = tape.scale(log_qy, alpha);
        let per_row = tape.add(elbo, weighted)?;
        parts.push(tape.mean(per_row)?);

        let mean_log_qy = tape.mean(log_qy)?;
        cross_entropy = Some(tape.neg(mean_log_qy));
        labelled_elbo = Some(tape.mean(elbo)?);
    }
    if let Some((x, noise)) = unlabelled {
        let elbo = elbo_unlabelled(tape, net, x, noise)?;
        let m = tape.mean(elbo)?;
        parts.push(m);
        unlabelled_elbo = Some(m);
    }

    let total = match parts[..] {
        [only] => only,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!("one or two parts"),
    };
    Ok(Objective {
        total,
        cross_entropy,
        labelled_elbo,
        unlabelled_elbo,
    })
}
