//! Densities, KL divergences and reparameterised samplers recorded on a [`Tape`].
//!
//! All per-example quantities are reduced over the last axis, so a batch of
//! `[m, d]` inputs yields an `[m]` vector of log-densities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{contract, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian parameterised by mean and log-variance.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian {
    pub mean: Var,
    pub log_var: Var,
}

impl DiagGaussian {
    /// `N(0, I)` with the given shape, recorded as constants.
    pub fn standard(tape: &mut Tape, shape: &[usize]) -> Self {
        let mean = tape.constant(Tensor::zeros(shape));
        let log_var = tape.constant(Tensor::zeros(shape));
        Self { mean, log_var }
    }

    fn check(&self, tape: &Tape) -> Result<()> {
        if tape.shape(self.mean) != tape.shape(self.log_var) {
            return Err(Error::ShapeMismatch {
                op: "diag_gaussian",
                left: tape.shape(self.mean).to_vec(),
                right: tape.shape(self.log_var).to_vec(),
            });
        }
        Ok(())
    }
}

/// Row-wise categorical distributions, each row a probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalParams(Tensor);

impl CategoricalParams {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Tensor) -> Result<Self> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > Self::TOLERANCE {
                return Err(contract(format!("row {i} is not a probability vector (sum {total})")));
            }
        }
        Ok(Self(probs))
    }

    /// Normalises each row of logits with a softmax.
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let p = tape.softmax(l);
        Self(tape.value(p).clone())
    }

    pub fn probs(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }

    pub fn n_rows(&self) -> usize {
        self.0.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Most probable class per row; ties go to the lower index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n_rows()).map(|i| argmax(self.row(i))).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| categorical_entropy(self.row(i))).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

/// Observation model `p(x | ·)` attached to the decoder output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Likelihood {
    /// Independent Bernoulli pixels; the decoder emits logits.
    Bernoulli,
    /// `N(x | mean, sigma² I)`; the decoder emits the mean.
    GaussianFixedSigma { sigma: f64 },
}

impl Likelihood {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::GaussianFixedSigma { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(crate::error::config(format!("gaussian likelihood needs sigma > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Per-row log-likelihood of `x` given raw decoder output.
    pub fn log_likelihood(&self, tape: &mut Tape, x: Var, decoder_out: Var) -> Result<Var> {
        match *self {
            Likelihood::Bernoulli => bernoulli_loglik_logits(tape, x, decoder_out),
            Likelihood::GaussianFixedSigma { sigma } => gaussian_fixed_loglik(tape, x, decoder_out, sigma),
        }
    }

    /// Mean of `p(x | ·)` from raw decoder output values.
    pub fn mean(&self, decoder_out: &Tensor) -> Tensor {
        match self {
            Likelihood::Bernoulli => decoder_out.map(|l| {
                if l >= 0.0 {
                    1.0 / (1.0 + (-l).exp())
                } else {
                    let e = l.exp();
                    e / (1.0 + e)
                }
            }),
            Likelihood::GaussianFixedSigma { .. } => decoder_out.clone(),
        }
    }
}

/// `Σᵢ [-½ log 2π - ½ log σᵢ² - (xᵢ - μᵢ)² / 2σᵢ²]` per row.
pub fn gaussian_logpdf(tape: &mut Tape, x: Var, dist: &DiagGaussian) -> Result<Var> {
    dist.check(tape)?;
    let diff = tape.sub(x, dist.mean)?;
    let sq = tape.square(diff);
    let neg_lv = tape.neg(dist.log_var);
    let inv_var = tape.exp(neg_lv);
    let quad = tape.mul(sq, inv_var)?;
    let inner = tape.add(quad, dist.log_var)?;
    let scaled = tape.scale(inner, -0.5);
    let shifted = tape.add_scalar(scaled, -HALF_LN_2PI);
    Ok(tape.sum_last(shifted))
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians, per row.
pub fn kl_diag_gaussians(tape: &mut Tape, q: &DiagGaussian, p: &DiagGaussian) -> Result<Var> {
    q.check(tape)?;
    p.check(tape)?;
    let diff = tape.sub(q.mean, p.mean)?;
    let sq = tape.square(diff);
    let var_q = tape.exp(q.log_var);
    let num = tape.add(var_q, sq)?;
    let neg_lvp = tape.neg(p.log_var);
    let inv_var_p = tape.exp(neg_lvp);
    let ratio = tape.mul(num, inv_var_p)?;
    let lv_diff = tape.sub(p.log_var, q.log_var)?;
    let inner = tape.add(lv_diff, ratio)?;
    let inner = tape.add_scalar(inner, -1.0);
    let half = tape.scale(inner, 0.5);
    Ok(tape.sum_last(half))
}

/// `μ + exp(½ log σ²) ∘ ε` with caller-supplied standard-normal noise.
pub fn reparam_sample(tape: &mut Tape, dist: &DiagGaussian, noise: &Tensor) -> Result<Var> {
    dist.check(tape)?;
    if noise.shape() != tape.shape(dist.mean) {
        return Err(Error::ShapeMismatch {
            op: "reparam_sample",
            left: tape.shape(dist.mean).to_vec(),
            right: noise.shape().to_vec(),
        });
    }
    let eps = tape.constant(noise.clone());
    let half = tape.scale(dist.log_var, 0.5);
    let std = tape.exp(half);
    let scaled = tape.mul(std, eps)?;
    tape.add(dist.mean, scaled)
}

/// Concrete relaxation `softmax((log π + g) / τ)` with `g = -log(-log u)`.
///
/// `log_probs` are row-wise log-probabilities; `uniforms` must lie in `(0, 1)`.
pub fn gumbel_softmax_sample(tape: &mut Tape, log_probs: Var, temperature: f64, uniforms: &Tensor) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(contract(format!("Gumbel-Softmax temperature must be positive, got {temperature}")));
    }
    if uniforms.shape() != tape.shape(log_probs) {
        return Err(Error::ShapeMismatch {
            op: "gumbel_softmax_sample",
            left: tape.shape(log_probs).to_vec(),
            right: uniforms.shape().to_vec(),
        });
    }
    if uniforms.data().iter().any(|&u| !(u > 0.0 && u < 1.0)) {
        return Err(contract("Gumbel uniforms must lie strictly inside (0, 1)"));
    }
    let gumbel = tape.constant(uniforms.map(|u| -(-u.ln()).ln()));
    let perturbed = tape.add(log_probs, gumbel)?;
    let tempered = tape.scale(perturbed, 1.0 / temperature);
    Ok(tape.softmax(tempered))
}

/// `Σᵢ [xᵢ log pᵢ + (1 - xᵢ) log(1 - pᵢ)]` per row, probabilities floored.
pub fn bernoulli_loglik(tape: &mut Tape, x: Var, probs: Var) -> Result<Var> {
    let log_p = tape.log(probs);
    let neg_p = tape.neg(probs);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.log(one_minus_p);
    let neg_x = tape.neg(x);
    let one_minus_x = tape.add_scalar(neg_x, 1.0);
    let a = tape.mul(x, log_p)?;
    let b = tape.mul(one_minus_x, log_q)?;
    let total = tape.add(a, b)?;
    Ok(tape.sum_last(total))
}

/// Bernoulli log-likelihood from logits: `Σᵢ [xᵢ lᵢ - softplus(lᵢ)]`.
pub fn bernoulli_loglik_logits(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    let xl = tape.mul(x, logits)?;
    let sp = tape.softplus(logits);
    let total = tape.sub(xl, sp)?;
    Ok(tape.sum_last(total))
}

/// Gaussian log-likelihood with fixed isotropic standard deviation.
pub fn gaussian_fixed_loglik(tape: &mut Tape, x: Var, mean: Var, sigma: f64) -> Result<Var> {
    let diff = tape.sub(x, mean)?;
    let sq = tape.square(diff);
    let scaled = tape.scale(sq, -0.5 / (sigma * sigma));
    let shifted = tape.add_scalar(scaled, -HALF_LN_2PI - sigma.ln());
    Ok(tape.sum_last(shifted))
}

/// Entropy `-Σ πₖ log πₖ` in nats.
pub fn categorical_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Standard-normal log-density of a plain slice (test and diagnostic helper).
pub fn standard_normal_logpdf(z: &[f64]) -> f64 {
    z.iter().map(|v| -0.5 * (2.0 * PI).ln() - 0.5 * v * v).sum()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn const_gauss(tape: &mut Tape, mean: Vec<f64>, log_var: Vec<f64>) -> DiagGaussian {
        let mean = tape.constant(Tensor::vector(mean));
        let log_var = tape.constant(Tensor::vector(log_var));
        DiagGaussian { mean, log_var }
    }

    fn logpdf(x: Vec<f64>, mean: Vec<f64>, log_var: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x));
        let d = const_gauss(&mut tape, mean, log_var);
        let l = gaussian_logpdf(&mut tape, xv, &d).unwrap();
        tape.value(l).item()
    }

    fn kl(qm: Vec<f64>, qlv: Vec<f64>, pm: Vec<f64>, plv: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let q = const_gauss(&mut tape, qm, qlv);
        let p = const_gauss(&mut tape, pm, plv);
        let k = kl_diag_gaussians(&mut tape, &q, &p).unwrap();
        tape.value(k).item()
    }

    #[test]
    fn gaussian_logpdf_known_values() {
        assert!((logpdf(vec![0.0], vec![0.0], vec![0.0]) + 0.918_938_5).abs() < 1e-7);
        assert!((logpdf(vec![0.7, -3.0], vec![0.7, -3.0], vec![0.0, 0.0]) + 1.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn gaussian_logpdf_matches_quadrature_normalised_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let lv: f64 = rng.random_range(-2.0..2.0);
            let x: f64 = rng.random_range(-2.0..2.0);
            let sd = (0.5 * lv).exp();
            // Composite Simpson over ±14σ of the unnormalised kernel.
            let n = 20_000;
            let (lo, hi) = (mu - 14.0 * sd, mu + 14.0 * sd);
            let h = (hi - lo) / n as f64;
            let kernel = |t: f64| (-(t - mu) * (t - mu) / (2.0 * sd * sd)).exp();
            let mut z = kernel(lo) + kernel(hi);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                z += w * kernel(lo + i as f64 * h);
            }
            z *= h / 3.0;
            let oracle = kernel(x).ln() - z.ln();
            let got = logpdf(vec![x], vec![mu], vec![lv]);
            assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        }
    }

    #[test]
    fn kl_known_values_and_positivity() {
        assert_eq!(kl(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]), 0.0);
        assert!((kl(vec![1.0], vec![0.0], vec![0.0], vec![0.0]) - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = 4;
            let qm: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let qlv: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pm: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let plv: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(kl(qm.clone(), qlv.clone(), pm, plv) >= 0.0);
            assert!(kl(qm.clone(), qlv.clone(), qm.clone(), qlv.clone()).abs() < 1e-12);
            let perturbed: Vec<f64> = qm.iter().map(|v| v + 1e-3).collect();
            assert!(kl(qm, qlv.clone(), perturbed, qlv) > 0.0);
        }
    }

    #[test]
    fn kl_matches_monte_carlo_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (qm, qlv, pm, plv) = (vec![0.3, -0.8], vec![-0.5, 0.4], vec![-0.2, 0.1], vec![0.3, -0.2]);
        let analytic = kl(qm.clone(), qlv.clone(), pm.clone(), plv.clone());
        let log_n = |x: f64, m: f64, lv: f64| -HALF_LN_2PI - 0.5 * lv - (x - m) * (x - m) / (2.0 * lv.exp());
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut r = 0.0;
            for j in 0..2 {
                let e: f64 = rng.sample(StandardNormal);
                let z = qm[j] + (0.5 * qlv[j]).exp() * e;
                r += log_n(z, qm[j], qlv[j]) - log_n(z, pm[j], plv[j]);
            }
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - analytic).abs() < 3.0 * se, "mc {mean} ± {se} vs {analytic}");
    }

    #[test]
    fn reparam_sample_cases() {
        let mut tape = Tape::new();
        let d = const_gauss(&mut tape, vec![1.5, -2.0], vec![0.3, -1.0]);
        let z = reparam_sample(&mut tape, &d, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(tape.value(z).data(), &[1.5, -2.0]);

        let d = const_gauss(&mut tape, vec![0.0, 0.0], vec![0.0, 0.0]);
        let noise = Tensor::vector(vec![0.25, -1.75]);
        let z = reparam_sample(&mut tape, &d, &noise).unwrap();
        assert_eq!(tape.value(z), &noise);
    }

    #[test]
    fn reparam_gradient_reaches_mean_and_log_variance() {
        let mut tape = Tape::new();
        let mean = tape.param(Tensor::vector(vec![0.5]));
        let log_var = tape.param(Tensor::vector(vec![0.2]));
        let noise = Tensor::vector(vec![1.3]);
        let z = reparam_sample(&mut tape, &DiagGaussian { mean, log_var }, &noise).unwrap();
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(mean).unwrap().item(), 1.0);
        let expected = 0.5 * (0.1f64).exp() * 1.3;
        assert!((tape.grad(log_var).unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn reparam_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (mu, lv) = (0.7, -0.6);
        let n = 100_000;
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut tape = Tape::new();
        let d = const_gauss(&mut tape, vec![mu; n], vec![lv; n]);
        let z = reparam_sample(&mut tape, &d, &Tensor::vector(noise)).unwrap();
        let zs = tape.value(z).data();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let sigma2 = f64::exp(lv);
        let se_mean = (sigma2 / n as f64).sqrt();
        let se_var = sigma2 * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se_mean, "{mean}");
        assert!((var - sigma2).abs() < 3.0 * se_var, "{var}");
    }

    fn gumbel(log_probs: Vec<f64>, tau: f64, u: Vec<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let lp = tape.constant(Tensor::vector(log_probs));
        let s = gumbel_softmax_sample(&mut tape, lp, tau, &Tensor::vector(u))?;
        Ok(tape.value(s).data().to_vec())
    }

    #[test]
    fn gumbel_softmax_cases() {
        let lp = vec![(0.25f64).ln(); 4];
        for tau in [0.1, 0.5, 3.0] {
            let s = gumbel(lp.clone(), tau, vec![0.37; 4]).unwrap();
            assert!(s.iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
        let lp = vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let u = vec![0.9, 0.2, 0.6];
        let g: Vec<f64> = u.iter().map(|v: &f64| -(-v.ln()).ln()).collect();
        let winner = argmax(&lp.iter().zip(&g).map(|(a, b)| a + b).collect::<Vec<_>>());
        let s = gumbel(lp, 1e-4, u).unwrap();
        for (k, p) in s.iter().enumerate() {
            let target = if k == winner { 1.0 } else { 0.0 };
            assert!((p - target).abs() < 1e-3);
        }
        assert!(matches!(gumbel(vec![0.0], 0.0, vec![0.5]), Err(Error::Contract(_))));
        assert!(matches!(gumbel(vec![0.0], -1.0, vec![0.5]), Err(Error::Contract(_))));
        assert!(gumbel(vec![0.0, 0.0], 1.0, vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn gumbel_argmax_frequencies_match_probabilities() {
        let pi = [0.2, 0.5, 0.3];
        let lp: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 100_000;
        let u: Vec<f64> = (0..3 * n).map(|_| rng.sample(rand::distr::Open01)).collect();
        let mut tape = Tape::new();
        let lpv = tape.constant(Tensor::matrix(n, 3, lp.repeat(n)).unwrap());
        let s = gumbel_softmax_sample(&mut tape, lpv, 0.5, &Tensor::matrix(n, 3, u).unwrap()).unwrap();
        let out = tape.value(s);
        let mut counts = [0usize; 3];
        for i in 0..n {
            let row = out.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            counts[argmax(row)] += 1;
        }
        for k in 0..3 {
            let freq = counts[k] as f64 / n as f64;
            let se = (pi[k] * (1.0 - pi[k]) / n as f64).sqrt();
            assert!((freq - pi[k]).abs() < 3.0 * se, "class {k}: {freq}");
        }
    }

    fn bern(x: Vec<f64>, p: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x));
        let pv = tape.constant(Tensor::vector(p));
        let l = bernoulli_loglik(&mut tape, xv, pv).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn bernoulli_cases() {
        assert!((bern(vec![1.0], vec![0.5]) + 0.693_147_2).abs() < 1e-7);
        let eps = crate::autodiff::LOG_FLOOR;
        assert!(bern(vec![0.0], vec![eps]).abs() < 1e-9);
        assert!(bern(vec![1.0], vec![1.0 - eps]).abs() < 1e-6);
        // Floored probabilities stay finite.
        assert!(bern(vec![1.0, 0.0], vec![0.0, 1.0]).is_finite());

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            let oracle: f64 = x
                .iter()
                .zip(&p)
                .map(|(&xi, &pi)| if xi == 1.0 { pi.ln() } else { (1.0 - pi).ln() })
                .sum();
            assert!((bern(x.clone(), p.clone()) - oracle).abs() < 1e-12);

            let logits: Vec<f64> = p.iter().map(|q| (q / (1.0 - q)).ln()).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::vector(x));
            let lv = tape.constant(Tensor::vector(logits));
            let l = bernoulli_loglik_logits(&mut tape, xv, lv).unwrap();
            assert!((tape.value(l).item() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(categorical_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((categorical_entropy(&[1.0 / 45.0; 45]) - 45f64.ln()).abs() < 1e-12);
        assert!((45f64.ln() - 3.8067).abs() < 1e-4);
        let p = [0.1, 0.2, 0.3, 0.4];
        let oracle = -(0.1f64 * 0.1f64.ln() + 0.2 * 0.2f64.ln() + 0.3 * 0.3f64.ln() + 0.4 * 0.4f64.ln());
        assert!((categorical_entropy(&p) - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_densities_stay_finite_under_fuzzing() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-50.0..50.0);
            let m: f64 = rng.random_range(-50.0..50.0);
            let lv: f64 = rng.random_range(-20.0..20.0);
            assert!(logpdf(vec![x], vec![m], vec![lv]).is_finite());
            let p: f64 = rng.random_range(0.0..=1.0);
            let bit = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            assert!(bern(vec![bit], vec![p]).is_finite());
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::vector(vec![bit]));
            let lv2 = tape.constant(Tensor::vector(vec![rng.random_range(-800.0..800.0)]));
            let l = bernoulli_loglik_logits(&mut tape, xv, lv2).unwrap();
            assert!(tape.value(l).item().is_finite());
        }
    }

    #[test]
    fn categorical_params_validation() {
        assert!(CategoricalParams::new(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap()).is_ok());
        assert!(CategoricalParams::new(Tensor::matrix(1, 2, vec![0.6, 0.5]).unwrap()).is_err());
        assert!(CategoricalParams::new(Tensor::matrix(1, 2, vec![1.5, -0.5]).unwrap()).is_err());
        let c = CategoricalParams::from_logits(&Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 3.0, 3.0]).unwrap());
        assert_eq!(c.argmax(), vec![0, 1]);
    }

    #[test]
    fn likelihood_validation() {
        assert!(Likelihood::Bernoulli.validate().is_ok());
        assert!(Likelihood::GaussianFixedSigma { sigma: 0.01 }.validate().is_ok());
        assert!(Likelihood::GaussianFixedSigma { sigma: 0.0 }.validate().is_err());
    }
}
