use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use super::*;
use crate::autodiff::Activation;
use crate::distributions::categorical_entropy;

fn toy_spec(family: Family, x_dim: usize, z_dim: usize, y_dim: usize, hidden: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(family, x_dim, z_dim, y_dim, hidden).unwrap();
    spec.alpha = 0.7;
    spec
}

fn randomize(params: &mut ParamStore, rng: &mut ChaCha8Rng, std: f64) {
    let normal = Normal::new(0.0, std).unwrap();
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = rng.sample(normal);
        }
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn uniform_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(rand::distr::Open01)).collect()).unwrap()
}

fn binary_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap()
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    Tensor::matrix(n, row.len(), row.repeat(n)).unwrap()
}

fn set(params: &mut ParamStore, name: &str, values: &[f64]) {
    let t = params.get_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(t.len(), values.len(), "{name}");
    t.data_mut().copy_from_slice(values);
}

fn zero_all(params: &mut ParamStore) {
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Composite Simpson weights on `n` (odd) equally spaced points over `[lo, hi]`.
fn simpson(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n % 2 == 1);
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|i| lo + i as f64 * h).collect();
    let weights = (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    (nodes, weights)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn build_is_deterministic_per_seed() {
    let spec = toy_spec(Family::GmDgm, 10, 3, 4, 8);
    let a = build_model(&spec, 42).unwrap();
    let b = build_model(&spec, 42).unwrap();
    let c = build_model(&spec, 43).unwrap();
    assert!(a.bitwise_eq(&b));
    assert!(!a.bitwise_eq(&c));
}

#[test]
fn layer_shapes_follow_the_factorisations() {
    // MNIST-sized SSVAE: encoder reads [x; y], decoder reads [z; y].
    let spec = toy_spec(Family::Ssvae, 784, 5, 10, 200);
    let p = build_model(&spec, 0).unwrap();
    assert_eq!(p.get("rec.encoder.0.weight").unwrap().shape(), &[784 + 10, 200]);
    assert_eq!(p.get("rec.encoder.mean.weight").unwrap().shape(), &[200, 5]);
    assert_eq!(p.get("rec.encoder.log_var.weight").unwrap().shape(), &[200, 5]);
    assert_eq!(p.get("rec.classifier.2.weight").unwrap().shape(), &[200, 10]);
    assert_eq!(p.get("gen.decoder.0.weight").unwrap().shape(), &[5 + 10, 200]);
    assert_eq!(p.get("gen.decoder.2.weight").unwrap().shape(), &[200, 784]);
    assert!(p.get("gen.prior.mean").is_none());

    let spec = toy_spec(Family::GmDgm, 784, 5, 10, 200);
    let p = build_model(&spec, 0).unwrap();
    assert_eq!(p.get("gen.decoder.0.weight").unwrap().shape(), &[5, 200]);
    assert_eq!(p.get("gen.prior.mean").unwrap().shape(), &[10, 5]);
    assert_eq!(p.generative().count() + p.recognition().count(), p.len());
}

#[test]
fn initialisation_statistics() {
    let spec = toy_spec(Family::GmDgm, 300, 20, 50, 200);
    let p = build_model(&spec, 5).unwrap();
    let w = p.get("rec.encoder.0.weight").unwrap().data();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
    assert!((sd - INIT_STD).abs() < 0.02 * INIT_STD, "sd {sd}");
    assert!(mean.abs() < 5.0 * INIT_STD / (w.len() as f64).sqrt());
    for (name, t) in p.iter() {
        if name.ends_with(".bias") || name == "gen.prior.log_var" {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let table_sd = |p: &ParamStore| {
        let table = p.get("gen.prior.mean").unwrap().data();
        (table.iter().map(|v| v * v).sum::<f64>() / table.len() as f64).sqrt()
    };
    let sd = table_sd(&p);
    assert!((sd - ModelSpec::DEFAULT_PRIOR_INIT_STD).abs() < 0.1, "table sd {sd}");
    let mut small = spec.clone();
    small.prior_init_std = INIT_STD;
    let sd = table_sd(&build_model(&small, 5).unwrap());
    assert!((sd - INIT_STD).abs() < 0.1 * INIT_STD, "table sd {sd}");
}

#[test]
fn fresh_classifier_is_near_uniform() {
    let spec = toy_spec(Family::Ssvae, 20, 3, 7, 16);
    let model = Model::new(spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = uniform_tensor(&mut rng, 9, 20);
    let q = model.classify(&x).unwrap();
    for i in 0..9 {
        assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((categorical_entropy(q.row(i)) - 7f64.ln()).abs() < 1e-3);
    }
}

#[test]
fn classify_is_invariant_to_batch_composition() {
    let spec = toy_spec(Family::GmDgm, 30, 3, 5, 24);
    let mut model = Model::new(spec, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    randomize(&mut model.params, &mut rng, 0.3);
    let batch = uniform_tensor(&mut rng, 37, 30);
    let all = model.classify(&batch).unwrap();
    for i in [0, 5, 17, 36] {
        let alone = model.classify(&batch.select_rows(&[i])).unwrap();
        let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(alone.row(0)), bits(all.row(i)), "row {i}");
    }
}

#[test]
fn degenerate_model_has_closed_form_labelled_elbo() {
    for family in [Family::Ssvae, Family::GmDgm] {
        let mut spec = toy_spec(family, 6, 2, 3, 5);
        spec.prior = build_class_prior(1, 2).unwrap();
        let mut model = Model::new(spec, 3).unwrap();
        // Zero decoder => p = 0.5 everywhere; zero encoder heads => q(z|x,y) = N(0, I) = p(z|y).
        zero_all(&mut model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = binary_tensor(&mut rng, 4, 6);
        let labels = [0, 1, 2, 1];
        let y = one_hot(&labels, 3);
        let noise = LabelledNoise { z: normal_tensor(&mut rng, 4, 2) };
        let elbo = model.elbo_labelled(&x, &y, &noise).unwrap();
        for (i, &c) in labels.iter().enumerate() {
            let expected = 6.0 * 0.5f64.ln() + model.spec.prior.probs()[c].ln();
            assert!((elbo[i] - expected).abs() < 1e-12, "{family}: {} vs {expected}", elbo[i]);
        }
    }
}

#[test]
fn invalid_one_hot_is_rejected() {
    let model = Model::new(toy_spec(Family::Ssvae, 3, 1, 2, 2), 0).unwrap();
    let x = Tensor::zeros(&[1, 3]);
    let noise = LabelledNoise { z: Tensor::zeros(&[1, 1]) };
    let bad = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
    assert!(matches!(model.elbo_labelled(&x, &bad, &noise), Err(Error::Contract(_))));
    let bad = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
    assert!(matches!(model.elbo_labelled(&x, &bad, &noise), Err(Error::Contract(_))));
}

/// Linear-Gaussian SSVAE: `x = a (z + s_y) + c + σ ε`, so the exact posterior
/// of `z` is Gaussian and the ELBO is tight when `q` equals it.
#[test]
fn elbo_is_tight_at_the_true_posterior() {
    let sigma = 0.5;
    let mut spec = toy_spec(Family::Ssvae, 2, 1, 2, 1);
    spec.hidden_layers = 1;
    spec.activation = Activation::Identity;
    spec.likelihood = Likelihood::GaussianFixedSigma { sigma };
    spec.prior = build_class_prior(1, 1).unwrap();
    let mut model = Model::new(spec, 0).unwrap();
    zero_all(&mut model.params);

    let a = [0.8, -1.3];
    let c = [0.1, 0.4];
    let shift = [0.3, -0.2];
    set(&mut model.params, "gen.decoder.0.weight", &[1.0, shift[0], shift[1]]);
    set(&mut model.params, "gen.decoder.1.weight", &a);
    set(&mut model.params, "gen.decoder.1.bias", &c);

    let x = [0.9, -0.7];
    for label in 0..2 {
        let s = shift[label];
        let r: Vec<f64> = (0..2).map(|i| x[i] - c[i] - a[i] * s).collect();
        let precision = 1.0 + (a[0] * a[0] + a[1] * a[1]) / (sigma * sigma);
        let post_mean = (a[0] * r[0] + a[1] * r[1]) / (sigma * sigma) / precision;
        set(&mut model.params, "rec.encoder.mean.bias", &[post_mean]);
        set(&mut model.params, "rec.encoder.log_var.bias", &[-precision.ln()]);

        // log p(x, y) by dense quadrature over z.
        let (nodes, weights) = simpson(-12.0, 12.0, 24_001);
        let log_terms: Vec<f64> = nodes
            .iter()
            .zip(&weights)
            .map(|(&z, &w)| {
                let mut l = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + w.ln();
                for i in 0..2 {
                    let m = a[i] * (z + s) + c[i];
                    l += -0.5 * ((x[i] - m) / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
                }
                l
            })
            .collect();
        let log_evidence = log_sum_exp(&log_terms) + 0.5f64.ln();

        // The integrand is quadratic in the noise, so ε = ±1 gives the exact expectation.
        let xs = repeat_row(&x, 2);
        let ys = one_hot(&[label, label], 2);
        let noise = LabelledNoise { z: Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap() };
        let e = model.elbo_labelled(&xs, &ys, &noise).unwrap();
        let elbo = 0.5 * (e[0] + e[1]);
        assert!((elbo - log_evidence).abs() < 1e-6, "label {label}: elbo {elbo} vs log p {log_evidence}");
    }
}

#[test]
fn labelled_elbo_never_exceeds_log_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (nodes_e, weights_e) = simpson(-10.0, 10.0, 8_001);
    let (nodes_z, weights_z) = simpson(-16.0, 16.0, 16_001);
    for trial in 0..100 {
        let family = if trial % 2 == 0 { Family::Ssvae } else { Family::GmDgm };
        let mut model = Model::new(toy_spec(family, 2, 1, 2, 4), trial).unwrap();
        randomize(&mut model.params, &mut rng, 1.0);
        if family == Family::GmDgm {
            let lv = model.params.get_mut("gen.prior.log_var").unwrap();
            lv.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        }
        let x: Vec<f64> = (0..2).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let label = rng.random_range(0..2);

        // E_ε[ELBO] by quadrature against the standard-normal density.
        let n = nodes_e.len();
        let noise = LabelledNoise { z: Tensor::matrix(n, 1, nodes_e.clone()).unwrap() };
        let e = model.elbo_labelled(&repeat_row(&x, n), &one_hot(&vec![label; n], 2), &noise).unwrap();
        let elbo: f64 = e
            .iter()
            .zip(&nodes_e)
            .zip(&weights_e)
            .map(|((v, t), w)| v * w * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .sum();

        // log p(x, y) = log p(y) + log ∫ p(x|z,y) p(z|y) dz.
        let (mu, lv) = match family {
            Family::Ssvae => (0.0, 0.0),
            Family::GmDgm => (
                model.params.get("gen.prior.mean").unwrap().data()[label],
                model.params.get("gen.prior.log_var").unwrap().data()[label],
            ),
        };
        let m = nodes_z.len();
        let probs = model
            .decode_mean(&Tensor::matrix(m, 1, nodes_z.clone()).unwrap(), &one_hot(&vec![label; m], 2))
            .unwrap();
        let log_terms: Vec<f64> = (0..m)
            .map(|j| {
                let z = nodes_z[j];
                let log_prior = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * lv - (z - mu).powi(2) / (2.0 * lv.exp());
                let p = probs.row(j);
                let log_lik: f64 = (0..2).map(|i| if x[i] == 1.0 { p[i].ln() } else { (1.0 - p[i]).ln() }).sum();
                log_prior + log_lik + weights_z[j].ln()
            })
            .collect();
        let log_evidence = log_sum_exp(&log_terms) + 0.5f64.ln();
        assert!(elbo <= log_evidence + 1e-9, "trial {trial}: elbo {elbo} > log p {log_evidence}");
    }
}

#[test]
fn ssvae_and_pinned_gm_dgm_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ss = Model::new(toy_spec(Family::Ssvae, 5, 2, 3, 6), 0).unwrap();
    randomize(&mut ss.params, &mut rng, 0.5);
    // The SSVAE decoder ignores y when its y-rows are zero.
    let w = ss.params.get_mut("gen.decoder.0.weight").unwrap();
    for v in &mut w.data_mut()[2 * 6..] {
        *v = 0.0;
    }
    let mut gm = Model::new(toy_spec(Family::GmDgm, 5, 2, 3, 6), 0).unwrap();
    for (name, t) in ss.params.iter() {
        if name == "gen.decoder.0.weight" {
            let z_rows = Tensor::matrix(2, 6, t.data()[..12].to_vec()).unwrap();
            *gm.params.get_mut(name).unwrap() = z_rows;
        } else {
            *gm.params.get_mut(name).unwrap() = t.clone();
        }
    }
    zero_all_named(&mut gm.params, &["gen.prior.mean", "gen.prior.log_var"]);

    let x = binary_tensor(&mut rng, 6, 5);
    let y = one_hot(&[0, 1, 2, 2, 1, 0], 3);
    let noise = LabelledNoise { z: normal_tensor(&mut rng, 6, 2) };
    let a = ss.elbo_labelled(&x, &y, &noise).unwrap();
    let b = gm.elbo_labelled(&x, &y, &noise).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12, "{u} vs {v}");
    }
    let un = UnlabelledNoise { z: normal_tensor(&mut rng, 6, 2), gumbel: uniform_tensor(&mut rng, 6, 3) };
    let a = ss.elbo_unlabelled(&x, &un).unwrap();
    let b = gm.elbo_unlabelled(&x, &un).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12, "{u} vs {v}");
    }
}

fn zero_all_named(params: &mut ParamStore, names: &[&str]) {
    for n in names {
        params.get_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn single_class_unlabelled_elbo_equals_labelled() {
    for family in [Family::Ssvae, Family::GmDgm] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Model::new(toy_spec(family, 4, 2, 1, 5), 0).unwrap();
        randomize(&mut model.params, &mut rng, 0.5);
        let x = binary_tensor(&mut rng, 5, 4);
        let z = normal_tensor(&mut rng, 5, 2);
        let lab = model.elbo_labelled(&x, &one_hot(&[0; 5], 1), &LabelledNoise { z: z.clone() }).unwrap();
        let unl = model
            .elbo_unlabelled(&x, &UnlabelledNoise { z, gumbel: uniform_tensor(&mut rng, 5, 1) })
            .unwrap();
        assert_eq!(lab, unl, "{family}");
    }
}

/// The sampled unlabelled ELBO against exact enumeration over `y`.
#[test]
fn unlabelled_elbo_matches_enumeration_in_expectation() {
    // At τ = 0.1 the relaxed sample is biased relative to enumeration by more
    // than the Monte-Carlo error; the bias vanishes as τ → 0, so the
    // 3-SE match is asserted at τ = 0.01 and τ = 0.1 only gets a bias bound.
    for (family, tau) in [(Family::Ssvae, 0.01), (Family::GmDgm, 0.01), (Family::Ssvae, 0.1), (Family::GmDgm, 0.1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = 3;
        let mut spec = toy_spec(family, 4, 2, k, 5);
        spec.temperature = tau;
        spec.prior = build_class_prior(1, 2).unwrap();
        let mut model = Model::new(spec, 0).unwrap();
        randomize(&mut model.params, &mut rng, 0.6);
        let x = [1.0, 0.0, 1.0, 1.0];
        let z_noise = [0.4, -1.1];

        // Exact: Σ_y q(y|x) [ELBO_ℓ(x, y) - log q(y|x)], with the same z noise.
        let q = model.classify(&repeat_row(&x, 1)).unwrap();
        let q = q.row(0).to_vec();
        let per_class = model
            .elbo_labelled(&repeat_row(&x, k), &one_hot(&[0, 1, 2], k), &LabelledNoise { z: repeat_row(&z_noise, k) })
            .unwrap();
        let exact: f64 = (0..k).map(|c| q[c] * (per_class[c] - q[c].ln())).sum();
        let expected_labelled: f64 = (0..k).map(|c| q[c] * per_class[c]).sum();

        let n = 100_000;
        let noise = UnlabelledNoise { z: repeat_row(&z_noise, n), gumbel: uniform_tensor(&mut rng, n, k) };
        let samples = model.elbo_unlabelled(&repeat_row(&x, n), &noise).unwrap();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        if tau > 0.05 {
            assert!((mean - exact).abs() < 0.01 * exact.abs(), "{family}: sampled {mean} vs exact {exact}");
            continue;
        }
        assert!((mean - exact).abs() < 3.0 * se, "{family}: sampled {mean} ± {se} vs exact {exact}");

        // ELBO_u exceeds E_q[ELBO_ℓ] by the entropy of q(y|x).
        assert!(mean >= expected_labelled - 3.0 * se);
        assert!((mean - expected_labelled - categorical_entropy(&q)).abs() < 3.0 * se);
    }
}

#[test]
fn monte_carlo_kl_mode_agrees_in_expectation() {
    for family in [Family::Ssvae, Family::GmDgm] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = Model::new(toy_spec(family, 4, 2, 2, 5), 0).unwrap();
        randomize(&mut model.params, &mut rng, 0.5);
        let x = [0.0, 1.0, 1.0, 0.0];
        let n = 200_000;
        let noise = LabelledNoise { z: normal_tensor(&mut rng, n, 2) };
        let xs = repeat_row(&x, n);
        let ys = one_hot(&vec![1; n], 2);
        let analytic = model.elbo_labelled(&xs, &ys, &noise).unwrap();
        model.spec.kl_mode = KlMode::MonteCarlo;
        let mc = model.elbo_labelled(&xs, &ys, &noise).unwrap();
        let diffs: Vec<f64> = analytic.iter().zip(&mc).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{family}: {mean}");
    }
}

#[test]
fn pinned_table_makes_latent_kl_independent_of_y() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = Model::new(toy_spec(Family::GmDgm, 4, 2, 3, 5), 0).unwrap();
    randomize(&mut model.params, &mut rng, 0.5);
    set(&mut model.params, "gen.prior.mean", &[0.3, -0.4].repeat(3));
    set(&mut model.params, "gen.prior.log_var", &[0.2, 0.1].repeat(3));
    // Zero the encoder's y-rows so q(z|x,y) does not depend on y either;
    // then the whole ELBO minus log p(y) is y-independent.
    let w = model.params.get_mut("rec.encoder.0.weight").unwrap();
    for v in &mut w.data_mut()[4 * 5..] {
        *v = 0.0;
    }
    let x = repeat_row(&[1.0, 0.0, 0.0, 1.0], 3);
    let noise = LabelledNoise { z: repeat_row(&[0.5, 0.5], 3) };
    let elbo = model.elbo_labelled(&x, &one_hot(&[0, 1, 2], 3), &noise).unwrap();
    assert!((elbo[0] - elbo[1]).abs() < 1e-12 && (elbo[1] - elbo[2]).abs() < 1e-12);

    // Directly: the mixed prior is the same for every (relaxed) y.
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let net = Network::new(&model.spec, &bound);
    let y = tape.constant(Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.2, 0.5, 0.3]).unwrap());
    let p = net.latent_prior(&mut tape, y).unwrap();
    let m = tape.value(p.mean);
    assert!((m.row(0)[0] - m.row(1)[0]).abs() < 1e-15);
}

#[test]
fn objective_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut spec = toy_spec(Family::Ssvae, 4, 2, 2, 5);
    spec.alpha = 0.0;
    let mut model = Model::new(spec, 0).unwrap();
    randomize(&mut model.params, &mut rng, 0.5);
    let xl = binary_tensor(&mut rng, 3, 4);
    let yl = one_hot(&[0, 1, 1], 2);
    let nl = LabelledNoise { z: normal_tensor(&mut rng, 3, 2) };
    let xu = binary_tensor(&mut rng, 5, 4);
    let nu = UnlabelledNoise { z: normal_tensor(&mut rng, 5, 2), gumbel: uniform_tensor(&mut rng, 5, 2) };

    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let el = mean(model.elbo_labelled(&xl, &yl, &nl).unwrap());
    let eu = mean(model.elbo_unlabelled(&xu, &nu).unwrap());

    let (both, _) = model.objective_with_grads(Some((&xl, &yl, &nl)), Some((&xu, &nu))).unwrap();
    assert_eq!(both.total, el + eu);
    assert_eq!(both.labelled_elbo, Some(el));

    // Unsupervised mode: only the unlabelled branch.
    let (unsup, _) = model.objective_with_grads(None, Some((&xu, &nu))).unwrap();
    assert_eq!(unsup.total, eu);
    assert_eq!(unsup.cross_entropy, None);

    assert!(matches!(model.objective_with_grads(None, None), Err(Error::Contract(_))));
    let empty = Tensor::zeros(&[0, 4]);
    let empty_noise = UnlabelledNoise { z: Tensor::zeros(&[0, 2]), gumbel: Tensor::zeros(&[0, 2]) };
    assert!(matches!(
        model.objective_with_grads(None, Some((&empty, &empty_noise))),
        Err(Error::Contract(_))
    ));
}

fn flatten(grads: &ParamStore) -> Vec<f64> {
    grads.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

#[test]
fn large_alpha_gradient_aligns_with_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut model = Model::new(toy_spec(Family::GmDgm, 4, 2, 3, 5), 0).unwrap();
    randomize(&mut model.params, &mut rng, 0.5);
    let x = binary_tensor(&mut rng, 6, 4);
    let y = one_hot(&[0, 1, 2, 0, 1, 2], 3);
    let noise = LabelledNoise { z: normal_tensor(&mut rng, 6, 2) };

    model.spec.alpha = 1e4;
    let (_, full) = model.objective_with_grads(Some((&x, &y, &noise)), None).unwrap();

    // Pure cross-entropy gradient of mean log q(y|x).
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let net = Network::new(&model.spec, &bound);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let logits = net.classifier_logits(&mut tape, xv).unwrap();
    let lq = tape.log_softmax(logits);
    let picked = tape.mul(lq, yv).unwrap();
    let rows = tape.sum_last(picked);
    let m = tape.mean(rows).unwrap();
    tape.backward(m).unwrap();
    let mut ce = ParamStore::default();
    for (name, v) in bound.iter() {
        ce.insert(name.clone(), tape.grad(*v).unwrap());
    }

    let (a, b) = (flatten(&full), flatten(&ce));
    let dot: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
    let cos = dot / (a.iter().map(|u| u * u).sum::<f64>().sqrt() * b.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!(cos > 0.99, "cosine {cos}");
}

/// Central differences over every parameter of the full objective.
#[test]
fn objective_gradient_matches_finite_differences() {
    for family in [Family::Ssvae, Family::GmDgm] {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut model = Model::new(toy_spec(family, 4, 2, 2, 3), 0).unwrap();
        randomize(&mut model.params, &mut rng, 0.5);
        let xl = binary_tensor(&mut rng, 3, 4);
        let yl = one_hot(&[0, 1, 1], 2);
        let nl = LabelledNoise { z: normal_tensor(&mut rng, 3, 2) };
        let xu = binary_tensor(&mut rng, 4, 4);
        let nu = UnlabelledNoise { z: normal_tensor(&mut rng, 4, 2), gumbel: uniform_tensor(&mut rng, 4, 2) };

        let (_, grads) = model.objective_with_grads(Some((&xl, &yl, &nl)), Some((&xu, &nu))).unwrap();
        let eval = |m: &Model| m.objective_with_grads(Some((&xl, &yl, &nl)), Some((&xu, &nu))).unwrap().0.total;

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let names: Vec<String> = model.params.names().cloned().collect();
        for name in &names {
            for j in 0..model.params.get(name).unwrap().len() {
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap().data_mut()[j] += h;
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap().data_mut()[j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let g = grads.get(name).unwrap().data()[j];
                let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-3, "{family} {name}[{j}]: tape {g} vs fd {fd}");
                worst = worst.max(err);
                checked += 1;
            }
        }
        assert_eq!(checked, model.params.n_values());
        eprintln!("{family}: {checked} gradients, worst relative error {worst:.2e}");
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = toy_spec(Family::GmDgm, 7, 3, 4, 5);
    let mut params = build_model(&spec, 1).unwrap();
    randomize(&mut params, &mut rng, 2.0);
    params.get_mut("gen.prior.log_var").unwrap().data_mut()[0] = -0.0;
    params.get_mut("gen.prior.log_var").unwrap().data_mut()[1] = f64::MIN_POSITIVE / 4.0;
    let mut ckpt = Checkpoint::new(spec, 99, params);
    ckpt.aux.insert("adam.m/x".into(), Tensor::vector(vec![1.0 / 3.0, 1e-300]));
    ckpt.meta = serde_json::json!({"epoch": 3});

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(back.params.bitwise_eq(&ckpt.params));
    assert_eq!(back.spec, ckpt.spec);
    assert_eq!(back.seed, 99);
    assert_eq!(back.aux, ckpt.aux);
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());

    let mut bytes = ckpt.to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    let bytes = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn spec_validation() {
    let mut spec = toy_spec(Family::Ssvae, 4, 2, 3, 5);
    assert!(spec.validate().is_ok());
    spec.prior = build_class_prior(2, 0).unwrap();
    assert!(spec.validate().is_err());
    let mut spec = toy_spec(Family::Ssvae, 4, 2, 3, 5);
    spec.z_dim = 0;
    assert!(spec.validate().is_err());
    let mut spec = toy_spec(Family::Ssvae, 4, 2, 3, 5);
    spec.temperature = 0.0;
    assert!(build_model(&spec, 0).is_err());
    assert_eq!("gm-dgm".parse::<Family>().unwrap(), Family::GmDgm);
    assert!("vae".parse::<Family>().is_err());
}
