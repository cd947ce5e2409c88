use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::data::PreprocessSpec;
use crate::distributions::CategoricalParams;
use crate::error::{config, contract, Result};
use crate::model::{one_hot, Family, Model};

/// A `rows × cols` panel of feature vectors, stored row-major as
/// `[rows * cols, x_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Tensor,
}

impl Grid {
    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        self.cells.row(r * self.cols + c)
    }

    /// Exemplar panel: row `k` holds the examples listed for cluster `k`,
    /// padded with zeros to `cols`.
    pub fn from_exemplars(x: &Tensor, per_cluster: &[Vec<(usize, f64)>], cols: usize) -> Self {
        let d = x.shape()[1];
        let mut cells = Tensor::zeros(&[per_cluster.len() * cols, d]);
        for (r, picks) in per_cluster.iter().enumerate() {
            for (c, &(i, _)) in picks.iter().take(cols).enumerate() {
                let at = (r * cols + c) * d;
                cells.data_mut()[at..at + d].copy_from_slice(x.row(i));
            }
        }
        Self {
            rows: per_cluster.len(),
            cols,
            cells,
        }
    }
}

/// Decoder means for `n_z` shared noise draws (rows) and every label value
/// (columns).
///
/// SSVAE: each row uses one `z* ~ p(z)` for all `y`. GM-DGM: each row uses
/// one standard-normal `ε`, and column `y` decodes `μ(y) + σ(y) ⊙ ε`.
pub fn generation_grid<R: Rng + ?Sized>(model: &Model, n_z: usize, rng: &mut R) -> Result<Grid> {
    let spec = &model.spec;
    let (k, zd) = (spec.y_dim, spec.z_dim);
    let eps: Vec<f64> = (0..n_z * zd).map(|_| rng.sample(StandardNormal)).collect();
    let mut z = Vec::with_capacity(n_z * k * zd);
    let mut labels = Vec::with_capacity(n_z * k);
    for r in 0..n_z {
        let e = &eps[r * zd..(r + 1) * zd];
        for y in 0..k {
            labels.push(y);
            match spec.family {
                Family::Ssvae => z.extend_from_slice(e),
                Family::GmDgm => {
                    let get = |name: &str| {
                        model
                            .params
                            .get(name)
                            .ok_or_else(|| contract(format!("GM-DGM model lacks `{name}`")))
                    };
                    let (mu, lv) = (get("gen.prior.mean")?, get("gen.prior.log_var")?);
                    for j in 0..zd {
                        z.push(mu.row(y)[j] + (0.5 * lv.row(y)[j]).exp() * e[j]);
                    }
                }
            }
        }
    }
    let cells = model.decode_mean(&Tensor::matrix(n_z * k, zd, z)?, &one_hot(&labels, k))?;
    Ok(Grid { rows: n_z, cols: k, cells })
}

/// Writes the grid as a binary greymap, tiling `height × width` images.
/// With a preprocessing spec, cells are first mapped back to the raw
/// layout (dropped pixels render black). Values are clamped to `[0, 1]`.
pub fn write_grid_pgm(
    path: &Path,
    grid: &Grid,
    preprocess: Option<&PreprocessSpec>,
    height: usize,
    width: usize,
) -> Result<()> {
    let (img_w, img_h) = (grid.cols * width, grid.rows * height);
    let mut pixels = vec![0u8; img_w * img_h];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let raw = match preprocess {
                Some(p) => p.expand(grid.cell(r, c)),
                None => grid.cell(r, c).to_vec(),
            };
            if raw.len() != height * width {
                return Err(config(format!(
                    "cannot draw {} values as a {height}x{width} image",
                    raw.len()
                )));
            }
            for (i, v) in raw.iter().enumerate() {
                let (y, x) = (r * height + i / width, c * width + i % width);
                pixels[y * img_w + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{img_w} {img_h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Per cluster `k`, up to `n` examples assigned to `k` (argmax), ordered by
/// decreasing `q(y=k|x)` with ties broken by index.
pub fn most_confident_from_probs(probs: &CategoricalParams, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if n == 0 {
        return Err(contract("need at least one exemplar per cluster"));
    }
    let pred = probs.argmax();
    let mut out = vec![Vec::new(); probs.n_classes()];
    for (i, &k) in pred.iter().enumerate() {
        out[k].push((i, probs.row(i)[k]));
    }
    for picks in &mut out {
        picks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        picks.truncate(n);
    }
    Ok(out)
}

pub fn most_confident(model: &Model, x: &Tensor, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    most_confident_from_probs(&model.classify(x)?, n)
}

/// Which label the encoder is conditioned on when exporting latents.
#[derive(Clone, Debug, PartialEq)]
pub enum YPolicy {
    Argmax,
    Given(Vec<usize>),
}

/// Posterior means `μ_φ(x, y)`, `[N, z_dim]`.
pub fn export_latents(model: &Model, x: &Tensor, policy: &YPolicy) -> Result<Tensor> {
    let labels = match policy {
        YPolicy::Argmax => model.classify(x)?.argmax(),
        YPolicy::Given(l) => {
            if l.len() != x.rows() {
                return Err(contract(format!("{} labels for {} rows", l.len(), x.rows())));
            }
            if let Some(c) = l.iter().find(|&&c| c >= model.spec.y_dim) {
                return Err(contract(format!("label {c} outside the model's label space")));
            }
            l.clone()
        }
    };
    model.posterior_mean(x, &one_hot(&labels, model.spec.y_dim))
}

/// Latents with an optional label column, as comma-separated text.
pub fn latents_csv(latents: &Tensor, labels: Option<&[usize]>) -> String {
    let d = latents.shape()[1];
    let mut out = (0..d).map(|j| format!("z{j}")).collect::<Vec<_>>().join(",");
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for i in 0..latents.rows() {
        let row: Vec<String> = latents.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        if let Some(l) = labels {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}
