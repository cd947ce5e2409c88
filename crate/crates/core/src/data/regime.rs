use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{config, Error, Result};
use crate::rng::{stream, Stream};

use super::LabeledDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// No labels at all.
    Unsupervised,
    /// Every labelled class also supplies the unlabelled data.
    SemiSupervised,
    /// Semi-unsupervised data fed to a model that assumes it is semi-supervised.
    SusAccident,
    /// Semi-unsupervised data with extra label components for the unseen classes.
    SemiUnsupervised,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Unsupervised,
        Regime::SemiSupervised,
        Regime::SusAccident,
        Regime::SemiUnsupervised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Unsupervised => "unsupervised",
            Regime::SemiSupervised => "semi-supervised",
            Regime::SusAccident => "sus-accident",
            Regime::SemiUnsupervised => "semi-unsupervised",
        }
    }

    /// Whether some classes appear only in the unlabelled data.
    pub fn is_sus(self) -> bool {
        matches!(self, Regime::SusAccident | Regime::SemiUnsupervised)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unsupervised" | "us" => Ok(Regime::Unsupervised),
            "semi-supervised" | "ss" => Ok(Regime::SemiSupervised),
            "sus-accident" | "accident" => Ok(Regime::SusAccident),
            "semi-unsupervised" | "sus" => Ok(Regime::SemiUnsupervised),
            other => Err(config(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeOptions {
    pub regime: Regime,
    pub label_fraction: f64,
    /// Overrides the default labelled classes. Only meaningful for the
    /// semi-supervised regime, where classes outside the set are dropped.
    pub labelled_classes: Option<Vec<usize>>,
}

impl RegimeOptions {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            label_fraction: 0.2,
            labelled_classes: None,
        }
    }
}

/// Labelled classes when none are given: none when unsupervised, all when
/// semi-supervised, otherwise the first `⌈n_gt / 2⌉`.
pub fn default_labelled_classes(regime: Regime, n_gt: usize) -> Vec<usize> {
    match regime {
        Regime::Unsupervised => Vec::new(),
        Regime::SemiSupervised => (0..n_gt).collect(),
        Regime::SusAccident | Regime::SemiUnsupervised => (0..n_gt.div_ceil(2)).collect(),
    }
}

/// A training set split into labelled and unlabelled parts.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeDataset {
    pub name: String,
    pub regime: Regime,
    pub label_fraction: f64,
    pub labelled_classes: Vec<usize>,
    pub n_gt: usize,
    pub seed: u64,
    /// Size of the source dataset.
    pub n_source: usize,
    /// Source indices, sorted.
    pub labelled_idx: Vec<usize>,
    pub unlabelled_idx: Vec<usize>,
    /// Source examples left out entirely (classes outside a restricted
    /// semi-supervised label set).
    pub excluded_idx: Vec<usize>,
    pub labelled_x: Tensor,
    /// Ground-truth ids of `labelled_x`. Labelled classes always form a
    /// prefix `0..n`, so these index the first label components directly.
    pub labelled_y: Vec<usize>,
    pub unlabelled_x: Tensor,
}

fn validate(ds: &LabeledDataset, opts: &RegimeOptions) -> Result<Vec<usize>> {
    let regime = opts.regime;
    if regime != Regime::Unsupervised && !(opts.label_fraction > 0.0 && opts.label_fraction <= 1.0) {
        return Err(config(format!("label fraction must lie in (0, 1], got {}", opts.label_fraction)));
    }
    if regime.is_sus() && ds.n_gt < 2 {
        return Err(config(format!("{regime} needs at least two classes, `{}` has {}", ds.name, ds.n_gt)));
    }
    let default = default_labelled_classes(regime, ds.n_gt);
    let classes = match &opts.labelled_classes {
        None => default,
        Some(given) => {
            let mut given = given.clone();
            given.sort_unstable();
            given.dedup();
            match regime {
                Regime::SemiSupervised => {
                    if given.is_empty() || given.iter().any(|&c| c >= ds.n_gt) {
                        return Err(config(format!(
                            "labelled classes {given:?} invalid for {} classes",
                            ds.n_gt
                        )));
                    }
                    if given != (0..given.len()).collect::<Vec<_>>() {
                        return Err(config("restricted labelled classes must be a prefix 0..n"));
                    }
                    given
                }
                _ if given == default => given,
                _ => {
                    return Err(config(format!(
                        "{regime} fixes the labelled classes to {default:?}, got {given:?}"
                    )))
                }
            }
        }
    };
    Ok(classes)
}

/// Splits `ds` by regime. Within each labelled class a `label_fraction`
/// share (rounded down, at least one) is labelled, chosen with the seed's
/// regime stream; everything else that belongs to the regime becomes
/// unlabelled data.
pub fn build_regime(ds: &LabeledDataset, opts: &RegimeOptions, seed: u64) -> Result<RegimeDataset> {
    let labelled_classes = validate(ds, opts)?;
    let mut rng = stream(seed, Stream::Regime);

    let mut labelled_idx = Vec::new();
    for &c in &labelled_classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if members.is_empty() {
            return Err(config(format!("labelled class {c} has no examples in `{}`", ds.name)));
        }
        members.shuffle(&mut rng);
        let take = ((opts.label_fraction * members.len() as f64).floor() as usize).clamp(1, members.len());
        labelled_idx.extend_from_slice(&members[..take]);
    }
    labelled_idx.sort_unstable();

    let restricted = opts.regime == Regime::SemiSupervised && labelled_classes.len() < ds.n_gt;
    let mut is_labelled = vec![false; ds.len()];
    labelled_idx.iter().for_each(|&i| is_labelled[i] = true);
    let (mut unlabelled_idx, mut excluded_idx) = (Vec::new(), Vec::new());
    for i in 0..ds.len() {
        if is_labelled[i] {
            continue;
        }
        if restricted && !labelled_classes.contains(&ds.labels[i]) {
            excluded_idx.push(i);
        } else {
            unlabelled_idx.push(i);
        }
    }

    Ok(assemble(ds, opts, seed, labelled_classes, labelled_idx, unlabelled_idx, excluded_idx))
}

fn assemble(
    ds: &LabeledDataset,
    opts: &RegimeOptions,
    seed: u64,
    labelled_classes: Vec<usize>,
    labelled_idx: Vec<usize>,
    unlabelled_idx: Vec<usize>,
    excluded_idx: Vec<usize>,
) -> RegimeDataset {
    RegimeDataset {
        name: ds.name.clone(),
        regime: opts.regime,
        label_fraction: opts.label_fraction,
        n_gt: ds.n_gt,
        seed,
        n_source: ds.len(),
        labelled_x: ds.features.select_rows(&labelled_idx),
        labelled_y: labelled_idx.iter().map(|&i| ds.labels[i]).collect(),
        unlabelled_x: ds.features.select_rows(&unlabelled_idx),
        labelled_classes,
        labelled_idx,
        unlabelled_idx,
        excluded_idx,
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| config(format!("bad index `{t}` in manifest"))))
        .collect()
}

impl RegimeDataset {
    pub fn n_labelled(&self) -> usize {
        self.labelled_idx.len()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.unlabelled_idx.len()
    }

    pub fn x_dim(&self) -> usize {
        self.labelled_x.shape()[1].max(self.unlabelled_x.shape()[1])
    }

    /// Text record of the split; together with the source dataset it
    /// reconstructs this value exactly.
    pub fn manifest(&self) -> String {
        format!(
            "dataset={}\nn_source={}\nn_gt={}\nseed={}\nregime={}\nlabel_fraction={}\nlabelled_classes={}\nlabelled={}\nexcluded={}\n",
            self.name,
            self.n_source,
            self.n_gt,
            self.seed,
            self.regime,
            self.label_fraction,
            join(&self.labelled_classes),
            join(&self.labelled_idx),
            join(&self.excluded_idx),
        )
    }

    /// SHA-256 of [`Self::manifest`], hex encoded.
    pub fn manifest_hash(&self) -> String {
        hex::encode(Sha256::digest(self.manifest().as_bytes()))
    }

    pub fn from_manifest(ds: &LabeledDataset, text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config(format!("manifest line without `=`: {line}")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| config(format!("manifest lacks `{k}`")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| config(format!("manifest `{k}` is not a number"))) };
        if num("n_source")? as usize != ds.len() || num("n_gt")? as usize != ds.n_gt {
            return Err(config("manifest does not match the dataset's size or class count"));
        }
        let opts = RegimeOptions {
            regime: get("regime")?.parse()?,
            label_fraction: get("label_fraction")?
                .parse()
                .map_err(|_| config("manifest label_fraction is not a number"))?,
            labelled_classes: None,
        };
        let labelled_idx = split(get("labelled")?)?;
        let excluded_idx = split(get("excluded")?)?;
        let mut taken = vec![false; ds.len()];
        for &i in labelled_idx.iter().chain(&excluded_idx) {
            if i >= ds.len() || std::mem::replace(&mut taken[i], true) {
                return Err(config(format!("manifest index {i} out of range or repeated")));
            }
        }
        let unlabelled_idx = (0..ds.len()).filter(|&i| !taken[i]).collect();
        Ok(assemble(
            ds,
            &opts,
            num("seed")?,
            split(get("labelled_classes")?)?,
            labelled_idx,
            unlabelled_idx,
            excluded_idx,
        ))
    }
}
