//! Test-time metrics and diagnostic artifacts.

mod accuracy;
mod artifacts;

pub use accuracy::{
    assigned_confusion, cluster_accuracy, cluster_accuracy_pinned, confusion_matrix, Assignment,
};
pub use artifacts::{
    export_latents, generation_grid, latents_csv, most_confident, most_confident_from_probs, write_grid_pgm, Grid,
    YPolicy,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::distributions::{categorical_entropy, CategoricalParams};
use crate::error::{config, Result};
use crate::model::Model;

/// Argmax cluster per row (ties toward the lower index) and the full
/// classifier output. Inputs must already be preprocessed exactly as the
/// training data was.
pub fn predict_clusters(model: &Model, x: &Tensor) -> Result<(Vec<usize>, CategoricalParams)> {
    if x.shape().len() != 2 || x.shape()[1] != model.spec.x_dim {
        return Err(config(format!(
            "test features have shape {:?} but the model expects {} inputs; apply the preprocessing recorded in the run manifest first",
            x.shape(),
            model.spec.x_dim
        )));
    }
    let q = model.classify(x)?;
    Ok((q.argmax(), q))
}

/// Summary statistics of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            n: values.len(),
            mean: if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 },
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
        }
    }
}

/// Raw entropies of `q(y|x)` for one subset of rows, with summary stats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySubset {
    pub values: Vec<f64>,
    pub summary: Summary,
}

/// Entropies of each row's distribution, grouped by the row's subset name.
pub fn entropy_report<S: AsRef<str>>(probs: &CategoricalParams, subset: &[S]) -> BTreeMap<String, EntropySubset> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, s) in subset.iter().enumerate().take(probs.n_rows()) {
        groups
            .entry(s.as_ref().to_string())
            .or_default()
            .push(categorical_entropy(probs.row(i)));
    }
    groups
        .into_iter()
        .map(|(k, values)| {
            let summary = Summary::of(&values);
            (k, EntropySubset { values, summary })
        })
        .collect()
}

/// Everything measured on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Label components.
    pub k: usize,
    /// Ground-truth classes.
    pub t: usize,
    /// Cluster accuracy under the majority-vote assignment.
    pub acc: f64,
    /// Accuracy when component `c` simply means class `c`.
    pub plain_acc: f64,
    /// Cluster accuracy with labelled classes pinned to their own component.
    pub pinned_acc: f64,
    /// Cluster accuracy restricted to test examples of labelled classes.
    pub acc_labelled_classes: Option<f64>,
    /// Same, for classes never labelled during training.
    pub acc_unlabelled_classes: Option<f64>,
    pub labelled_classes: Vec<usize>,
    pub assignment: Vec<usize>,
    pub empty_clusters: Vec<usize>,
    /// `[T][K]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub entropy: BTreeMap<String, Summary>,
    /// Per test example, in order.
    pub entropies: Vec<f64>,
    /// Run this report belongs to, when produced by the experiment runner.
    #[serde(default)]
    pub manifest_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The `[T][K]` confusion matrix as delimited text with a header row.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("class");
        for k in 0..self.k {
            write!(out, ",c{k}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}-confusion.csv")), self.confusion_csv())?;
        Ok(())
    }
}

fn subset_accuracy(pred: &[usize], truth: &[usize], mapping: &[usize], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let rows: Vec<usize> = (0..truth.len()).filter(|&i| keep(truth[i])).collect();
    if rows.is_empty() {
        return None;
    }
    let hits = rows.iter().filter(|&&i| mapping[pred[i]] == truth[i]).count();
    Some(hits as f64 / rows.len() as f64)
}

/// Classifies `x` and scores it against `truth`.
pub fn evaluate(model: &Model, x: &Tensor, truth: &[usize], n_gt: usize, labelled_classes: &[usize]) -> Result<EvalReport> {
    let (pred, q) = predict_clusters(model, x)?;
    let k = model.spec.y_dim;
    let (acc, assignment) = cluster_accuracy(&pred, truth, k, n_gt)?;
    let pinnable: Vec<usize> = labelled_classes.iter().copied().filter(|&c| c < k && c < n_gt).collect();
    let (pinned_acc, _) = cluster_accuracy_pinned(&pred, truth, k, n_gt, &pinnable)?;
    let plain_acc = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64;

    let subset: Vec<&str> = truth
        .iter()
        .map(|t| if labelled_classes.contains(t) { "labelled-classes" } else { "unlabelled-classes" })
        .collect();
    let entropy = entropy_report(&q, &subset)
        .into_iter()
        .map(|(name, s)| (name, s.summary))
        .collect();
    let entropies = (0..q.n_rows()).map(|i| categorical_entropy(q.row(i))).collect();

    Ok(EvalReport {
        n: truth.len(),
        k,
        t: n_gt,
        acc,
        plain_acc,
        pinned_acc,
        acc_labelled_classes: subset_accuracy(&pred, truth, &assignment.mapping, |t| labelled_classes.contains(&t)),
        acc_unlabelled_classes: subset_accuracy(&pred, truth, &assignment.mapping, |t| !labelled_classes.contains(&t)),
        labelled_classes: labelled_classes.to_vec(),
        confusion: confusion_matrix(&pred, truth, k, n_gt)?,
        assignment: assignment.mapping,
        empty_clusters: assignment.empty,
        entropy,
        entropies,
        manifest_hash: None,
        seed: None,
    })
}
