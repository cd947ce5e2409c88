use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Cluster-to-class map: `mapping[k]` is the class cluster `k` stands for.
/// Several clusters may share a class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    /// Clusters that received no test examples (mapped to class 0).
    pub empty: Vec<usize>,
}

fn check(pred: &[usize], truth: &[usize], k: usize, t: usize) -> Result<()> {
    if pred.is_empty() {
        return Err(contract("cluster accuracy needs at least one example"));
    }
    if pred.len() != truth.len() {
        return Err(contract(format!("{} predictions but {} labels", pred.len(), truth.len())));
    }
    if let Some(p) = pred.iter().find(|&&p| p >= k) {
        return Err(contract(format!("cluster id {p} out of range for {k} clusters")));
    }
    if let Some(c) = truth.iter().find(|&&c| c >= t) {
        return Err(contract(format!("class id {c} out of range for {t} classes")));
    }
    Ok(())
}

/// `counts[class][cluster]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    check(pred, truth, k, t)?;
    let mut counts = vec![vec![0; k]; t];
    for (&p, &c) in pred.iter().zip(truth) {
        counts[c][p] += 1;
    }
    Ok(counts)
}

/// Folds the clusters of a `[T][K]` confusion matrix into `[T][T]` by the
/// assignment.
pub fn assigned_confusion(confusion: &[Vec<usize>], assignment: &Assignment) -> Vec<Vec<usize>> {
    let t = confusion.len();
    let mut out = vec![vec![0; t]; t];
    for (class, row) in confusion.iter().enumerate() {
        for (cluster, &n) in row.iter().enumerate() {
            out[class][assignment.mapping[cluster]] += n;
        }
    }
    out
}

fn assign(counts: &[Vec<usize>], k: usize, pinned: &[usize]) -> Assignment {
    let mut mapping = vec![0; k];
    let mut empty = Vec::new();
    for (cluster, slot) in mapping.iter_mut().enumerate() {
        if pinned.contains(&cluster) {
            *slot = cluster;
            continue;
        }
        let column: Vec<usize> = counts.iter().map(|row| row[cluster]).collect();
        if column.iter().all(|&n| n == 0) {
            log::warn!("cluster {cluster} is empty on this test set; mapping it to class 0");
            empty.push(cluster);
            continue;
        }
        // First maximum, so ties go to the lower class id.
        let mut best = 0;
        for (class, &n) in column.iter().enumerate() {
            if n > column[best] {
                best = class;
            }
        }
        *slot = best;
    }
    Assignment { mapping, empty }
}

fn score(counts: &[Vec<usize>], mapping: &[usize], n: usize) -> f64 {
    let hits: usize = mapping.iter().enumerate().map(|(cluster, &class)| counts[class][cluster]).sum();
    hits as f64 / n as f64
}

/// Test-set cluster accuracy: each cluster is assigned its most common
/// ground-truth class, which maximises accuracy over all many-to-one
/// assignments.
pub fn cluster_accuracy(pred: &[usize], truth: &[usize], k: usize, t: usize) -> Result<(f64, Assignment)> {
    let counts = confusion_matrix(pred, truth, k, t)?;
    let a = assign(&counts, k, &[]);
    Ok((score(&counts, &a.mapping, pred.len()), a))
}

/// As [`cluster_accuracy`], but clusters listed in `pinned` keep their own
/// index as class (labelled classes); the rest are assigned by majority.
/// With every cluster pinned this is plain classification accuracy.
pub fn cluster_accuracy_pinned(
    pred: &[usize],
    truth: &[usize],
    k: usize,
    t: usize,
    pinned: &[usize],
) -> Result<(f64, Assignment)> {
    let counts = confusion_matrix(pred, truth, k, t)?;
    if let Some(p) = pinned.iter().find(|&&p| p >= k || p >= t) {
        return Err(contract(format!("cannot pin cluster {p} with {k} clusters and {t} classes")));
    }
    let a = assign(&counts, k, pinned);
    Ok((score(&counts, &a.mapping, pred.len()), a))
}
