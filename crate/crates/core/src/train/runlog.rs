use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training objective over the epoch's steps.
    pub objective: f64,
    /// Mean labelled cross-entropy, when labelled data exists.
    pub cross_entropy: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Cumulative wall-clock seconds.
    pub elapsed: f64,
    #[serde(default)]
    pub eval: Option<serde_json::Value>,
}

/// Per-epoch training history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Delimited text, one row per epoch. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,objective,ce,lr,elapsed_s\n");
        for r in &self.records {
            let ce = r.cross_entropy.map(|c| c.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{:.3}", r.epoch, r.objective, ce, r.lr, r.elapsed).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Objective column of a CSV written by [`Self::to_csv`].
    pub fn objectives_from_csv(text: &str) -> Option<Vec<f64>> {
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').nth(1)?.parse().ok())
            .collect()
    }

    /// Trailing moving average with a window of `w` epochs (shorter at the
    /// start).
    pub fn moving_average(&self, w: usize) -> Vec<f64> {
        let obj = self.objectives();
        (0..obj.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w.max(1));
                obj[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}
