use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::eval::EvalReport;

use super::{RunManifest, RUN_FILES};

/// Mean and sample standard deviation of one metric across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub values: Vec<f64>,
    pub mean: Option<f64>,
    /// Absent for fewer than two runs.
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / n);
        let sd = match mean {
            Some(m) if values.len() > 1 => {
                Some((values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt())
            }
            _ => None,
        };
        Self { values, mean, sd }
    }

    /// `mean ± sd` in percent.
    fn cell(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s),
            (Some(m), None) => format!("{:.1}", 100.0 * m),
            _ => "-".into(),
        }
    }
}

/// One (family, dataset, regime) line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: String,
    pub dataset: String,
    pub regime: String,
    pub seeds: Vec<u64>,
    /// Seeds whose run directory is incomplete.
    pub missing: Vec<u64>,
    pub acc: Stat,
    pub plain_acc: Stat,
    /// Full-test-set accuracy on examples of labelled classes.
    pub acc_labelled_classes: Stat,
    /// Same, on classes that never had labels.
    pub acc_unlabelled_classes: Stat,
    /// Plain accuracy on the labelled-classes-only test subset, where one
    /// was evaluated.
    pub labelled_only_acc: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_json(&fs::read_to_string(path)?)
}

/// Run directories under `dir`: itself if it holds a `run.json`, otherwise
/// its immediate subdirectories that do.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("run.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.is_dir() {
        return Err(config(format!("{} is not a run or experiment directory", dir.display())));
    }
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run.json").is_file())
        .collect();
    found.sort();
    Ok(found)
}

struct Group {
    reference: RunManifest,
    complete: Vec<(u64, EvalReport, Option<EvalReport>)>,
    missing: Vec<u64>,
}

/// Cross-seed comparison table over run directories (or experiment
/// directories holding them). Runs sharing family, dataset and regime are
/// pooled and must otherwise have identical configs; a seed may appear only
/// once per group. Incomplete runs are listed as missing.
pub fn summarize(dirs: &[PathBuf]) -> Result<SummaryTable> {
    let mut groups: BTreeMap<(String, String, String), Group> = BTreeMap::new();
    let mut any = false;
    for d in dirs {
        for run in run_dirs(d)? {
            any = true;
            let m = RunManifest::load(&run.join("run.json"))?;
            let key = (m.config.family.to_string(), m.config.dataset.to_string(), m.config.regime.to_string());
            let group = groups.entry(key.clone()).or_insert_with(|| Group {
                reference: m.clone(),
                complete: Vec::new(),
                missing: Vec::new(),
            });
            if group.reference.config.comparable() != m.config.comparable() {
                return Err(config(format!(
                    "{} was run with a different configuration from {} {} {} runs ({}); summarize them separately",
                    run.display(),
                    key.0,
                    key.1,
                    key.2,
                    config_diff(&group.reference, &m)
                )));
            }
            let seen = group.complete.iter().map(|c| c.0).chain(group.missing.iter().copied());
            if seen.clone().any(|s| s == m.seed) {
                return Err(config(format!("seed {} of {} {} {} appears twice", m.seed, key.0, key.1, key.2)));
            }
            if RUN_FILES.iter().all(|f| run.join(f).is_file()) {
                let only = run.join("eval-labelled-classes.json");
                let only = only.is_file().then(|| read_report(&only)).transpose()?;
                group.complete.push((m.seed, read_report(&run.join("eval.json"))?, only));
            } else {
                group.missing.push(m.seed);
            }
        }
    }
    if !any {
        return Err(config("no run directories found"));
    }
    let rows = groups
        .into_iter()
        .map(|((family, dataset, regime), mut g)| {
            g.complete.sort_by_key(|c| c.0);
            g.missing.sort_unstable();
            let stat = |f: &dyn Fn(&EvalReport) -> Option<f64>| Stat::of(g.complete.iter().filter_map(|c| f(&c.1)).collect());
            let only: Vec<f64> = g.complete.iter().filter_map(|c| c.2.as_ref().map(|r| r.plain_acc)).collect();
            SummaryRow {
                family,
                dataset,
                regime,
                seeds: g.complete.iter().map(|c| c.0).collect(),
                missing: g.missing,
                acc: stat(&|r| Some(r.acc)),
                plain_acc: stat(&|r| Some(r.plain_acc)),
                acc_labelled_classes: stat(&|r| r.acc_labelled_classes),
                acc_unlabelled_classes: stat(&|r| r.acc_unlabelled_classes),
                labelled_only_acc: (!only.is_empty()).then(|| Stat::of(only)),
            }
        })
        .collect();
    Ok(SummaryTable { rows })
}

fn config_diff(a: &RunManifest, b: &RunManifest) -> String {
    let (ta, tb) = (a.config.comparable().to_text(), b.config.comparable().to_text());
    let differing: Vec<String> = ta
        .lines()
        .zip(tb.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("`{x}` vs `{y}`"))
        .collect();
    differing.join(", ")
}

impl SummaryTable {
    /// Aligned plain-text table with accuracies in percent.
    pub fn to_text(&self) -> String {
        let header = [
            "family",
            "dataset",
            "regime",
            "runs",
            "acc",
            "plain acc",
            "labelled-class acc",
            "unlabelled-class acc",
            "labelled-only test acc",
            "missing seeds",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.family.clone(),
                r.dataset.clone(),
                r.regime.clone(),
                r.seeds.len().to_string(),
                r.acc.cell(),
                r.plain_acc.cell(),
                r.acc_labelled_classes.cell(),
                r.acc_unlabelled_classes.cell(),
                r.labelled_only_acc.as_ref().map_or("-".into(), Stat::cell),
                if r.missing.is_empty() {
                    "-".into()
                } else {
                    r.missing.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
                },
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| cells.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        out
    }

    /// One line per row; standard deviations are left empty for single runs.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "family,dataset,regime,runs,acc_mean,acc_sd,plain_acc_mean,plain_acc_sd,labelled_class_acc_mean,labelled_class_acc_sd,unlabelled_class_acc_mean,unlabelled_class_acc_sd,labelled_only_acc_mean,labelled_only_acc_sd,missing_seeds\n",
        );
        for r in &self.rows {
            let only = r.labelled_only_acc.as_ref();
            let missing: Vec<String> = r.missing.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.family,
                r.dataset,
                r.regime,
                r.seeds.len(),
                opt(r.acc.mean),
                opt(r.acc.sd),
                opt(r.plain_acc.mean),
                opt(r.plain_acc.sd),
                opt(r.acc_labelled_classes.mean),
                opt(r.acc_labelled_classes.sd),
                opt(r.acc_unlabelled_classes.mean),
                opt(r.acc_unlabelled_classes.sd),
                opt(only.and_then(|s| s.mean)),
                opt(only.and_then(|s| s.sd)),
                missing.join(";")
            )
            .unwrap();
        }
        out
    }

    /// Writes `summary.txt`, `summary.csv` and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("summary.txt"), self.to_text())?;
        fs::write(dir.join("summary.csv"), self.to_csv())?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn has_gaps(&self) -> bool {
        self.rows.iter().any(|r| !r.missing.is_empty())
    }
}
