//! End-to-end runs on the synthetic semi-unsupervised fixture.

use std::fs;

use semiunsup::data::Regime;
use semiunsup::experiment::{run_experiment, seed_dir, summarize, verify_run, DatasetKind, ExperimentConfig};
use semiunsup::model::Family;

fn config(family: Family, regime: Regime, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(DatasetKind::Synthetic);
    cfg.family = family;
    cfg.regime = regime;
    cfg.epochs = 150;
    cfg.seeds = vec![0, 1];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn gm_dgm_recovers_labelled_and_unlabelled_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Family::GmDgm, Regime::SemiUnsupervised, dir.path());
    let out = run_experiment(&cfg).unwrap();
    assert!(out.all_succeeded());
    for (seed, run) in &out.runs {
        let r = &run.as_ref().unwrap().report;
        assert_eq!((r.k, r.t), (8, 4));
        assert!(r.acc_labelled_classes.unwrap() > 0.95, "seed {seed}: {r:?}");
        assert!(r.acc > 0.95, "seed {seed}: acc {}", r.acc);
        verify_run(&seed_dir(dir.path(), *seed)).unwrap();
    }
    let row = &out.summary.rows[0];
    assert_eq!(row.seeds, vec![0, 1]);
    assert!(row.acc.sd.is_some());
    for f in ["summary.txt", "summary.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn every_regime_trains_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let regimes = [Regime::Unsupervised, Regime::SemiSupervised, Regime::SusAccident, Regime::SemiUnsupervised];
    let mut dirs = Vec::new();
    for regime in regimes {
        let out_dir = dir.path().join(regime.as_str());
        let mut cfg = config(Family::Ssvae, regime, &out_dir);
        cfg.epochs = 5;
        cfg.seeds = vec![3];
        let out = run_experiment(&cfg).unwrap();
        assert!(out.all_succeeded(), "{regime}");
        let run = out.runs[0].1.as_ref().unwrap();
        assert_eq!(run.log.records.len(), 5);
        assert!(run.log.objectives().iter().all(|v| v.is_finite()));
        assert_eq!(run.labelled_only.is_some(), regime == Regime::SusAccident, "{regime}");
        dirs.push(out_dir);
    }
    let table = summarize(&dirs).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(!table.has_gaps());
    let text = fs::read_to_string(dir.path().join("sus-accident").join("summary.txt")).unwrap();
    assert!(text.contains("sus-accident"));
}
