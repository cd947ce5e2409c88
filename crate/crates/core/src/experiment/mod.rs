//! Declarative experiment runs: data preparation, per-seed training and
//! evaluation, run artifacts and cross-seed summaries.

mod config;
mod summary;

pub use config::{DataFiles, DatasetKind, ExperimentConfig};
pub use summary::{summarize, Stat, SummaryRow, SummaryTable};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::data::{
    apply_preprocess, build_regime, fit_preprocess, load_idx_images, load_tabular, synthetic_sus, LabeledDataset,
    PreprocessSpec, Regime, RegimeDataset, RegimeOptions, TabularOptions,
};
use crate::distributions::Likelihood;
use crate::error::{config, Error, Result};
use crate::eval::{evaluate, generation_grid, most_confident, write_grid_pgm, EvalReport, Grid};
use crate::model::{build_class_prior, Checkpoint, ClassPrior, Model, ModelSpec};
use crate::rng::{stream, Stream};
use crate::train::{RunLog, TrainConfig, Trainer};

/// Preprocessed train and test splits.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub preprocess: PreprocessSpec,
}

fn fetch_hint(cfg: &ExperimentConfig) -> String {
    let files = &cfg.files;
    let what = match cfg.dataset {
        DatasetKind::Mnist => "Download the four MNIST IDX files (http://yann.lecun.com/exdb/mnist/) and gunzip them",
        DatasetKind::FashionMnist => {
            "Download the four Fashion-MNIST IDX files (https://github.com/zalandoresearch/fashion-mnist) and gunzip them"
        }
        DatasetKind::Har => "Place a precomputed HAR feature table and its labels (e.g. the UCI HAR Dataset layout)",
        DatasetKind::Synthetic => "",
    };
    format!(
        "{what} into {}, or point `data_dir` at them. Expected files: {}, {}, {}, {}.",
        cfg.data_dir.display(),
        files.train_features,
        files.train_labels,
        files.test_features,
        files.test_labels
    )
}

/// Loads the raw train and test splits named by the config.
pub fn load_raw(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let path = |name: &str| cfg.data_dir.join(name);
    let files = &cfg.files;
    let loaded = match cfg.dataset {
        DatasetKind::Mnist | DatasetKind::FashionMnist => (
            load_idx_images(&path(&files.train_features), &path(&files.train_labels)),
            load_idx_images(&path(&files.test_features), &path(&files.test_labels)),
        ),
        DatasetKind::Har => {
            let opts = TabularOptions {
                delimiter: cfg.delimiter_byte(),
                label_offset: files.label_offset,
                ..TabularOptions::default()
            };
            (
                load_tabular(&path(&files.train_features), Some(&path(&files.train_labels)), &opts),
                load_tabular(&path(&files.test_features), Some(&path(&files.test_labels)), &opts),
            )
        }
        DatasetKind::Synthetic => {
            let (train, test) = synthetic_sus(&cfg.synthetic, cfg.data_seed)?;
            (Ok(train), Ok(test))
        }
    };
    let hint = |e: Error| match e {
        Error::MissingData { path, .. } => Error::MissingData {
            path,
            hint: fetch_hint(cfg),
        },
        other => other,
    };
    let (mut train, mut test) = (loaded.0.map_err(hint)?, loaded.1.map_err(hint)?);
    if train.x_dim() != test.x_dim() {
        return Err(config(format!(
            "train features have {} columns but test features have {}",
            train.x_dim(),
            test.x_dim()
        )));
    }
    let n_gt = train.n_gt.max(test.n_gt);
    for ds in [&mut train, &mut test] {
        ds.n_gt = n_gt;
        ds.name = cfg.dataset.to_string();
    }
    Ok((train, test))
}

/// Loads, subsamples and preprocesses both splits. Preprocessing is fit on
/// the (subsampled) training split only.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (mut train, mut test) = load_raw(cfg)?;
    if let Some(n) = cfg.train_subset {
        train = train.subsample(n, cfg.data_seed);
    }
    if let Some(n) = cfg.test_subset {
        test = test.subsample(n, cfg.data_seed.wrapping_add(1));
    }
    let preprocess = fit_preprocess(&train, &cfg.preprocess)?;
    Ok(PreparedData {
        train: apply_preprocess(&train, &preprocess)?,
        test: apply_preprocess(&test, &preprocess)?,
        preprocess,
    })
}

/// Label-space size and class prior for a regime.
///
/// Unsupervised runs get `⌈n_gt/2⌉ + n_aug` components with a uniform prior;
/// semi-supervised and sus-accident runs one component per labelled class;
/// semi-unsupervised runs add `n_aug` components under the split prior.
pub fn label_space(cfg: &ExperimentConfig, data: &RegimeDataset) -> Result<ClassPrior> {
    let n_l = data.labelled_classes.len();
    match data.regime {
        Regime::Unsupervised => ClassPrior::uniform(data.n_gt.div_ceil(2) + cfg.n_aug),
        Regime::SemiSupervised | Regime::SusAccident => ClassPrior::uniform(n_l),
        Regime::SemiUnsupervised => build_class_prior(n_l, cfg.n_aug),
    }
}

/// The model spec for one run.
pub fn model_spec(cfg: &ExperimentConfig, data: &RegimeDataset) -> Result<ModelSpec> {
    let prior = label_space(cfg, data)?;
    let mut spec = ModelSpec::new(cfg.family, data.x_dim(), cfg.z_dim, prior.len(), cfg.hidden_units)?;
    spec.hidden_layers = cfg.hidden_layers;
    spec.activation = cfg.activation;
    spec.likelihood = cfg.likelihood;
    spec.temperature = cfg.temperature;
    spec.prior_init_std = cfg.prior_init_std;
    spec.kl_mode = cfg.kl_mode;
    spec.prior = prior;
    spec.alpha = match cfg.alpha {
        Some(a) => a,
        None if data.n_labelled() == 0 => 0.0,
        None => cfg.alpha_scale * (data.n_labelled() + data.n_unlabelled()) as f64 / data.n_labelled() as f64,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        base_lr: cfg.lr,
        seed,
        eval_every: cfg.eval_every,
        binarize: cfg.preprocess.binarize_dynamic && matches!(cfg.likelihood, Likelihood::Bernoulli),
        checkpoint_dir,
    }
}

/// Self-describing record written to `run.json` before training starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub manifest_hash: String,
    /// Short form of the hash, used in artifact file names.
    pub run_id: String,
    pub labelled_classes: Vec<usize>,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub preprocess: PreprocessSpec,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The manifest of the run a checkpoint belongs to: `run.json` in the
    /// checkpoint's directory or one of its two parents.
    pub fn for_checkpoint(checkpoint: &Path) -> Result<Self> {
        checkpoint
            .ancestors()
            .skip(1)
            .take(3)
            .map(|d| d.join("run.json"))
            .find(|p| p.is_file())
            .map(|p| Self::load(&p))
            .unwrap_or_else(|| {
                Err(config(format!(
                    "no run.json next to {}; the preprocessing it was trained with is unknown",
                    checkpoint.display()
                )))
            })
    }
}

/// What one seed produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub log: RunLog,
    pub report: EvalReport,
    /// Evaluation restricted to test examples of labelled classes, for
    /// regimes that train on (or only label) a subset of the classes.
    pub labelled_only: Option<EvalReport>,
}

pub const RUN_FILES: [&str; 5] = ["run.json", "manifest.txt", "runlog.csv", "eval.json", "checkpoints/final.ckpt"];

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed-{seed}"))
}

fn needs_labelled_only(data: &RegimeDataset) -> bool {
    data.regime == Regime::SusAccident || !data.excluded_idx.is_empty()
}

fn stamp(mut r: EvalReport, m: &RunManifest) -> EvalReport {
    r.manifest_hash = Some(m.manifest_hash.clone());
    r.seed = Some(m.seed);
    r
}

/// Trains and evaluates one seed, writing its artifacts into `dir`.
pub fn run_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64, dir: &Path) -> Result<RunResult> {
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let opts = RegimeOptions {
        regime: cfg.regime,
        label_fraction: cfg.label_fraction,
        labelled_classes: cfg.labelled_classes.clone(),
    };
    let regime = build_regime(&data.train, &opts, seed)?;
    fs::write(dir.join("manifest.txt"), regime.manifest())?;
    let hash = regime.manifest_hash();
    let manifest = RunManifest {
        config: cfg.clone(),
        seed,
        run_id: hash[..12].to_string(),
        manifest_hash: hash,
        labelled_classes: regime.labelled_classes.clone(),
        n_labelled: regime.n_labelled(),
        n_unlabelled: regime.n_unlabelled(),
        n_test: data.test.len(),
        model: model_spec(cfg, &regime)?,
        train: train_config(cfg, seed, Some(ckpt_dir)),
        preprocess: data.preprocess.clone(),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    log::info!(
        "seed {seed}: {} {} {} K={} alpha={:.3} labelled={} unlabelled={}",
        cfg.family,
        cfg.dataset,
        cfg.regime,
        manifest.model.y_dim,
        manifest.model.alpha,
        manifest.n_labelled,
        manifest.n_unlabelled
    );

    let test = &data.test;
    let labelled = &regime.labelled_classes;
    let mut trainer = Trainer::new(manifest.model.clone(), manifest.train.clone())?;
    trainer.train_with(&regime, |t| {
        let r = t.log().records.last().expect("epoch recorded");
        log::info!("seed {seed} epoch {} objective {:.4}", r.epoch, r.objective);
        if cfg.eval_every == 0 || t.epochs_done() % cfg.eval_every != 0 {
            return Ok(None);
        }
        let rep = evaluate(t.model(), &test.features, &test.labels, test.n_gt, labelled)?;
        log::info!("seed {seed} epoch {} test acc {:.4}", r.epoch, rep.acc);
        Ok(Some(json!({ "acc": rep.acc, "plain_acc": rep.plain_acc })))
    })?;
    let (model, log) = trainer.into_parts();
    log.write_csv(&dir.join("runlog.csv"))?;

    let report = stamp(evaluate(&model, &test.features, &test.labels, test.n_gt, labelled)?, &manifest);
    let labelled_only = if needs_labelled_only(&regime) {
        let sub = test.restrict_to_classes(labelled);
        let r = stamp(evaluate(&model, &sub.features, &sub.labels, sub.n_gt, labelled)?, &manifest);
        r.write(dir, "eval-labelled-classes")?;
        Some(r)
    } else {
        None
    };
    write_figure_data(cfg, data, &model, &manifest, &report, dir)?;
    // Written last: its presence marks a complete run.
    report.write(dir, "eval")?;
    log::info!("seed {seed}: test acc {:.4}", report.acc);
    Ok(RunResult {
        seed,
        dir: dir.to_path_buf(),
        manifest,
        log,
        report,
        labelled_only,
    })
}

fn write_figure_data(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    model: &Model,
    manifest: &RunManifest,
    report: &EvalReport,
    dir: &Path,
) -> Result<()> {
    let tag = format!("{}-e{:04}", manifest.run_id, cfg.epochs);
    let labelled = &report.labelled_classes;
    let mut csv = String::from("index,truth,subset,entropy\n");
    for (i, (&t, h)) in data.test.labels.iter().zip(&report.entropies).enumerate() {
        let subset = if labelled.contains(&t) { "labelled-classes" } else { "unlabelled-classes" };
        writeln!(csv, "{i},{t},{subset},{h}").unwrap();
    }
    fs::write(dir.join("entropies.csv"), csv)?;

    let side = cfg.dataset.image_side();
    if cfg.grid_rows > 0 {
        let mut rng = stream(manifest.seed, Stream::Diagnostics);
        let grid = generation_grid(model, cfg.grid_rows, &mut rng)?;
        match side {
            Some(s) => write_grid_pgm(&dir.join(format!("grid-{tag}.pgm")), &grid, Some(&data.preprocess), s, s)?,
            None => fs::write(dir.join(format!("grid-{tag}.csv")), grid_csv(&grid))?,
        }
    }
    if cfg.exemplars > 0 {
        let picks = most_confident(model, &data.test.features, cfg.exemplars)?;
        let mut csv = String::from("cluster,rank,index,prob\n");
        for (k, list) in picks.iter().enumerate() {
            for (rank, (i, p)) in list.iter().enumerate() {
                writeln!(csv, "{k},{rank},{i},{p}").unwrap();
            }
        }
        fs::write(dir.join(format!("exemplars-{tag}.csv")), csv)?;
        if let Some(s) = side {
            let panel = Grid::from_exemplars(&data.test.features, &picks, cfg.exemplars);
            write_grid_pgm(&dir.join(format!("exemplars-{tag}.pgm")), &panel, Some(&data.preprocess), s, s)?;
        }
    }
    Ok(())
}

fn grid_csv(grid: &Grid) -> String {
    let mut out = String::from("row,col");
    for j in 0..grid.cells.shape()[1] {
        write!(out, ",x{j}").unwrap();
    }
    out.push('\n');
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            write!(out, "{r},{c}").unwrap();
            for v in grid.cell(r, c) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Per-seed outcomes and the summary over the completed ones.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<(u64, std::result::Result<RunResult, String>)>,
    pub summary: SummaryTable,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.is_ok())
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.runs
            .iter()
            .filter_map(|(s, r)| r.as_ref().err().map(|e| (*s, e.as_str())))
            .collect()
    }
}

/// Runs every seed of the config, in parallel when enabled. A failing
/// seed records its error in `error.txt` and leaves the others running;
/// the summary lists it as missing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let one = |seed: u64| {
        let dir = seed_dir(&cfg.output_dir, seed);
        let _ = fs::remove_file(dir.join("error.txt"));
        let _ = fs::remove_file(dir.join("eval.json"));
        run_seed(cfg, &data, seed, &dir).map_err(|e| {
            let msg = e.to_string();
            log::error!("seed {seed} failed: {msg}");
            let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("error.txt"), &msg));
            msg
        })
    };
    let runs: Vec<_> = if cfg.parallel && cfg.seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| (seed, s.spawn(move || one(seed)))).collect();
            handles
                .into_iter()
                .map(|(seed, h)| (seed, h.join().unwrap_or_else(|_| Err(format!("seed {seed} panicked")))))
                .collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| (seed, one(seed))).collect()
    };
    let dirs: Vec<PathBuf> = cfg
        .seeds
        .iter()
        .map(|&s| seed_dir(&cfg.output_dir, s))
        .filter(|d| d.join("run.json").is_file())
        .collect();
    let mut summary = if dirs.is_empty() { SummaryTable { rows: Vec::new() } } else { summarize(&dirs)? };
    // Seeds that failed before writing a manifest are still reported.
    for (seed, r) in &runs {
        if r.is_err() {
            for row in &mut summary.rows {
                if !row.missing.contains(seed) {
                    row.missing.push(*seed);
                    row.missing.sort_unstable();
                }
            }
        }
    }
    summary.write(&cfg.output_dir)?;
    Ok(ExperimentOutcome { runs, summary })
}

/// Re-runs the seed recorded in a `run.json` into `dir`, checking that the
/// label split is reproduced exactly.
pub fn reproduce(run_json: &Path, dir: &Path) -> Result<RunResult> {
    let recorded = RunManifest::load(run_json)?;
    let data = prepare(&recorded.config)?;
    let result = run_seed(&recorded.config, &data, recorded.seed, dir)?;
    if result.manifest.manifest_hash != recorded.manifest_hash {
        return Err(config(format!(
            "reproduced label split {} differs from the recorded {}",
            result.manifest.manifest_hash, recorded.manifest_hash
        )));
    }
    Ok(result)
}

/// Checks a finished run directory: every artifact is present, reports
/// reference the run's manifest, and each report's accuracy and confusion
/// matrix agree with each other.
pub fn verify_run(dir: &Path) -> Result<()> {
    let bad = |msg: String| config(format!("{}: {msg}", dir.display()));
    for f in RUN_FILES {
        if !dir.join(f).is_file() {
            return Err(bad(format!("missing {f}")));
        }
    }
    let m = RunManifest::load(&dir.join("run.json"))?;
    let regime_text = fs::read_to_string(dir.join("manifest.txt"))?;
    let digest = hex::encode(Sha256::digest(regime_text.as_bytes()));
    if digest != m.manifest_hash {
        return Err(bad("manifest.txt does not match the hash in run.json".into()));
    }
    for stem in ["eval", "eval-labelled-classes"] {
        let path = dir.join(format!("{stem}.json"));
        if !path.is_file() {
            continue;
        }
        let r = EvalReport::from_json(&fs::read_to_string(&path)?)?;
        if r.manifest_hash.as_deref() != Some(m.manifest_hash.as_str()) {
            return Err(bad(format!("{stem}.json belongs to another run")));
        }
        let total: usize = r.confusion.iter().flatten().sum();
        if total != r.n {
            return Err(bad(format!("{stem}.json confusion sums to {total}, not {}", r.n)));
        }
        let hits: usize = r.assignment.iter().enumerate().map(|(k, &c)| r.confusion[c][k]).sum();
        if hits as f64 / r.n as f64 != r.acc {
            return Err(bad(format!("{stem}.json accuracy disagrees with its confusion matrix")));
        }
    }
    let log = fs::read_to_string(dir.join("runlog.csv"))?;
    match RunLog::objectives_from_csv(&log) {
        Some(o) if o.len() == m.config.epochs && o.iter().all(|v| v.is_finite()) => Ok(()),
        _ => Err(bad("runlog.csv is incomplete or holds non-finite objectives".into())),
    }
}

/// Which split of the run's dataset to evaluate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A checkpoint with the data its run was trained on, preprocessed the
/// same way. `dataset` and `data_dir` override the run's own.
pub fn load_checkpoint_with_data(
    checkpoint: &Path,
    dataset: Option<DatasetKind>,
    data_dir: Option<&Path>,
) -> Result<(Model, RunManifest, PreparedData)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = RunManifest::for_checkpoint(checkpoint)?;
    let mut cfg = manifest.config.clone();
    if let Some(kind) = dataset {
        if kind != cfg.dataset {
            let mut other = ExperimentConfig::preset(kind);
            other.data_dir = cfg.data_dir.clone();
            cfg = other;
        }
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d.to_path_buf();
    }
    let (mut train, mut test) = load_raw(&cfg)?;
    if let Some(n) = cfg.train_subset {
        train = train.subsample(n, cfg.data_seed);
    }
    if let Some(n) = cfg.test_subset {
        test = test.subsample(n, cfg.data_seed.wrapping_add(1));
    }
    let pre = &manifest.preprocess;
    let data = PreparedData {
        train: apply_preprocess(&train, pre)?,
        test: apply_preprocess(&test, pre)?,
        preprocess: pre.clone(),
    };
    let model = Model {
        spec: ckpt.spec,
        params: ckpt.params,
    };
    Ok((model, manifest, data))
}

/// Feature rows and labels of one split.
pub fn split_of(data: &PreparedData, split: Split) -> (&Tensor, &[usize], usize) {
    let ds = match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    (&ds.features, &ds.labels, ds.n_gt)
}
