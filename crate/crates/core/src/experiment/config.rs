use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::data::{PreprocessOptions, Regime, SyntheticSpec};
use crate::distributions::Likelihood;
use crate::error::{config, Error, Result};
use crate::model::{Family, KlMode, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Har,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Har => "har",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    /// Image side length for datasets that can be drawn.
    pub fn image_side(self) -> Option<usize> {
        matches!(self, DatasetKind::Mnist | DatasetKind::FashionMnist).then_some(28)
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion-mnist" | "fmnist" => Ok(DatasetKind::FashionMnist),
            "har" => Ok(DatasetKind::Har),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(config(format!(
                "unknown dataset `{other}` (expected mnist, fashion-mnist, har or synthetic)"
            ))),
        }
    }
}

/// Where the train/test files live, relative to `data_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    pub train_features: String,
    pub train_labels: String,
    pub test_features: String,
    pub test_labels: String,
    /// Field separator for tabular files; `whitespace` splits on runs of
    /// blanks.
    pub delimiter: String,
    /// Subtracted from tabular labels (1 for one-based class ids).
    pub label_offset: usize,
}

impl DataFiles {
    fn idx() -> Self {
        Self {
            train_features: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_features: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            delimiter: "whitespace".into(),
            label_offset: 0,
        }
    }

    fn uci_har() -> Self {
        Self {
            train_features: "train/X_train.txt".into(),
            train_labels: "train/y_train.txt".into(),
            test_features: "test/X_test.txt".into(),
            test_labels: "test/y_test.txt".into(),
            delimiter: "whitespace".into(),
            label_offset: 1,
        }
    }
}

/// Everything needed to run one row of the experiment matrix over several
/// seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetKind,
    pub family: Family,
    pub regime: Regime,
    pub n_aug: usize,
    pub label_fraction: f64,
    /// Overrides the regime's default labelled classes (semi-supervised only).
    pub labelled_classes: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    /// Seeds the training subsample and the synthetic generator, so every
    /// run seed sees the same data.
    pub data_seed: u64,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub data_dir: PathBuf,
    pub files: DataFiles,
    pub synthetic: SyntheticSpec,
    pub output_dir: PathBuf,

    pub z_dim: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
    /// Fixed cross-entropy weight; `None` means `alpha_scale · N / N_l`.
    pub alpha: Option<f64>,
    pub alpha_scale: f64,
    pub temperature: f64,
    pub prior_init_std: f64,
    pub kl_mode: KlMode,
    pub preprocess: PreprocessOptions,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Checkpoint and test-set evaluation interval in epochs (0 = only at
    /// the end).
    pub eval_every: usize,
    /// Rows of the generation grid.
    pub grid_rows: usize,
    /// Most-confident exemplars kept per cluster.
    pub exemplars: usize,
    /// Run seeds on parallel threads.
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Per-dataset defaults.
    pub fn preset(dataset: DatasetKind) -> Self {
        let base = Self {
            name: dataset.as_str().into(),
            dataset,
            family: Family::GmDgm,
            regime: Regime::SemiUnsupervised,
            n_aug: 40,
            label_fraction: 0.2,
            labelled_classes: None,
            seeds: vec![0, 1, 2, 3],
            data_seed: 0,
            train_subset: None,
            test_subset: None,
            data_dir: PathBuf::from(format!("data/{dataset}")),
            files: DataFiles::idx(),
            synthetic: SyntheticSpec::default(),
            output_dir: PathBuf::from("runs"),
            z_dim: 5,
            hidden_units: 200,
            hidden_layers: 2,
            activation: Activation::Relu,
            likelihood: Likelihood::Bernoulli,
            alpha: None,
            alpha_scale: 0.1,
            temperature: 0.5,
            prior_init_std: ModelSpec::DEFAULT_PRIOR_INIT_STD,
            kl_mode: KlMode::Analytic,
            preprocess: PreprocessOptions::default(),
            epochs: 400,
            batch_size: 4,
            lr: 0.001,
            eval_every: 0,
            grid_rows: 10,
            exemplars: 10,
            parallel: true,
        };
        match dataset {
            DatasetKind::Mnist => base,
            DatasetKind::FashionMnist => Self {
                z_dim: 10,
                hidden_units: 500,
                batch_size: 64,
                lr: 0.0015,
                ..base
            },
            DatasetKind::Har => Self {
                z_dim: 15,
                hidden_units: 500,
                batch_size: 64,
                lr: 0.005,
                likelihood: Likelihood::GaussianFixedSigma { sigma: 0.01 },
                files: DataFiles::uci_har(),
                preprocess: PreprocessOptions {
                    std_threshold: 0.0,
                    standardize: true,
                    binarize_dynamic: false,
                },
                ..base
            },
            DatasetKind::Synthetic => Self {
                n_aug: 6,
                synthetic: SyntheticSpec {
                    separation: 8.0,
                    ..SyntheticSpec::default()
                },
                z_dim: 2,
                hidden_units: 64,
                batch_size: 64,
                lr: 0.003,
                epochs: 250,
                grid_rows: 0,
                exemplars: 0,
                likelihood: Likelihood::GaussianFixedSigma { sigma: 0.5 },
                preprocess: PreprocessOptions {
                    std_threshold: 0.0,
                    standardize: false,
                    binarize_dynamic: false,
                },
                ..base
            },
        }
    }

    /// Reads a config file. `include = <path>` splices another file in
    /// place (relative to the including file); `dataset` selects the preset
    /// that every other key then overrides, wherever it appears.
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        collect(path, &mut entries, &mut HashSet::new())?;
        Self::from_entries(&entries)
    }

    /// Parses config text; includes resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        collect_text(text, "<config>", base_dir, &mut entries, &mut HashSet::new())?;
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &[Entry]) -> Result<Self> {
        let dataset = entries
            .iter()
            .rev()
            .find(|e| e.key == "dataset")
            .ok_or_else(|| config("config does not set `dataset`"))?;
        let mut cfg = Self::preset(dataset.value.parse().map_err(|e| located(dataset, e))?);
        for e in entries.iter().filter(|e| e.key != "dataset") {
            cfg.set(&e.key, &e.value).map_err(|err| located(e, err))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => {
                let kind: DatasetKind = v.parse()?;
                if kind != self.dataset {
                    return Err(config("`dataset` cannot be changed by an override; start from its preset"));
                }
            }
            "name" => self.name = v.into(),
            "family" => self.family = v.parse()?,
            "regime" => self.regime = v.parse()?,
            "n_aug" => self.n_aug = num(key, v)?,
            "label_fraction" => self.label_fraction = num(key, v)?,
            "labelled_classes" => {
                self.labelled_classes = if v == "default" { None } else { Some(list(key, v)?) };
            }
            "seeds" => self.seeds = list(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "train_subset" => self.train_subset = opt_num(key, v)?,
            "test_subset" => self.test_subset = opt_num(key, v)?,
            "data_dir" => self.data_dir = v.into(),
            "output_dir" => self.output_dir = v.into(),
            "train_features" => self.files.train_features = v.into(),
            "train_labels" => self.files.train_labels = v.into(),
            "test_features" => self.files.test_features = v.into(),
            "test_labels" => self.files.test_labels = v.into(),
            "delimiter" => {
                if !matches!(v, "whitespace" | "comma" | "tab") && v.len() != 1 {
                    return Err(config(format!("delimiter must be one character, comma, tab or whitespace, got `{v}`")));
                }
                self.files.delimiter = v.into();
            }
            "label_offset" => self.files.label_offset = num(key, v)?,
            "synthetic_classes" => self.synthetic.n_classes = num(key, v)?,
            "synthetic_dim" => self.synthetic.dim = num(key, v)?,
            "synthetic_train_per_class" => self.synthetic.train_per_class = num(key, v)?,
            "synthetic_test_per_class" => self.synthetic.test_per_class = num(key, v)?,
            "synthetic_separation" => self.synthetic.separation = num(key, v)?,
            "synthetic_noise" => self.synthetic.noise_std = num(key, v)?,
            "z_dim" => self.z_dim = num(key, v)?,
            "hidden_units" => self.hidden_units = num(key, v)?,
            "hidden_layers" => self.hidden_layers = num(key, v)?,
            "activation" => self.activation = v.parse()?,
            "likelihood" => {
                self.likelihood = match v {
                    "bernoulli" => Likelihood::Bernoulli,
                    "gaussian" => Likelihood::GaussianFixedSigma {
                        sigma: match self.likelihood {
                            Likelihood::GaussianFixedSigma { sigma } => sigma,
                            Likelihood::Bernoulli => 1.0,
                        },
                    },
                    other => return Err(config(format!("unknown likelihood `{other}` (bernoulli or gaussian)"))),
                }
            }
            "sigma" => {
                self.likelihood = Likelihood::GaussianFixedSigma { sigma: num(key, v)? };
            }
            "alpha" => self.alpha = if v == "auto" { None } else { Some(num(key, v)?) },
            "alpha_scale" => self.alpha_scale = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "prior_init_std" => self.prior_init_std = num(key, v)?,
            "kl" => {
                self.kl_mode = match v {
                    "analytic" => KlMode::Analytic,
                    "monte-carlo" | "mc" => KlMode::MonteCarlo,
                    other => return Err(config(format!("unknown kl mode `{other}` (analytic or monte-carlo)"))),
                }
            }
            "std_threshold" => self.preprocess.std_threshold = num(key, v)?,
            "standardize" => self.preprocess.standardize = flag(key, v)?,
            "binarize" => self.preprocess.binarize_dynamic = flag(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "grid_rows" => self.grid_rows = num(key, v)?,
            "exemplars" => self.exemplars = num(key, v)?,
            "parallel" => self.parallel = flag(key, v)?,
            other => return Err(config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config("`seeds` must list at least one seed"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(config(format!("seed {s} is listed twice")));
        }
        if self.regime == Regime::SemiUnsupervised && self.n_aug == 0 {
            return Err(config("semi-unsupervised runs need n_aug > 0"));
        }
        if self.labelled_classes.is_some() && self.regime != Regime::SemiSupervised {
            return Err(config("labelled_classes can only be overridden for semi-supervised runs"));
        }
        if matches!(self.likelihood, Likelihood::Bernoulli) && self.preprocess.standardize {
            return Err(config("a Bernoulli likelihood needs features in [0, 1]; disable `standardize`"));
        }
        if self.dataset == DatasetKind::Har && self.preprocess.binarize_dynamic {
            return Err(config("HAR features are real-valued and cannot be binarized"));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("z_dim", self.z_dim),
            ("hidden_units", self.hidden_units),
            ("hidden_layers", self.hidden_layers),
        ] {
            if v == 0 {
                return Err(config(format!("`{name}` must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("`lr` must be positive, got {}", self.lr)));
        }
        self.likelihood.validate()
    }

    /// Field separator byte for tabular files.
    pub fn delimiter_byte(&self) -> u8 {
        match self.files.delimiter.as_str() {
            "whitespace" => b' ',
            "comma" => b',',
            "tab" => b'\t',
            other => other.as_bytes()[0],
        }
    }

    /// The config as loadable text.
    pub fn to_text(&self) -> String {
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |n| n.to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("dataset", self.dataset.to_string());
        kv("name", self.name.clone());
        kv("family", self.family.to_string());
        kv("regime", self.regime.to_string());
        kv("n_aug", self.n_aug.to_string());
        kv("label_fraction", self.label_fraction.to_string());
        kv(
            "labelled_classes",
            self.labelled_classes.as_ref().map_or("default".into(), |c| {
                c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            }),
        );
        kv("seeds", join(&self.seeds));
        kv("data_seed", self.data_seed.to_string());
        kv("train_subset", opt(self.train_subset));
        kv("test_subset", opt(self.test_subset));
        kv("data_dir", self.data_dir.display().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("train_features", self.files.train_features.clone());
        kv("train_labels", self.files.train_labels.clone());
        kv("test_features", self.files.test_features.clone());
        kv("test_labels", self.files.test_labels.clone());
        kv("delimiter", self.files.delimiter.clone());
        kv("label_offset", self.files.label_offset.to_string());
        kv("synthetic_classes", self.synthetic.n_classes.to_string());
        kv("synthetic_dim", self.synthetic.dim.to_string());
        kv("synthetic_train_per_class", self.synthetic.train_per_class.to_string());
        kv("synthetic_test_per_class", self.synthetic.test_per_class.to_string());
        kv("synthetic_separation", self.synthetic.separation.to_string());
        kv("synthetic_noise", self.synthetic.noise_std.to_string());
        kv("z_dim", self.z_dim.to_string());
        kv("hidden_units", self.hidden_units.to_string());
        kv("hidden_layers", self.hidden_layers.to_string());
        kv("activation", activation_name(self.activation).into());
        match self.likelihood {
            Likelihood::Bernoulli => kv("likelihood", "bernoulli".into()),
            Likelihood::GaussianFixedSigma { sigma } => {
                kv("likelihood", "gaussian".into());
                kv("sigma", sigma.to_string());
            }
        }
        kv("alpha", self.alpha.map_or("auto".into(), |a| a.to_string()));
        kv("alpha_scale", self.alpha_scale.to_string());
        kv("temperature", self.temperature.to_string());
        kv("prior_init_std", self.prior_init_std.to_string());
        kv(
            "kl",
            match self.kl_mode {
                KlMode::Analytic => "analytic",
                KlMode::MonteCarlo => "monte-carlo",
            }
            .into(),
        );
        kv("std_threshold", self.preprocess.std_threshold.to_string());
        kv("standardize", self.preprocess.standardize.to_string());
        kv("binarize", self.preprocess.binarize_dynamic.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("grid_rows", self.grid_rows.to_string());
        kv("exemplars", self.exemplars.to_string());
        kv("parallel", self.parallel.to_string());
        out
    }

    /// The config with per-invocation fields (seeds, output location, name,
    /// threading) blanked, for checking that runs are comparable.
    pub fn comparable(&self) -> Self {
        Self {
            name: String::new(),
            seeds: Vec::new(),
            output_dir: PathBuf::new(),
            parallel: false,
            eval_every: 0,
            ..self.clone()
        }
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
    }
}

#[derive(Clone, Debug)]
struct Entry {
    key: String,
    value: String,
    origin: String,
    line: usize,
}

fn located(e: &Entry, err: Error) -> Error {
    let msg = match err {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    config(format!("{}:{}: {msg}", e.origin, e.line))
}

fn collect(path: &Path, out: &mut Vec<Entry>, stack: &mut HashSet<PathBuf>) -> Result<()> {
    let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    if !stack.insert(canonical.clone()) {
        return Err(config(format!("{} includes itself", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    collect_text(&text, &path.display().to_string(), base, out, stack)?;
    stack.remove(&canonical);
    Ok(())
}

fn collect_text(
    text: &str,
    origin: &str,
    base: &Path,
    out: &mut Vec<Entry>,
    stack: &mut HashSet<PathBuf>,
) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config(format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "include" {
            collect(&base.join(value), out, stack)?;
        } else {
            out.push(Entry {
                key: key.into(),
                value: value.into(),
                origin: origin.into(),
                line: i + 1,
            });
        }
    }
    Ok(())
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config(format!("`{key}` cannot be `{v}`")))
}

fn opt_num(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "none" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config(format!("`{key}` must be true or false, got `{v}`"))),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}
