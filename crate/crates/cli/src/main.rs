use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use semiunsup::eval::{evaluate, export_latents, generation_grid, latents_csv, write_grid_pgm, YPolicy};
use semiunsup::experiment::{
    load_checkpoint_with_data, reproduce, run_experiment, seed_dir, split_of, summarize, verify_run, DatasetKind,
    ExperimentConfig, RunManifest, Split,
};
use semiunsup::model::{Checkpoint, Model};
use semiunsup::rng::{stream, Stream};

#[derive(Parser)]
#[command(name = "semiunsup", version, about = "Train and evaluate SSVAE and GM-DGM models under label regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config, or re-run one seed from its run.json.
    Run {
        /// Config file (key = value lines) or a run directory's run.json.
        config: PathBuf,
        /// Override a config key, e.g. `--set epochs=50`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides `output_dir`; required when re-running a run.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate mean ± SD accuracy over run or experiment directories.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Print CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Evaluate a checkpoint on its run's dataset (or another one).
    Eval {
        checkpoint: PathBuf,
        /// mnist, fashion-mnist, har or synthetic; defaults to the run's dataset.
        dataset: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Write <stem>.json and <stem>-confusion.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "eval-cli")]
        stem: String,
    },
    /// Write a controlled-generation grid as a PGM image (or CSV for non-image data).
    GenGrid {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export posterior means of z as delimited text.
    ExportLatents {
        checkpoint: PathBuf,
        dataset: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Condition the encoder on the classifier's argmax or on the true labels.
        #[arg(long, value_enum, default_value_t = PolicyArg::Argmax)]
        policy: PolicyArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Argmax,
    Given,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_dataset(s: Option<&str>) -> Result<Option<DatasetKind>> {
    Ok(s.map(str::parse).transpose()?)
}

fn run(config: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<bool> {
    if config.extension().is_some_and(|e| e == "json") {
        if !overrides.is_empty() {
            bail!("overrides cannot be combined with re-running a run.json");
        }
        let out = out.context("re-running a run.json needs --out")?;
        let r = reproduce(config, &out)?;
        verify_run(&r.dir)?;
        println!("seed {} reproduced into {}: acc {:.4}", r.seed, r.dir.display(), r.report.acc);
        return Ok(true);
    }
    let mut cfg = ExperimentConfig::load(config)?;
    for o in overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", outcome.summary.to_text());
    let mut ok = true;
    for (seed, err) in outcome.failures() {
        eprintln!("seed {seed} failed: {err}");
        ok = false;
    }
    for (seed, r) in &outcome.runs {
        if r.is_ok() {
            if let Err(e) = verify_run(&seed_dir(&cfg.output_dir, *seed)) {
                eprintln!("seed {seed}: {e}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn eval_cmd(
    checkpoint: &Path,
    dataset: Option<&str>,
    data_dir: Option<&Path>,
    split: SplitArg,
    out: Option<&Path>,
    stem: &str,
) -> Result<()> {
    let (model, manifest, data) = load_checkpoint_with_data(checkpoint, parse_dataset(dataset)?, data_dir)?;
    let (x, y, n_gt) = split_of(&data, split.into());
    let labelled = if dataset.is_none() { manifest.labelled_classes.clone() } else { Vec::new() };
    let mut report = evaluate(&model, x, y, n_gt, &labelled)?;
    report.manifest_hash = Some(manifest.manifest_hash.clone());
    report.seed = Some(manifest.seed);
    println!(
        "n={} K={} acc={:.4} plain_acc={:.4} labelled-class acc={} unlabelled-class acc={}",
        report.n,
        report.k,
        report.acc,
        report.plain_acc,
        report.acc_labelled_classes.map_or("-".into(), |a| format!("{a:.4}")),
        report.acc_unlabelled_classes.map_or("-".into(), |a| format!("{a:.4}")),
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        report.write(dir, stem)?;
    }
    Ok(())
}

fn gen_grid(checkpoint: &Path, rows: usize, seed: u64, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = Model {
        spec: ckpt.spec,
        params: ckpt.params,
    };
    let grid = generation_grid(&model, rows, &mut stream(seed, Stream::Diagnostics))?;
    let manifest = RunManifest::for_checkpoint(checkpoint).ok();
    match manifest.as_ref().and_then(|m| m.config.dataset.image_side()) {
        Some(side) => {
            let pre = manifest.as_ref().map(|m| &m.preprocess);
            write_grid_pgm(out, &grid, pre, side, side)?;
        }
        None => {
            let mut text = String::new();
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let cells: Vec<String> = grid.cell(r, c).iter().map(f64::to_string).collect();
                    text.push_str(&format!("{r},{c},{}\n", cells.join(",")));
                }
            }
            fs::write(out, text)?;
        }
    }
    println!("wrote {}x{} grid to {}", grid.rows, grid.cols, out.display());
    Ok(())
}

fn export_cmd(
    checkpoint: &Path,
    dataset: Option<&str>,
    data_dir: Option<&Path>,
    split: SplitArg,
    policy: PolicyArg,
    out: &Path,
) -> Result<()> {
    let (model, _, data) = load_checkpoint_with_data(checkpoint, parse_dataset(dataset)?, data_dir)?;
    let (x, y, _) = split_of(&data, split.into());
    let policy = match policy {
        PolicyArg::Argmax => YPolicy::Argmax,
        PolicyArg::Given => YPolicy::Given(y.to_vec()),
    };
    let z = export_latents(&model, x, &policy)?;
    fs::write(out, latents_csv(&z, Some(y)))?;
    println!("wrote {} latent means to {}", z.rows(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides, out } => run(&config, &overrides, out),
        Command::Summarize { dirs, csv } => summarize(&dirs).map_err(Into::into).map(|t| {
            print!("{}", if csv { t.to_csv() } else { t.to_text() });
            !t.has_gaps()
        }),
        Command::Eval {
            checkpoint,
            dataset,
            data_dir,
            split,
            out,
            stem,
        } => eval_cmd(&checkpoint, dataset.as_deref(), data_dir.as_deref(), split, out.as_deref(), &stem).map(|_| true),
        Command::GenGrid { checkpoint, rows, seed, out } => gen_grid(&checkpoint, rows, seed, &out).map(|_| true),
        Command::ExportLatents {
            checkpoint,
            dataset,
            data_dir,
            split,
            policy,
            out,
        } => export_cmd(&checkpoint, dataset.as_deref(), data_dir.as_deref(), split, policy, &out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
