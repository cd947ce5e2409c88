//! Stochastic maximisation of the combined labelled/unlabelled objective.

mod adam;
mod runlog;

pub use adam::{cosine_lr, Adam, BETA1, BETA2, EPSILON};
pub use runlog::{EpochRecord, RunLog};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::Tensor;
use crate::data::{binarize_batch, RegimeDataset};
use crate::error::{config, Error, Result};
use crate::model::{one_hot, Checkpoint, LabelledNoise, Model, ModelSpec, ObjectiveValue, ParamStore, UnlabelledNoise};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Checkpoint (and run the epoch hook's evaluation) every this many
    /// epochs; 0 disables intermediate checkpoints.
    pub eval_every: usize,
    /// Resample binary inputs per batch (Bernoulli data).
    pub binarize: bool,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, base_lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            base_lr,
            seed,
            eval_every: 0,
            binarize: false,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch size must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(config(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        Ok(())
    }
}

/// One minibatch step's inputs, fully materialised.
struct Batch {
    labelled: Option<(Tensor, Tensor, LabelledNoise)>,
    unlabelled: Option<(Tensor, UnlabelledNoise)>,
}

/// Resumable training state.
///
/// Every random draw comes from one of three seeded streams (binarisation,
/// noise, shuffling); their positions are saved in checkpoints so that a
/// resumed run continues bitwise identically.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    adam: Adam,
    epochs_done: usize,
    binarize_rng: ChaCha8Rng,
    sampling_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    labelled_order: Vec<usize>,
    labelled_cursor: usize,
    log: RunLog,
}

fn normals(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("length matches")
}

fn uniforms(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(Open01)).collect()).expect("length matches")
}

/// Number of optimiser steps in one epoch: one pass over the unlabelled
/// data, or over the labelled data when there is no unlabelled data.
pub fn steps_per_epoch(data: &RegimeDataset, batch_size: usize) -> usize {
    let n = if data.n_unlabelled() > 0 { data.n_unlabelled() } else { data.n_labelled() };
    n.div_ceil(batch_size)
}

impl Trainer {
    pub fn new(spec: ModelSpec, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(spec, config.seed)?;
        let seed = config.seed;
        Ok(Self {
            adam: Adam::new(&model.params),
            model,
            config,
            epochs_done: 0,
            binarize_rng: stream(seed, Stream::Binarize),
            sampling_rng: stream(seed, Stream::Sampling),
            shuffle_rng: stream(seed, Stream::Shuffle),
            labelled_order: Vec::new(),
            labelled_cursor: 0,
            log: RunLog::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn into_parts(self) -> (Model, RunLog) {
        (self.model, self.log)
    }

    /// Changes the epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    fn check_data(&self, data: &RegimeDataset) -> Result<()> {
        let spec = &self.model.spec;
        if data.n_labelled() == 0 && data.n_unlabelled() == 0 {
            return Err(config("training data is empty"));
        }
        if data.x_dim() != spec.x_dim {
            return Err(config(format!(
                "data has {} features, model expects {}",
                data.x_dim(),
                spec.x_dim
            )));
        }
        if let Some(&c) = data.labelled_y.iter().find(|&&c| c >= spec.y_dim) {
            return Err(config(format!(
                "labelled class {c} does not fit a label space of {}",
                spec.y_dim
            )));
        }
        Ok(())
    }

    fn total_steps(&self, data: &RegimeDataset) -> u64 {
        (self.config.epochs * steps_per_epoch(data, self.config.batch_size)) as u64
    }

    fn next_labelled(&mut self, n: usize, n_labelled: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.labelled_cursor >= self.labelled_order.len() {
                self.labelled_order = (0..n_labelled).collect();
                self.labelled_order.shuffle(&mut self.shuffle_rng);
                self.labelled_cursor = 0;
            }
            let take = (n - out.len()).min(self.labelled_order.len() - self.labelled_cursor);
            out.extend_from_slice(&self.labelled_order[self.labelled_cursor..self.labelled_cursor + take]);
            self.labelled_cursor += take;
        }
        out
    }

    fn epoch_order(&mut self, data: &RegimeDataset) -> Vec<usize> {
        let n = if data.n_unlabelled() > 0 { data.n_unlabelled() } else { data.n_labelled() };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        order
    }

    fn make_batch(&mut self, data: &RegimeDataset, chunk: &[usize]) -> Result<Batch> {
        let (z_dim, k) = (self.model.spec.z_dim, self.model.spec.y_dim);
        let (lab_idx, unl_idx) = if data.n_unlabelled() > 0 {
            let lab = (data.n_labelled() > 0).then(|| self.next_labelled(chunk.len(), data.n_labelled()));
            (lab, Some(chunk.to_vec()))
        } else {
            (Some(chunk.to_vec()), None)
        };

        let mut xl = lab_idx.as_ref().map(|idx| data.labelled_x.select_rows(idx));
        let mut xu = unl_idx.as_ref().map(|idx| data.unlabelled_x.select_rows(idx));
        if self.config.binarize {
            if let Some(x) = &mut xl {
                *x = binarize_batch(x, &mut self.binarize_rng)?;
            }
            if let Some(x) = &mut xu {
                *x = binarize_batch(x, &mut self.binarize_rng)?;
            }
        }

        let labelled = match (xl, lab_idx) {
            (Some(x), Some(idx)) => {
                let labels: Vec<usize> = idx.iter().map(|&i| data.labelled_y[i]).collect();
                let noise = LabelledNoise {
                    z: normals(&mut self.sampling_rng, idx.len(), z_dim),
                };
                Some((x, one_hot(&labels, k), noise))
            }
            _ => None,
        };
        let unlabelled = xu.map(|x| {
            let n = x.rows();
            let noise = UnlabelledNoise {
                z: normals(&mut self.sampling_rng, n, z_dim),
                gumbel: uniforms(&mut self.sampling_rng, n, k),
            };
            (x, noise)
        });
        Ok(Batch { labelled, unlabelled })
    }

    fn evaluate(&self, batch: &Batch) -> Result<(ObjectiveValue, ParamStore)> {
        self.model.objective_with_grads(
            batch.labelled.as_ref().map(|(x, y, n)| (x, y, n)),
            batch.unlabelled.as_ref().map(|(x, n)| (x, n)),
        )
    }

    /// Ascent gradients of the next step that training would take, without
    /// advancing any state.
    pub fn next_step_gradients(&self, data: &RegimeDataset) -> Result<ParamStore> {
        self.check_data(data)?;
        let mut probe = self.clone();
        let order = probe.epoch_order(data);
        let chunk = &order[..order.len().min(probe.config.batch_size)];
        let batch = probe.make_batch(data, chunk)?;
        Ok(probe.evaluate(&batch)?.1)
    }

    fn snapshot(&self, name: &str) -> Option<PathBuf> {
        let dir = self.config.checkpoint_dir.as_ref()?;
        let path = dir.join(name);
        self.checkpoint().ok()?.save(&path).ok()?;
        Some(path)
    }

    /// Runs one epoch and appends its record to the log.
    pub fn run_epoch(&mut self, data: &RegimeDataset) -> Result<&EpochRecord> {
        self.check_data(data)?;
        let started = Instant::now();
        let epoch = self.epochs_done + 1;
        let total = self.total_steps(data);
        let order = self.epoch_order(data);

        let (mut sum, mut ce_sum, mut ce_n, mut steps) = (0.0, 0.0, 0usize, 0usize);
        let mut lr = self.config.base_lr;
        for (i, chunk) in order.chunks(self.config.batch_size).enumerate() {
            lr = cosine_lr(self.adam.steps_taken(), total, self.config.base_lr);
            let batch = self.make_batch(data, chunk)?;
            let (value, grads) = self.evaluate(&batch)?;
            if !value.total.is_finite() {
                let snap = self.snapshot("nan-snapshot.ckpt");
                return Err(Error::NonFiniteObjective {
                    epoch,
                    step: i,
                    detail: format!(
                        "{value:?}; parameters finite: {}; snapshot: {}",
                        self.model.params.is_finite(),
                        snap.map_or("none".into(), |p| p.display().to_string())
                    ),
                });
            }
            self.adam.step(&mut self.model.params, &grads, lr, epoch)?;
            sum += value.total;
            if let Some(ce) = value.cross_entropy {
                ce_sum += ce;
                ce_n += 1;
            }
            steps += 1;
        }

        self.epochs_done = epoch;
        let elapsed = self.log.records.last().map_or(0.0, |r| r.elapsed) + started.elapsed().as_secs_f64();
        self.log.records.push(EpochRecord {
            epoch,
            objective: sum / steps as f64,
            cross_entropy: (ce_n > 0).then(|| ce_sum / ce_n as f64),
            lr,
            elapsed,
            eval: None,
        });
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// Trains up to the configured epoch budget. `on_epoch` runs after every
    /// epoch; whatever it returns is attached to that epoch's record.
    /// Checkpoints are written every `eval_every` epochs and at the end when
    /// a checkpoint directory is configured.
    pub fn train_with<F>(&mut self, data: &RegimeDataset, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<Option<serde_json::Value>>,
    {
        while self.epochs_done < self.config.epochs {
            self.run_epoch(data)?;
            let eval = on_epoch(self)?;
            self.log.records.last_mut().expect("epoch recorded").eval = eval;
            let every = self.config.eval_every;
            if let Some(dir) = self.config.checkpoint_dir.clone() {
                if every > 0 && self.epochs_done % every == 0 && self.epochs_done < self.config.epochs {
                    self.checkpoint()?.save(&dir.join(format!("epoch-{:04}.ckpt", self.epochs_done)))?;
                }
            }
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            self.checkpoint()?.save(&dir.join("final.ckpt"))?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(self.model.spec.clone(), self.config.seed, self.model.params.clone());
        let (m, v) = self.adam.moments();
        for (name, t) in m.iter() {
            ckpt.aux.insert(format!("adam.m/{name}"), t.clone());
        }
        for (name, t) in v.iter() {
            ckpt.aux.insert(format!("adam.v/{name}"), t.clone());
        }
        ckpt.meta = json!({
            "epochs_done": self.epochs_done,
            "adam_step": self.adam.steps_taken(),
            "train_config": self.config,
            "rng": {
                "binarize": self.binarize_rng.get_word_pos().to_string(),
                "sampling": self.sampling_rng.get_word_pos().to_string(),
                "shuffle": self.shuffle_rng.get_word_pos().to_string(),
            },
            "labelled_order": self.labelled_order,
            "labelled_cursor": self.labelled_cursor,
            "log": self.log.records,
        });
        Ok(ckpt)
    }

    /// Rebuilds the trainer saved by [`Self::checkpoint`].
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("training state lacks `{what}`"));
        let meta = &ckpt.meta;
        let config: TrainConfig = serde_json::from_value(meta.get("train_config").ok_or_else(|| bad("train_config"))?.clone())?;
        let word_pos = |name: &str| -> Result<u128> {
            meta["rng"][name]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(&format!("rng.{name}")))
        };
        let restore = |which: Stream, name: &str| -> Result<ChaCha8Rng> {
            let mut rng = stream(config.seed, which);
            rng.set_word_pos(word_pos(name)?);
            Ok(rng)
        };
        let (mut m, mut v) = (ParamStore::default(), ParamStore::default());
        for name in ckpt.params.names() {
            let get = |prefix: &str| {
                ckpt.aux
                    .get(&format!("{prefix}/{name}"))
                    .cloned()
                    .ok_or_else(|| bad(&format!("{prefix}/{name}")))
            };
            m.insert(name.clone(), get("adam.m")?);
            v.insert(name.clone(), get("adam.v")?);
        }
        let adam_step = meta["adam_step"].as_u64().ok_or_else(|| bad("adam_step"))?;
        Ok(Self {
            model: Model {
                spec: ckpt.spec.clone(),
                params: ckpt.params.clone(),
            },
            adam: Adam::from_parts(adam_step, m, v),
            epochs_done: meta["epochs_done"].as_u64().ok_or_else(|| bad("epochs_done"))? as usize,
            binarize_rng: restore(Stream::Binarize, "binarize")?,
            sampling_rng: restore(Stream::Sampling, "sampling")?,
            shuffle_rng: restore(Stream::Shuffle, "shuffle")?,
            labelled_order: serde_json::from_value(meta["labelled_order"].clone())?,
            labelled_cursor: meta["labelled_cursor"].as_u64().ok_or_else(|| bad("labelled_cursor"))? as usize,
            log: RunLog {
                records: serde_json::from_value(meta["log"].clone())?,
            },
            config,
        })
    }

    pub fn resume_from(path: &Path) -> Result<Self> {
        Self::resume(&Checkpoint::load(path)?)
    }
}

/// Trains a fresh model to the configured budget.
pub fn train(spec: ModelSpec, data: &RegimeDataset, config: TrainConfig) -> Result<(Model, RunLog)> {
    let mut trainer = Trainer::new(spec, config)?;
    trainer.train_with(data, |_| Ok(None))?;
    Ok(trainer.into_parts())
}
