use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gridtok::TokenGrid;
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::num::Real;
use crate::rng::{stream, Stream};

use super::{check_data_shapes, train_step, OptState, OrderSource, StepMetrics, TrainConfig};

/// Owns everything a run mutates. Steps are a pure function of the step
/// counter and the current params/state, so a trainer rebuilt from a
/// checkpoint continues exactly where the original left off.
pub struct Trainer<'a, F, S> {
    pub params: ModelParams<F>,
    pub state: OptState<F>,
    pub cfg: TrainConfig,
    data: &'a [TokenGrid],
    orders: S,
    batch: usize,
    steps_per_epoch: usize,
    shuffled: Option<(usize, Vec<usize>)>,
}

impl<'a, F: Real, S: OrderSource> Trainer<'a, F, S> {
    pub fn new(params: ModelParams<F>, cfg: TrainConfig, data: &'a [TokenGrid], orders: S) -> Result<Self> {
        let state = OptState::new(&params);
        Self::with_state(params, state, cfg, data, orders)
    }

    pub fn with_state(params: ModelParams<F>, state: OptState<F>, cfg: TrainConfig, data: &'a [TokenGrid], orders: S) -> Result<Self> {
        cfg.validate()?;
        check_data_shapes(&params, data)?;
        let batch = cfg.batch_size.min(data.len());
        let steps_per_epoch = (data.len() / batch).max(1);
        Ok(Trainer {
            params,
            state,
            cfg,
            data,
            orders,
            batch,
            steps_per_epoch,
            shuffled: None,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.cfg.total_epochs
    }

    pub fn step(&self) -> usize {
        self.state.step as usize
    }

    pub fn is_done(&self) -> bool {
        self.step() >= self.total_steps()
    }

    /// Data indices of the batch used at `step`: each epoch visits a fresh
    /// shuffle of the training set, dropping the ragged tail.
    pub fn batch_indices(&mut self, step: usize) -> Vec<usize> {
        let epoch = step / self.steps_per_epoch;
        if self.shuffled.as_ref().map(|s| s.0) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.data.len()).collect();
            idx.shuffle(&mut stream(self.cfg.seed, Stream::DataOrder, epoch as u64));
            self.shuffled = Some((epoch, idx));
        }
        let k = step % self.steps_per_epoch;
        self.shuffled.as_ref().unwrap().1[k * self.batch..(k + 1) * self.batch].to_vec()
    }

    pub fn step_once(&mut self) -> Result<StepMetrics> {
        let step = self.step();
        let idx = self.batch_indices(step);
        let batch: Vec<&TokenGrid> = idx.iter().map(|&i| &self.data[i]).collect();
        train_step(&mut self.params, &mut self.state, &batch, step, self.steps_per_epoch, &self.cfg, &self.orders)
    }

    /// Steps until the run is complete, calling `on_step` after each one.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.step_once()?;
            on_step(self, &m)?;
            out.push(m);
        }
        Ok(out)
    }
}

/// Trains to completion without touching the filesystem.
pub fn train_in_memory<F: Real, S: OrderSource>(
    params: ModelParams<F>,
    cfg: &TrainConfig,
    data: &[TokenGrid],
    orders: S,
) -> Result<(ModelParams<F>, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(params, cfg.clone(), data, orders)?;
    let metrics = trainer.run(|_, _| Ok(()))?;
    Ok((trainer.params, metrics))
}

/// Files written by [`train`] and [`resume`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: Vec<StepMetrics>,
}

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("final.ckpt")
}

/// Optimizer state stored next to a checkpoint.
pub fn opt_state_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("opt")
}

fn drive<S: OrderSource>(mut trainer: Trainer<'_, f32, S>, dir: &Path, mut csv: File) -> Result<RunArtifacts> {
    let spe = trainer.steps_per_epoch();
    let metrics = trainer.run(|t, m| {
        writeln!(csv, "{}", m.csv_row())?;
        if (m.step + 1) % spe == 0 {
            let ckpt = epoch_checkpoint(dir, (m.step + 1) / spe);
            save_checkpoint(&ckpt, &t.params)?;
            t.state.save(opt_state_path(&ckpt))?;
        }
        Ok(())
    })?;
    csv.flush()?;
    let fin = final_checkpoint(dir);
    save_checkpoint(&fin, &trainer.params)?;
    trainer.state.save(opt_state_path(&fin))?;
    Ok(RunArtifacts {
        final_checkpoint: fin,
        metrics_csv: dir.join("metrics.csv"),
        metrics,
    })
}

/// Full run writing `metrics.csv`, `train_config.json`, one checkpoint (and
/// optimizer state) per epoch and `final.ckpt` into `dir`.
pub fn train<S: OrderSource>(dir: impl AsRef<Path>, params: ModelParams<f32>, cfg: &TrainConfig, data: &[TokenGrid], orders: S) -> Result<RunArtifacts> {
    let dir = dir.as_ref();
    let trainer = Trainer::new(params, cfg.clone(), data, orders)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("train_config.json"), cfg.canonical_json())?;
    let mut csv = File::create(dir.join("metrics.csv"))?;
    writeln!(csv, "{}", StepMetrics::CSV_HEADER)?;
    drive(trainer, dir, csv)
}

/// Continues a run from `checkpoint` and its optimizer state. Metrics rows
/// at or past the resumed step are discarded before appending.
pub fn resume<S: OrderSource>(dir: impl AsRef<Path>, checkpoint: impl AsRef<Path>, cfg: &TrainConfig, data: &[TokenGrid], orders: S) -> Result<RunArtifacts> {
    let dir = dir.as_ref();
    let checkpoint = checkpoint.as_ref();
    let params: ModelParams<f32> = load_checkpoint(checkpoint)?;
    let state = OptState::load(opt_state_path(checkpoint), &params)?;
    let from = state.step as usize;
    let trainer = Trainer::with_state(params, state, cfg.clone(), data, orders)?;
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("metrics.csv");
    let mut kept = vec![StepMetrics::CSV_HEADER.to_string()];
    if csv_path.exists() {
        for line in BufReader::new(File::open(&csv_path)?).lines().skip(1) {
            let line = line?;
            let step: usize = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Corrupt {
                    what: "metrics csv",
                    field: line.clone(),
                })?;
            if step < from {
                kept.push(line);
            }
        }
    }
    fs::write(&csv_path, kept.join("\n") + "\n")?;
    let csv = OpenOptions::new().append(true).open(&csv_path)?;
    drive(trainer, dir, csv)
}
