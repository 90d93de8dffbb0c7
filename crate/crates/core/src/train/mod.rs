//! Training: per-sample order draws under the annealed probability, AdamW
//! with decoupled weight decay, warmup + cosine learning rate, global-norm
//! clipping and condition dropout.
//!
//! Every random draw comes from a named stream keyed by the global sample
//! index, so a step depends only on `(seed, step, params, optimizer state)`.

mod optim;
mod run;

pub use optim::{clip_gradients, clip_named, optimizer_step, OptState};
pub use run::{epoch_checkpoint, final_checkpoint, opt_state_path, resume, train, train_in_memory, RunArtifacts, Trainer};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridtok::TokenGrid;
use crate::model::{sequence_loss_and_grads, ModelParams};
use crate::num::Real;
use crate::permute::{anneal_probability, canonical_scan, sample_order_split, AnnealSchedule, OrderDraw, Permutation, ScanKind};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub end_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub cond_dropout_p: f64,
    pub anneal: AnnealSchedule,
    pub canonical_kind: ScanKind,
    pub seed: u64,
    /// Parameter tensors held fixed during training.
    #[serde(default)]
    pub frozen: Vec<String>,
}

impl TrainConfig {
    /// Desk-scale defaults: 60 epochs, 10 warmup, annealing over 20..40.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 64,
            total_epochs: 60,
            warmup_epochs: 10,
            base_lr: 3e-4,
            end_lr: 1e-5,
            beta1: 0.9,
            beta2: 0.96,
            weight_decay: 0.03,
            max_grad_norm: 1.0,
            cond_dropout_p: 0.1,
            anneal: AnnealSchedule {
                start_epoch: 20,
                end_epoch: 40,
                total_epochs: 60,
            },
            canonical_kind: ScanKind::RowMajor,
            seed: 0,
            frozen: Vec::new(),
        }
    }

    /// The full-scale profile: batch 2048, 400 epochs, 100 warmup, annealing
    /// over 200..300, peak 4e-4.
    pub fn published() -> Self {
        TrainConfig {
            batch_size: 2048,
            total_epochs: 400,
            warmup_epochs: 100,
            base_lr: 4e-4,
            anneal: AnnealSchedule {
                start_epoch: 200,
                end_epoch: 300,
                total_epochs: 400,
            },
            ..Self::desk()
        }
    }

    /// Same config with a different epoch budget; schedule epochs scale along.
    pub fn with_epochs(&self, total_epochs: usize) -> Self {
        let scale = |e: usize| (e * total_epochs + self.total_epochs / 2) / self.total_epochs.max(1);
        TrainConfig {
            total_epochs,
            warmup_epochs: scale(self.warmup_epochs),
            anneal: AnnealSchedule {
                start_epoch: scale(self.anneal.start_epoch),
                end_epoch: scale(self.anneal.end_epoch),
                total_epochs,
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anneal.validate()?;
        if self.anneal.total_epochs != self.total_epochs {
            return Err(Error::config("anneal.total_epochs must equal total_epochs"));
        }
        if self.batch_size == 0 || self.total_epochs == 0 {
            return Err(Error::config("batch_size and total_epochs must be positive"));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::config("warmup_epochs exceeds total_epochs"));
        }
        let positive = [
            ("base_lr", self.base_lr),
            ("end_lr", self.end_lr),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout_p) {
            return Err(Error::config("cond_dropout_p must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("TrainConfig serializes");
        serde_json::to_string(&value).expect("JSON value serializes")
    }
}

/// Learning rate at `step`: linear warmup from 0, then cosine decay that
/// reaches `end_lr` on the last step of the run.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.total_epochs * steps_per_epoch;
    if step < warm {
        return cfg.base_lr * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warm);
    let progress = if span == 0 {
        1.0
    } else {
        ((step - warm) as f64 / span as f64).min(1.0)
    };
    cfg.end_lr + 0.5 * (cfg.base_lr - cfg.end_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Where each sample's factorization order comes from.
pub trait OrderSource: Sync {
    fn draw(&self, seed: u64, sample_index: u64, r: f64) -> OrderDraw;
}

/// The annealed mixture: a fresh uniform order with probability `r`, the
/// canonical scan otherwise. The branch draw is made for every sample.
#[derive(Debug, Clone)]
pub struct Annealed {
    pub canonical: Permutation,
}

impl Annealed {
    pub fn new(kind: ScanKind, height: usize, width: usize) -> Result<Self> {
        Ok(Annealed {
            canonical: canonical_scan(kind, height, width)?,
        })
    }
}

impl OrderSource for Annealed {
    fn draw(&self, seed: u64, sample_index: u64, r: f64) -> OrderDraw {
        let mut branch = stream(seed, Stream::OrderBranch, sample_index);
        let mut shuffle = stream(seed, Stream::OrderShuffle, sample_index);
        sample_order_split(&mut branch, &mut shuffle, r, &self.canonical)
    }
}

/// Raster order with no permutation machinery at all: no draws, no branch.
#[derive(Debug, Clone)]
pub struct FixedRaster {
    pub len: usize,
}

impl OrderSource for FixedRaster {
    fn draw(&self, _seed: u64, _sample_index: u64, _r: f64) -> OrderDraw {
        OrderDraw {
            order: Permutation::identity(self.len),
            random_branch: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    pub r: f64,
    pub frac_random: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,epoch,lr,r,frac_random,loss,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.lr, self.r, self.frac_random, self.loss, self.grad_norm
        )
    }
}

/// Checks that grids of the given shape fit the model.
pub fn check_data<F: Real>(params: &ModelParams<F>, height: usize, width: usize, vocab: usize, classes: usize) -> Result<()> {
    let c = &params.config;
    if c.seq_len != height * width {
        return Err(Error::config(format!(
            "model seq_len {} does not match {height}x{width} grids",
            c.seq_len
        )));
    }
    if c.vocab_size != vocab {
        return Err(Error::config(format!(
            "model vocab_size {} does not match data vocabulary {vocab}",
            c.vocab_size
        )));
    }
    if c.num_classes != classes {
        return Err(Error::config(format!(
            "model num_classes {} does not match data classes {classes}",
            c.num_classes
        )));
    }
    Ok(())
}

/// Checks a training set against the model before any step runs.
pub fn check_data_shapes<F: Real>(params: &ModelParams<F>, data: &[TokenGrid]) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::config("empty training set"))?;
    for g in data {
        if (g.height, g.width) != (first.height, first.width) {
            return Err(Error::config("training grids differ in shape"));
        }
        if let Some(&t) = g.tokens.iter().find(|&&t| t >= params.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: params.config.vocab_size,
            });
        }
        if g.class_label >= params.config.num_classes {
            return Err(Error::LabelOutOfRange {
                label: g.class_label,
                classes: params.config.num_classes,
            });
        }
    }
    if params.config.seq_len != first.height * first.width {
        return Err(Error::config(format!(
            "model seq_len {} does not match {}x{} grids",
            params.config.seq_len, first.height, first.width
        )));
    }
    Ok(())
}

/// One optimization step on `batch` at global step `step`.
///
/// Per sample: `r` from the schedule at the real-valued epoch, an order from
/// `orders`, condition dropout, teacher-forced loss under that order. Sample
/// gradients are summed in index order, clipped, then applied with AdamW.
#[allow(clippy::too_many_arguments)]
pub fn train_step<F: Real, S: OrderSource>(
    params: &mut ModelParams<F>,
    state: &mut OptState<F>,
    batch: &[&TokenGrid],
    step: usize,
    steps_per_epoch: usize,
    cfg: &TrainConfig,
    orders: &S,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let epoch = step as f64 / steps_per_epoch as f64;
    let r = anneal_probability(epoch.min(cfg.total_epochs as f64), &cfg.anneal)?;
    let weight = 1.0 / batch.len() as f64;
    let base = (step * cfg.batch_size) as u64;
    let shared: &ModelParams<F> = params;
    let per_sample: Vec<Result<(f64, bool, ModelParams<F>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, grid)| {
            let idx = base + i as u64;
            let draw = orders.draw(cfg.seed, idx, r);
            let dropped = stream(cfg.seed, Stream::CondDropout, idx).gen::<f64>() < cfg.cond_dropout_p;
            let label = if dropped { None } else { Some(grid.class_label) };
            let mut grads = shared.zeros_like();
            let mut drop_rng = stream(cfg.seed, Stream::Dropout, idx);
            let loss = sequence_loss_and_grads(shared, &grid.tokens, &draw.order, label, weight, &mut grads, Some(&mut drop_rng))?;
            Ok((loss, draw.random_branch, grads))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    let mut randoms = 0usize;
    for item in per_sample {
        let (l, random, g) = item?;
        loss += l * weight;
        randoms += random as usize;
        total.add_assign(&g);
    }
    for (name, t) in total.tensors_mut() {
        if cfg.frozen.contains(&name) {
            t.data.fill(F::zero());
        }
    }
    let grad_norm = clip_gradients(&mut total, cfg.max_grad_norm)?;
    let lr = lr_at(step, steps_per_epoch, cfg);
    optimizer_step(params, &total, state, lr, cfg);
    Ok(StepMetrics {
        step,
        epoch,
        lr,
        r,
        frac_random: randoms as f64 / batch.len() as f64,
        loss,
        grad_norm,
    })
}
