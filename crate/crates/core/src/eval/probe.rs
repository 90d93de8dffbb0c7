use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gridtok::TokenGrid;
use crate::model::{forward_sequence, init_params, position_nll, ModelConfig, ModelParams};
use crate::permute::{AnnealSchedule, OrderDraw, Permutation, ScanKind};
use crate::rng::{stream, Stream};
use crate::train::{train_in_memory, OrderSource, TrainConfig};

/// A 1 x `len` sequence whose last two cells hold different tokens. Two
/// orders share every step but the last two, which visit those cells in
/// opposite order. At the second-to-last step the right answer depends only
/// on which cell is being predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            len: 6,
            epochs: 300,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Final loss at the ambiguous step, averaged over the two orders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub with_tape: f64,
    pub without_tape: f64,
    /// Target-aware table present but with every row equal.
    pub equal_rows: f64,
    pub ambiguous_step: usize,
}

struct Alternate(Permutation, Permutation);

impl OrderSource for Alternate {
    fn draw(&self, _seed: u64, sample_index: u64, _r: f64) -> OrderDraw {
        let order = if sample_index % 2 == 0 { &self.0 } else { &self.1 };
        OrderDraw {
            order: order.clone(),
            random_branch: true,
        }
    }
}

fn probe_orders(len: usize) -> (Permutation, Permutation) {
    // A scrambled shared prefix, then the two final cells in either order.
    let mut prefix: Vec<usize> = (0..len - 2).rev().collect();
    prefix.rotate_left(1);
    let mut a = prefix.clone();
    a.extend([len - 2, len - 1]);
    let mut b = prefix;
    b.extend([len - 1, len - 2]);
    (Permutation::new(a).unwrap(), Permutation::new(b).unwrap())
}

fn ambiguous_loss(params: &ModelParams<f32>, grid: &TokenGrid, orders: &(Permutation, Permutation)) -> Result<f64> {
    let step = grid.len() - 2;
    let mut total = 0.0;
    for order in [&orders.0, &orders.1] {
        let (logits, labels) = forward_sequence(params, &grid.tokens, order, Some(0))?;
        total += position_nll(&logits, &labels)?[step];
    }
    Ok(total / 2.0)
}

/// Trains a micro model three times on the two-order task: with a learned
/// target-aware table, with the table zeroed and frozen, and with the table
/// frozen at equal rows.
pub fn disambiguation_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    let len = cfg.len.max(4);
    let tokens: Vec<usize> = (0..len).map(|i| usize::from(i == len - 1)).collect();
    let grid = TokenGrid::new(1, len, tokens, 0)?;
    let data = vec![grid.clone(), grid.clone()];
    let orders = probe_orders(len);
    let model = ModelConfig::micro(2, len, 1);
    let base: ModelParams<f32> = init_params(&model, &mut stream(cfg.seed, Stream::Init, 0))?;
    let train_cfg = TrainConfig {
        batch_size: 2,
        total_epochs: cfg.epochs,
        warmup_epochs: 0,
        base_lr: cfg.lr,
        end_lr: cfg.lr * 0.1,
        weight_decay: 0.0,
        cond_dropout_p: 0.0,
        anneal: AnnealSchedule::random(cfg.epochs),
        canonical_kind: ScanKind::RowMajor,
        seed: cfg.seed,
        ..TrainConfig::desk()
    };
    let frozen = TrainConfig {
        frozen: vec!["ta_pos_emb".into()],
        ..train_cfg.clone()
    };
    let run = |params: ModelParams<f32>, tc: &TrainConfig| -> Result<f64> {
        let (trained, _) = train_in_memory(params, tc, &data, Alternate(orders.0.clone(), orders.1.clone()))?;
        ambiguous_loss(&trained, &grid, &orders)
    };

    let with_tape = run(base.clone(), &train_cfg)?;

    let mut zeroed = base.clone();
    if let Some(ta) = zeroed.ta_pos_emb.as_mut() {
        ta.data.fill(0.0);
    }
    let without_tape = run(zeroed, &frozen)?;

    let mut equal = base;
    if let Some(ta) = equal.ta_pos_emb.as_mut() {
        let first = ta.row(0).to_vec();
        for r in 1..ta.shape[0] {
            ta.row_mut(r).copy_from_slice(&first);
        }
    }
    let equal_rows = run(equal, &frozen)?;

    Ok(ProbeReport {
        with_tape,
        without_tape,
        equal_rows,
        ambiguous_step: len - 2,
    })
}
