use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::gridtok::{GridSpec, TokenGrid};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::permute::AnnealSchedule;
use crate::rng::{stream, Stream};
use crate::train::{train_in_memory, Annealed, TrainConfig};

use super::raster_gap;

pub const SWEEP_CSV_HEADER: &str = "start,end,seed,mean_nll,oracle_nll,gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepCell {
    pub start: usize,
    pub end: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub start: usize,
    pub end: usize,
    pub seed: u64,
    pub mean_nll: f64,
    pub oracle_nll: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// `(start, end)` pairs that do not form a valid schedule.
    pub skipped: Vec<(usize, usize)>,
}

impl SweepResult {
    /// Rows for one schedule, in seed order.
    pub fn rows_for(&self, start: usize, end: usize) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.start == start && r.end == end).collect()
    }
}

/// Trains one model per `(start, end, seed)` and reports its raster oracle
/// gap on `eval`. All cells share the training set; the seed picks the
/// initialization and every training draw, so cells with the same seed
/// differ only in their schedule. Cells run in parallel; rows come back in
/// `starts x ends x seeds` order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_annealing(
    spec: &GridSpec,
    model: &ModelConfig,
    base: &TrainConfig,
    starts: &[usize],
    ends: &[usize],
    seeds: &[u64],
    train: &[TokenGrid],
    eval: &[TokenGrid],
) -> Result<SweepResult> {
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &start in starts {
        for &end in ends {
            if AnnealSchedule::new(start, end, base.total_epochs).is_err() {
                skipped.push((start, end));
                continue;
            }
            cells.extend(seeds.iter().map(|&seed| SweepCell { start, end, seed }));
        }
    }
    let rows: Vec<Result<SweepRow>> = cells.par_iter().map(|c| run_cell(spec, model, base, *c, train, eval)).collect();
    Ok(SweepResult {
        rows: rows.into_iter().collect::<Result<_>>()?,
        skipped,
    })
}

fn run_cell(spec: &GridSpec, model: &ModelConfig, base: &TrainConfig, cell: SweepCell, train: &[TokenGrid], eval: &[TokenGrid]) -> Result<SweepRow> {
    let cfg = TrainConfig {
        anneal: AnnealSchedule::new(cell.start, cell.end, base.total_epochs)?,
        seed: cell.seed,
        ..base.clone()
    };
    let params: ModelParams<f32> = init_params(model, &mut stream(cell.seed, Stream::Init, 0))?;
    let orders = Annealed::new(cfg.canonical_kind, spec.height, spec.width)?;
    let (trained, _) = train_in_memory(params, &cfg, train, orders)?;
    let gap = raster_gap(&trained, spec, eval)?;
    Ok(SweepRow {
        start: cell.start,
        end: cell.end,
        seed: cell.seed,
        mean_nll: gap.model_nll,
        oracle_nll: gap.oracle_nll,
        gap: gap.gap,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.start, r.end, r.seed, r.mean_nll, r.oracle_nll, r.gap).unwrap();
    }
    out
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    fs::write(path, sweep_csv(rows))?;
    Ok(())
}
