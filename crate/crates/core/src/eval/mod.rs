//! Likelihood evaluation against the exact Potts oracle, the target-aware
//! disambiguation probe, annealing sweeps and gradient checks.

mod gradcheck;
mod probe;
mod sweep;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, ABS_FLOOR};
pub use probe::{disambiguation_probe, ProbeConfig, ProbeReport};
pub use sweep::{sweep_annealing, sweep_csv, write_sweep_csv, SweepCell, SweepResult, SweepRow, SWEEP_CSV_HEADER};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridtok::{draw_grids, exact_conditional, GridSampler, GridSpec, TokenGrid};
use crate::model::{forward_sequence, position_nll, ModelParams};
use crate::num::Real;
use crate::permute::Permutation;

/// Per-step negative log-likelihoods of one grid under one order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderNll {
    /// `steps[t] = -log p(x[order[t]] | x[order[..t]], class)`.
    pub steps: Vec<f64>,
    pub mean: f64,
}

impl OrderNll {
    fn from_steps(steps: Vec<f64>) -> Self {
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        OrderNll { steps, mean }
    }

    pub fn total(&self) -> f64 {
        self.steps.iter().sum()
    }
}

/// Anything that assigns teacher-forced per-step NLLs to a grid.
pub trait Scorer: Sync {
    fn nll_steps(&self, grid: &TokenGrid, order: &Permutation) -> Result<Vec<f64>>;
}

impl<F: Real> Scorer for ModelParams<F> {
    fn nll_steps(&self, grid: &TokenGrid, order: &Permutation) -> Result<Vec<f64>> {
        let (logits, labels) = forward_sequence(self, &grid.tokens, order, Some(grid.class_label))?;
        position_nll(&logits, &labels)
    }
}

/// The true conditionals, by brute-force summation over completions.
/// Only for specs within the enumeration bound.
#[derive(Debug, Clone)]
pub struct ExactScorer<'a> {
    pub spec: &'a GridSpec,
}

impl Scorer for ExactScorer<'_> {
    fn nll_steps(&self, grid: &TokenGrid, order: &Permutation) -> Result<Vec<f64>> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::with_capacity(order.len());
        for &pos in order.order() {
            let p = exact_conditional(self.spec, grid.class_label, &seen, pos)?;
            out.push(-p[grid.tokens[pos]].ln());
            seen.insert(pos, grid.tokens[pos]);
        }
        Ok(out)
    }
}

/// Teacher-forced NLL of `grid` under `order`, conditioned on its class.
pub fn nll_under_order<S: Scorer + ?Sized>(model: &S, grid: &TokenGrid, order: &Permutation) -> Result<OrderNll> {
    Ok(OrderNll::from_steps(model.nll_steps(grid, order)?))
}

/// `n` grids drawn from the spec with uniformly drawn classes.
pub fn sample_grids(spec: &GridSpec, n: usize, seed: u64) -> Result<Vec<TokenGrid>> {
    draw_grids(&GridSampler::new(spec)?, n, seed, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub order: String,
    pub model_nll: f64,
    pub oracle_nll: f64,
    pub gap: f64,
}

/// Mean per-token model NLL versus the exact per-token NLL on `grids`, one
/// row per order. The oracle term is `-log p(x | class) / T`, which the chain
/// rule makes identical for every order.
pub fn oracle_gap<S: Scorer + ?Sized>(model: &S, spec: &GridSpec, orders: &[(String, Permutation)], grids: &[TokenGrid]) -> Result<Vec<GapRow>> {
    if grids.is_empty() {
        return Err(Error::config("oracle_gap needs at least one grid"));
    }
    let sampler = GridSampler::new(spec)?;
    if !sampler.mode().is_exact() {
        return Err(Error::Intractable {
            bits: spec.state_bits(),
            limit: crate::gridtok::ORACLE_BITS_LIMIT,
        });
    }
    let t_len = spec.num_cells() as f64;
    let oracle: Vec<f64> = grids
        .iter()
        .map(|g| -sampler.log_prob(g).expect("exact mode") / t_len)
        .collect();
    let oracle_nll = oracle.iter().sum::<f64>() / grids.len() as f64;
    orders
        .iter()
        .map(|(name, order)| {
            let per: Vec<Result<f64>> = grids.par_iter().map(|g| nll_under_order(model, g, order).map(|n| n.mean)).collect();
            let mut sum = 0.0;
            for v in per {
                sum += v?;
            }
            let model_nll = sum / grids.len() as f64;
            Ok(GapRow {
                order: name.clone(),
                model_nll,
                oracle_nll,
                gap: model_nll - oracle_nll,
            })
        })
        .collect()
}

/// Raster-order gap, the number the sweeps and quality checks report.
pub fn raster_gap<S: Scorer + ?Sized>(model: &S, spec: &GridSpec, grids: &[TokenGrid]) -> Result<GapRow> {
    let raster = vec![("row_major".to_string(), Permutation::identity(spec.num_cells()))];
    Ok(oracle_gap(model, spec, &raster, grids)?.remove(0))
}
