use crate::error::{Error, Result};
use crate::num::Real;
use crate::permute::Permutation;

use super::params::{ModelParams, Tensor};

/// One embedded input row: the token at grid position `pos`, plus the
/// target-aware entry of the position predicted next (if any).
///
/// The positional terms are summed first, so a merged table yields the very
/// same floating-point values on raster order.
pub fn embed_row<F: Real>(params: &ModelParams<F>, token: usize, pos: usize, next_pos: Option<usize>) -> Result<Vec<F>> {
    let cfg = &params.config;
    if token >= cfg.vocab_size {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: cfg.vocab_size,
        });
    }
    let tok = params.tok_emb.row(token);
    let p = params.pos_emb.row(pos);
    let row = match (next_pos, &params.ta_pos_emb) {
        (Some(next), Some(ta)) => {
            let t = ta.row(next);
            (0..cfg.width).map(|i| tok[i] + (p[i] + t[i])).collect()
        }
        (Some(next), None) if next != pos + 1 => return Err(Error::MergedNonRaster),
        _ => (0..cfg.width).map(|i| tok[i] + p[i]).collect(),
    };
    Ok(row)
}

/// Embeds a raster-indexed token sequence under factorization order `perm`:
/// row `t` is `tok[x[τ_t]] + pos[τ_t] + ta[τ_{t+1}]`, and the final row gets
/// no target-aware term.
pub fn embed_with_targets<F: Real>(params: &ModelParams<F>, tokens: &[usize], perm: &Permutation) -> Result<Tensor<F>> {
    let t_len = params.config.seq_len;
    if tokens.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            actual: tokens.len(),
        });
    }
    if perm.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            actual: perm.len(),
        });
    }
    if params.is_merged() && !perm.is_identity() {
        return Err(Error::MergedNonRaster);
    }
    let order = perm.order();
    let mut data = Vec::with_capacity(t_len * params.config.width);
    for t in 0..t_len {
        let next = order.get(t + 1).copied();
        data.extend(embed_row(params, tokens[order[t]], order[t], next)?);
    }
    Tensor::from_vec(&[t_len, params.config.width], data)
}

/// Routes the gradient of the embedded rows back into the token, positional
/// and target-aware tables. `d_rows` has one row per embedded position.
pub fn embed_backward<F: Real>(
    tokens: &[usize],
    perm: &Permutation,
    d_rows: &[F],
    grads: &mut ModelParams<F>,
) {
    let d = grads.config.width;
    let order = perm.order();
    let rows = d_rows.len() / d;
    for t in 0..rows {
        let g = &d_rows[t * d..(t + 1) * d];
        let pos = order[t];
        for (a, &b) in grads.tok_emb.row_mut(tokens[pos]).iter_mut().zip(g) {
            *a += b;
        }
        for (a, &b) in grads.pos_emb.row_mut(pos).iter_mut().zip(g) {
            *a += b;
        }
        if let (Some(next), Some(ta)) = (order.get(t + 1), grads.ta_pos_emb.as_mut()) {
            for (a, &b) in ta.row_mut(*next).iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}
