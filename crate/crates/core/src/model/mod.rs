//! The causal transformer.
//!
//! Layout: a class-embedding token is prepended to the embedded sequence,
//! followed by `depth` pre-norm blocks (causal multi-head attention with
//! optional per-head query/key LayerNorm, then a GELU MLP), a final LayerNorm
//! and a linear head. Every position emits next-token logits; the class
//! token's output predicts the first sequence token.
//!
//! Weight decay applies to the attention and MLP projection matrices and the
//! output head. Embedding tables, norm gains, norm biases and linear biases
//! are excluded.

mod cache;
mod checkpoint;
mod config;
mod embed;
mod forward;
mod kernels;
mod loss;
mod params;

pub use cache::{forward_cached, forward_step, KvCache};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint};
#[allow(unused_imports)]
pub(crate) use checkpoint::{parse_tensor_file, write_header, write_tensor};
pub use config::{ModelConfig, ParamCount};
pub use embed::{embed_backward, embed_row, embed_with_targets};
pub use forward::{backward, build_input, class_row, forward, forward_trace, ForwardTrace};
pub use loss::{loss, loss_and_grad, position_nll};
pub use params::{init_params, merge_positional, InitScheme, LayerParams, ModelParams, Tensor};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::permute::{apply_permutation, Permutation};
use crate::rng::Rng;

/// Whether a named parameter receives decoupled weight decay.
pub fn decays(name: &str) -> bool {
    name == "head.w"
        || [".wq", ".wk", ".wv", ".wo", ".w1", ".w2"]
            .iter()
            .any(|s| name.ends_with(s))
}

/// Teacher-forced forward over `tokens` (raster indexed) in factorization
/// order `order`. Returns the `(T + 1) x V` logits and the permuted labels.
pub fn forward_sequence<F: Real>(
    params: &ModelParams<F>,
    tokens: &[usize],
    order: &Permutation,
    label: Option<usize>,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let embedded = embed_with_targets(params, tokens, order)?;
    let labels = apply_permutation(tokens, order)?;
    Ok((forward(params, &embedded, label)?, labels))
}

/// Loss of one sequence under `order`, with gradients (scaled by `weight`)
/// accumulated into `grads`.
pub fn sequence_loss_and_grads<F: Real>(
    params: &ModelParams<F>,
    tokens: &[usize],
    order: &Permutation,
    label: Option<usize>,
    weight: f64,
    grads: &mut ModelParams<F>,
    dropout_rng: Option<&mut Rng>,
) -> Result<f64> {
    if grads.is_merged() != params.is_merged() {
        return Err(Error::config("gradient buffer does not match parameters"));
    }
    let embedded = embed_with_targets(params, tokens, order)?;
    let labels = apply_permutation(tokens, order)?;
    let input = build_input(params, &embedded, label)?;
    let trace = forward_trace(params, &input, dropout_rng);
    let (loss, dlogits) = loss_and_grad(&trace.logits, &labels, weight)?;
    let dinput = backward(params, &trace, &dlogits, grads);
    let d = params.config.width;
    let cls = label.unwrap_or(params.config.num_classes);
    for (a, &b) in grads.cls_emb.row_mut(cls).iter_mut().zip(&dinput[..d]) {
        *a += b;
    }
    embed_backward(tokens, order, &dinput[d..], grads);
    Ok(loss)
}

#[cfg(test)]
mod tests;
