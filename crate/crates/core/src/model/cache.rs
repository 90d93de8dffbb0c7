//! Incremental decoding with per-layer key/value caches.

use crate::error::{Error, Result};
use crate::num::Real;

use super::forward::class_row;
use super::kernels::*;
use super::params::{ModelParams, Tensor};

/// Keys and values of the already-processed prefix, one buffer per layer,
/// rows of `width` values. Position 0 is the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<F> {
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    width: usize,
    capacity: usize,
    len: usize,
    label: Option<Option<usize>>,
}

impl<F: Real> KvCache<F> {
    pub fn new<G: Real>(params: &ModelParams<G>) -> Self {
        let cfg = &params.config;
        let capacity = cfg.seq_len + 1;
        KvCache {
            keys: (0..cfg.depth).map(|_| Vec::with_capacity(capacity * cfg.width)).collect(),
            values: (0..cfg.depth).map(|_| Vec::with_capacity(capacity * cfg.width)).collect(),
            width: cfg.width,
            capacity,
            len: 0,
            label: None,
        }
    }

    /// Number of cached positions, the class token included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn clear(&mut self) {
        self.keys.iter_mut().for_each(Vec::clear);
        self.values.iter_mut().for_each(Vec::clear);
        self.len = 0;
        self.label = None;
    }

    /// Cached keys of `layer`, `len() x width`.
    pub fn keys(&self, layer: usize) -> &[F] {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &[F] {
        &self.values[layer]
    }
}

/// Push one input row through every layer, appending its keys and values to
/// the cache. Returns that row's next-token logits.
pub fn forward_step<F: Real>(params: &ModelParams<F>, cache: &mut KvCache<F>, row: &[F]) -> Result<Vec<F>> {
    let cfg = &params.config;
    let d = cfg.width;
    if cache.width != d || cache.keys.len() != cfg.depth {
        return Err(Error::config("kv cache was built for a different model"));
    }
    if cache.len >= cache.capacity {
        return Err(Error::CacheMismatch {
            cached: cache.len,
            expected: cache.capacity - 1,
        });
    }
    if row.len() != d {
        return Err(Error::LengthMismatch { expected: d, actual: row.len() });
    }
    let heads = cfg.heads;
    let len = cache.len + 1;
    let mut x = row.to_vec();
    let mut y = vec![F::zero(); d];
    let mut xhat = vec![F::zero(); d];
    let mut q = vec![F::zero(); d];
    let mut k = vec![F::zero(); d];
    let mut v = vec![F::zero(); d];
    let mut hx = vec![F::zero(); d];
    let mut hr = vec![F::zero(); heads];
    let mut probs = vec![F::zero(); heads * len];
    let mut ctx = vec![F::zero(); d];
    let mut o = vec![F::zero(); d];
    for (li, l) in params.layers.iter().enumerate() {
        layer_norm_row(&x, &l.ln1_g.data, &l.ln1_b.data, &mut xhat, &mut y);
        linear_row(&y, &l.wq, &l.bq.data, &mut q);
        linear_row(&y, &l.wk, &l.bk.data, &mut k);
        linear_row(&y, &l.wv, &l.bv.data, &mut v);
        if let (Some((qg, qb)), Some((kg, kb))) = (&l.q_norm, &l.k_norm) {
            head_norm_row(&mut q, heads, &qg.data, &qb.data, &mut hx, &mut hr);
            head_norm_row(&mut k, heads, &kg.data, &kb.data, &mut hx, &mut hr);
        }
        cache.keys[li].extend_from_slice(&k);
        cache.values[li].extend_from_slice(&v);
        attention_probs_row(&q, &cache.keys[li], len, heads, &mut probs);
        attention_mix_row(&probs, &cache.values[li], len, heads, &mut ctx);
        linear_row(&ctx, &l.wo, &l.bo.data, &mut o);
        for (xi, &oi) in x.iter_mut().zip(&o) {
            *xi = *xi + oi;
        }
        layer_norm_row(&x, &l.ln2_g.data, &l.ln2_b.data, &mut xhat, &mut y);
        let mut u = vec![F::zero(); l.w1.shape[1]];
        linear_row(&y, &l.w1, &l.b1.data, &mut u);
        u.iter_mut().for_each(|z| *z = gelu(*z));
        linear_row(&u, &l.w2, &l.b2.data, &mut o);
        for (xi, &oi) in x.iter_mut().zip(&o) {
            *xi = *xi + oi;
        }
    }
    let y_f = match &params.final_norm {
        Some((g, b)) => {
            layer_norm_row(&x, &g.data, &b.data, &mut xhat, &mut y);
            &y
        }
        None => &x,
    };
    let mut logits = vec![F::zero(); cfg.vocab_size];
    linear_row(y_f, &params.head_w, &params.head_b.data, &mut logits);
    cache.len = len;
    Ok(logits)
}

/// Cached counterpart of [`forward`](super::forward::forward).
///
/// `embedded` holds the sequence rows decoded so far. The cache must already
/// hold the class token and every row but the last; only the last row (or
/// the class token, for an empty prefix) is computed. Returns the logits for
/// the next sequence token.
pub fn forward_cached<F: Real>(
    params: &ModelParams<F>,
    embedded: &Tensor<F>,
    label: Option<usize>,
    cache: &mut KvCache<F>,
) -> Result<Vec<F>> {
    let rows = if embedded.is_empty() { 0 } else { embedded.shape[0] };
    if cache.len != rows {
        return Err(Error::CacheMismatch {
            cached: cache.len,
            expected: rows,
        });
    }
    if rows == 0 {
        let row = class_row(params, label)?.to_vec();
        let out = forward_step(params, cache, &row)?;
        cache.label = Some(label);
        return Ok(out);
    }
    if cache.label != Some(label) {
        return Err(Error::config("kv cache was filled under a different class label"));
    }
    forward_step(params, cache, embedded.row(rows - 1))
}
