//! Row kernels shared by the full and the cached forward paths. Both paths
//! run exactly these loops in the same order, which is what makes cached
//! decoding bit-identical to re-running the whole prefix.

use crate::num::{axpy, dot, Real};

use super::params::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `out = b + x · W` with `W` stored `[in, out]`.
#[inline]
pub(crate) fn linear_row<F: Real>(x: &[F], w: &Tensor<F>, b: &[F], out: &mut [F]) {
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, w.row(i), out);
    }
}

/// LayerNorm of one row. Writes the normalized row to `xhat`, the affine
/// output to `out`, returns `1 / sqrt(var + eps)`.
#[inline]
pub(crate) fn layer_norm_row<F: Real>(x: &[F], g: &[F], b: &[F], xhat: &mut [F], out: &mut [F]) -> F {
    let n = F::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + F::from_f64(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * g[i] + b[i];
    }
    rstd
}

/// Backward of [`layer_norm_row`]: accumulates `dg`, `db` and adds the input
/// gradient into `dx`.
#[inline]
pub(crate) fn layer_norm_row_backward<F: Real>(
    dy: &[F],
    xhat: &[F],
    rstd: F,
    g: &[F],
    dg: &mut [F],
    db: &mut [F],
    dx: &mut [F],
) {
    let n = xhat.len();
    let nf = F::from_f64(n as f64);
    let mut mean_dxhat = F::zero();
    let mut mean_dxhat_xhat = F::zero();
    for i in 0..n {
        let dxh = dy[i] * g[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[i];
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
    }
    mean_dxhat /= nf;
    mean_dxhat_xhat /= nf;
    for i in 0..n {
        let dxh = dy[i] * g[i];
        dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// tanh-approximated GELU.
#[inline]
pub(crate) fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

/// Causal attention weights of one query row over `len` cached keys, per head.
/// `probs` is laid out `[head][key]`.
#[inline]
pub(crate) fn attention_probs_row<F: Real>(
    q: &[F],
    keys: &[F],
    len: usize,
    heads: usize,
    probs: &mut [F],
) {
    let d = q.len();
    let hd = d / heads;
    let scale = F::one() / F::from_f64(hd as f64).sqrt();
    for h in 0..heads {
        let qh = &q[h * hd..(h + 1) * hd];
        let p = &mut probs[h * len..(h + 1) * len];
        let mut max = F::neg_infinity();
        for j in 0..len {
            let s = dot(qh, &keys[j * d + h * hd..j * d + (h + 1) * hd]) * scale;
            p[j] = s;
            if s > max {
                max = s;
            }
        }
        let mut sum = F::zero();
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        for pj in p.iter_mut() {
            *pj /= sum;
        }
    }
}

/// `out[head] = Σ_j probs[head][j] · values[j][head]`.
#[inline]
pub(crate) fn attention_mix_row<F: Real>(probs: &[F], values: &[F], len: usize, heads: usize, out: &mut [F]) {
    let d = out.len();
    let hd = d / heads;
    out.iter_mut().for_each(|o| *o = F::zero());
    for h in 0..heads {
        let p = &probs[h * len..(h + 1) * len];
        let oh = &mut out[h * hd..(h + 1) * hd];
        for (j, &pj) in p.iter().enumerate() {
            axpy(pj, &values[j * d + h * hd..j * d + (h + 1) * hd], oh);
        }
    }
}

/// Per-head LayerNorm in place. Returns `(xhat, rstd per head)` for backward.
#[inline]
pub(crate) fn head_norm_row<F: Real>(
    x: &mut [F],
    heads: usize,
    g: &[F],
    b: &[F],
    xhat: &mut [F],
    rstd: &mut [F],
) {
    let hd = x.len() / heads;
    for h in 0..heads {
        let src = x[h * hd..(h + 1) * hd].to_vec();
        rstd[h] = layer_norm_row(&src, g, b, &mut xhat[h * hd..(h + 1) * hd], &mut x[h * hd..(h + 1) * hd]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_is_normalized() {
        let x = [1.0f64, 2.0, 4.0, 7.0];
        let (mut xhat, mut out) = ([0.0; 4], [0.0; 4]);
        layer_norm_row(&x, &[1.0; 4], &[0.0; 4], &mut xhat, &mut out);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
    }
}
