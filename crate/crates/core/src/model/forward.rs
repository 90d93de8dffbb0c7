//! Full-sequence forward pass with a recorded trace, and its backward pass.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::num::{axpy, dot, Real};
use crate::rng::Rng;

use super::kernels::*;
use super::params::{LayerParams, ModelParams, Tensor};

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace<F> {
    xhat1: Vec<F>,
    rstd1: Vec<F>,
    y1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    q_xhat: Vec<F>,
    q_rstd: Vec<F>,
    k_xhat: Vec<F>,
    k_rstd: Vec<F>,
    /// Row `i` uses `heads * (i + 1)` entries starting at `i * heads * n`.
    probs: Vec<F>,
    attn_keep: Option<Vec<F>>,
    ctx: Vec<F>,
    resid1_keep: Option<Vec<F>>,
    xhat2: Vec<F>,
    rstd2: Vec<F>,
    y2: Vec<F>,
    u: Vec<F>,
    a: Vec<F>,
    resid2_keep: Option<Vec<F>>,
}

/// Activations of one forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    rows: usize,
    layers: Vec<LayerTrace<F>>,
    xhat_f: Vec<F>,
    rstd_f: Vec<F>,
    y_f: Vec<F>,
    pub logits: Tensor<F>,
}

fn keep_mask<F: Real>(rng: &mut Rng, len: usize, p: f64) -> Vec<F> {
    let scale = F::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { scale })
        .collect()
}

fn linear_rows<F: Real>(x: &[F], rows: usize, w: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut out = vec![F::zero(); rows * dout];
    for r in 0..rows {
        linear_row(&x[r * din..(r + 1) * din], w, &b.data, &mut out[r * dout..(r + 1) * dout]);
    }
    out
}

fn norm_rows<F: Real>(x: &[F], rows: usize, g: &Tensor<F>, b: &Tensor<F>) -> (Vec<F>, Vec<F>, Vec<F>) {
    let d = g.len();
    let mut xhat = vec![F::zero(); rows * d];
    let mut y = vec![F::zero(); rows * d];
    let mut rstd = vec![F::zero(); rows];
    for r in 0..rows {
        let s = r * d..(r + 1) * d;
        rstd[r] = layer_norm_row(&x[s.clone()], &g.data, &b.data, &mut xhat[s.clone()], &mut y[s]);
    }
    (xhat, rstd, y)
}

fn layer_forward<F: Real>(
    l: &LayerParams<F>,
    heads: usize,
    dropout: (f64, f64),
    x: Vec<F>,
    rows: usize,
    mut rng: Option<&mut Rng>,
) -> (LayerTrace<F>, Vec<F>) {
    let d = l.wq.shape[0];
    let (xhat1, rstd1, y1) = norm_rows(&x, rows, &l.ln1_g, &l.ln1_b);
    let mut q = linear_rows(&y1, rows, &l.wq, &l.bq);
    let mut k = linear_rows(&y1, rows, &l.wk, &l.bk);
    let v = linear_rows(&y1, rows, &l.wv, &l.bv);
    let (mut q_xhat, mut q_rstd, mut k_xhat, mut k_rstd) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if let (Some((qg, qb)), Some((kg, kb))) = (&l.q_norm, &l.k_norm) {
        q_xhat = vec![F::zero(); rows * d];
        k_xhat = vec![F::zero(); rows * d];
        q_rstd = vec![F::zero(); rows * heads];
        k_rstd = vec![F::zero(); rows * heads];
        for r in 0..rows {
            let s = r * d..(r + 1) * d;
            let hs = r * heads..(r + 1) * heads;
            head_norm_row(&mut q[s.clone()], heads, &qg.data, &qb.data, &mut q_xhat[s.clone()], &mut q_rstd[hs.clone()]);
            head_norm_row(&mut k[s.clone()], heads, &kg.data, &kb.data, &mut k_xhat[s], &mut k_rstd[hs]);
        }
    }

    let (p_resid, p_attn) = dropout;
    let stride = heads * rows;
    let mut probs = vec![F::zero(); rows * stride];
    let mut attn_keep = None;
    let mut ctx = vec![F::zero(); rows * d];
    for i in 0..rows {
        let len = i + 1;
        let p = &mut probs[i * stride..i * stride + heads * len];
        attention_probs_row(&q[i * d..(i + 1) * d], &k, len, heads, p);
    }
    if p_attn > 0.0 {
        if let Some(r) = rng.as_deref_mut() {
            attn_keep = Some(keep_mask::<F>(r, probs.len(), p_attn));
        }
    }
    for i in 0..rows {
        let len = i + 1;
        let span = i * stride..i * stride + heads * len;
        let out = &mut ctx[i * d..(i + 1) * d];
        match &attn_keep {
            Some(keep) => {
                let dropped: Vec<F> = probs[span.clone()].iter().zip(&keep[span]).map(|(&p, &m)| p * m).collect();
                attention_mix_row(&dropped, &v, len, heads, out);
            }
            None => attention_mix_row(&probs[span], &v, len, heads, out),
        }
    }

    let o1 = linear_rows(&ctx, rows, &l.wo, &l.bo);
    let resid1_keep = match (p_resid > 0.0, rng.as_deref_mut()) {
        (true, Some(r)) => Some(keep_mask::<F>(r, o1.len(), p_resid)),
        _ => None,
    };
    let h: Vec<F> = match &resid1_keep {
        Some(m) => x.iter().zip(&o1).zip(m).map(|((&a, &b), &s)| a + b * s).collect(),
        None => x.iter().zip(&o1).map(|(&a, &b)| a + b).collect(),
    };
    let (xhat2, rstd2, y2) = norm_rows(&h, rows, &l.ln2_g, &l.ln2_b);
    let u = linear_rows(&y2, rows, &l.w1, &l.b1);
    let a: Vec<F> = u.iter().map(|&z| gelu(z)).collect();
    let o2 = linear_rows(&a, rows, &l.w2, &l.b2);
    let resid2_keep = match (p_resid > 0.0, rng.as_deref_mut()) {
        (true, Some(r)) => Some(keep_mask::<F>(r, o2.len(), p_resid)),
        _ => None,
    };
    let x_out: Vec<F> = match &resid2_keep {
        Some(m) => h.iter().zip(&o2).zip(m).map(|((&a, &b), &s)| a + b * s).collect(),
        None => h.iter().zip(&o2).map(|(&a, &b)| a + b).collect(),
    };
    let trace = LayerTrace {
        xhat1,
        rstd1,
        y1,
        q,
        k,
        v,
        q_xhat,
        q_rstd,
        k_xhat,
        k_rstd,
        probs,
        attn_keep,
        ctx,
        resid1_keep,
        xhat2,
        rstd2,
        y2,
        u,
        a,
        resid2_keep,
    };
    (trace, x_out)
}

/// Runs the transformer over `input` (rows x width, the class row first).
/// Dropout is applied only when `rng` is given and the config enables it.
pub fn forward_trace<F: Real>(params: &ModelParams<F>, input: &Tensor<F>, mut rng: Option<&mut Rng>) -> ForwardTrace<F> {
    let cfg = &params.config;
    let rows = input.shape[0];
    let mut x = input.data.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (t, out) = layer_forward(l, cfg.heads, (cfg.dropout, cfg.attn_dropout), x, rows, rng.as_deref_mut());
        x = out;
        layers.push(t);
    }
    let (xhat_f, rstd_f, y_f) = match &params.final_norm {
        Some((g, b)) => norm_rows(&x, rows, g, b),
        None => (Vec::new(), Vec::new(), x),
    };
    let logits = Tensor {
        shape: vec![rows, cfg.vocab_size],
        data: linear_rows(&y_f, rows, &params.head_w, &params.head_b),
    };
    ForwardTrace {
        rows,
        layers,
        xhat_f,
        rstd_f,
        y_f,
        logits,
    }
}

/// Class row for `label`; `None` selects the null class.
pub fn class_row<F: Real>(params: &ModelParams<F>, label: Option<usize>) -> Result<&[F]> {
    let c = params.config.num_classes;
    let idx = label.unwrap_or(c);
    if idx > c {
        return Err(Error::LabelOutOfRange { label: idx, classes: c + 1 });
    }
    Ok(params.cls_emb.row(idx))
}

/// Prepends the class row to `embedded` (rows x width).
pub fn build_input<F: Real>(params: &ModelParams<F>, embedded: &Tensor<F>, label: Option<usize>) -> Result<Tensor<F>> {
    let d = params.config.width;
    let rows = embedded.shape[0];
    if embedded.shape.len() != 2 || embedded.shape[1] != d {
        return Err(Error::TensorShape {
            name: "embedded".into(),
            expected: vec![rows, d],
            found: embedded.shape.clone(),
        });
    }
    if rows > params.config.seq_len {
        return Err(Error::LengthMismatch {
            expected: params.config.seq_len,
            actual: rows,
        });
    }
    let mut data = Vec::with_capacity((rows + 1) * d);
    data.extend_from_slice(class_row(params, label)?);
    data.extend_from_slice(&embedded.data);
    Tensor::from_vec(&[rows + 1, d], data)
}

/// Next-token logits for every input position: `(rows + 1) x V`. Row 0 is the
/// class token's output and predicts the first sequence token.
pub fn forward<F: Real>(params: &ModelParams<F>, embedded: &Tensor<F>, label: Option<usize>) -> Result<Tensor<F>> {
    let input = build_input(params, embedded, label)?;
    Ok(forward_trace(params, &input, None).logits)
}

fn linear_backward<F: Real>(
    x: &[F],
    dy: &[F],
    rows: usize,
    w: &Tensor<F>,
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
    dx: Option<&mut [F]>,
) {
    let (din, dout) = (w.shape[0], w.shape[1]);
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        let xr = &x[r * din..(r + 1) * din];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(xi, dyr, dw.row_mut(i));
        }
        for (b, &g) in db.data.iter_mut().zip(dyr) {
            *b += g;
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * dout..(r + 1) * dout];
            for i in 0..din {
                dx[r * din + i] += dot(w.row(i), dyr);
            }
        }
    }
}

fn norm_backward<F: Real>(
    dy: &[F],
    xhat: &[F],
    rstd: &[F],
    g: &Tensor<F>,
    dg: &mut Tensor<F>,
    db: &mut Tensor<F>,
    dx: &mut [F],
) {
    let d = g.len();
    for (r, &rs) in rstd.iter().enumerate() {
        let s = r * d..(r + 1) * d;
        layer_norm_row_backward(&dy[s.clone()], &xhat[s.clone()], rs, &g.data, &mut dg.data, &mut db.data, &mut dx[s]);
    }
}

fn layer_backward<F: Real>(
    t: &LayerTrace<F>,
    l: &LayerParams<F>,
    gl: &mut LayerParams<F>,
    heads: usize,
    rows: usize,
    dx_out: Vec<F>,
) -> Vec<F> {
    let d = l.wq.shape[0];
    let m = l.w1.shape[1];
    let hd = d / heads;
    let scale = F::one() / F::from_f64(hd as f64).sqrt();

    // MLP branch.
    let d_o2: Vec<F> = match &t.resid2_keep {
        Some(k) => dx_out.iter().zip(k).map(|(&g, &s)| g * s).collect(),
        None => dx_out.clone(),
    };
    let mut da = vec![F::zero(); rows * m];
    linear_backward(&t.a, &d_o2, rows, &l.w2, &mut gl.w2, &mut gl.b2, Some(&mut da));
    let du: Vec<F> = da.iter().zip(&t.u).map(|(&g, &z)| g * gelu_grad(z)).collect();
    let mut dy2 = vec![F::zero(); rows * d];
    linear_backward(&t.y2, &du, rows, &l.w1, &mut gl.w1, &mut gl.b1, Some(&mut dy2));
    let mut dh = dx_out;
    norm_backward(&dy2, &t.xhat2, &t.rstd2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b, &mut dh);

    // Attention branch.
    let d_o1: Vec<F> = match &t.resid1_keep {
        Some(k) => dh.iter().zip(k).map(|(&g, &s)| g * s).collect(),
        None => dh.clone(),
    };
    let mut dctx = vec![F::zero(); rows * d];
    linear_backward(&t.ctx, &d_o1, rows, &l.wo, &mut gl.wo, &mut gl.bo, Some(&mut dctx));

    let stride = heads * rows;
    let mut dq = vec![F::zero(); rows * d];
    let mut dk = vec![F::zero(); rows * d];
    let mut dv = vec![F::zero(); rows * d];
    let mut dp = vec![F::zero(); rows];
    for i in 0..rows {
        let len = i + 1;
        for h in 0..heads {
            let off = i * stride + h * len;
            let p = &t.probs[off..off + len];
            let keep = t.attn_keep.as_ref().map(|k| &k[off..off + len]);
            let dci = &dctx[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..len {
                let vj = j * d + h * hd..j * d + (h + 1) * hd;
                let used = match keep {
                    Some(k) => p[j] * k[j],
                    None => p[j],
                };
                let mut g = dot(dci, &t.v[vj.clone()]);
                axpy(used, dci, &mut dv[vj]);
                if let Some(k) = keep {
                    g *= k[j];
                }
                dp[j] = g;
            }
            let mut s = F::zero();
            for j in 0..len {
                s += p[j] * dp[j];
            }
            let qi = i * d + h * hd..i * d + (h + 1) * hd;
            for j in 0..len {
                let ds = p[j] * (dp[j] - s) * scale;
                let kj = j * d + h * hd..j * d + (h + 1) * hd;
                axpy(ds, &t.k[kj.clone()], &mut dq[qi.clone()]);
                axpy(ds, &t.q[qi.clone()], &mut dk[kj]);
            }
        }
    }
    if let (Some((qg, _)), Some((kg, _))) = (&l.q_norm, &l.k_norm) {
        let (gq, gk) = (gl.q_norm.as_mut().unwrap(), gl.k_norm.as_mut().unwrap());
        let mut dq_raw = vec![F::zero(); rows * d];
        let mut dk_raw = vec![F::zero(); rows * d];
        for r in 0..rows {
            for h in 0..heads {
                let s = r * d + h * hd..r * d + (h + 1) * hd;
                layer_norm_row_backward(&dq[s.clone()], &t.q_xhat[s.clone()], t.q_rstd[r * heads + h], &qg.data, &mut gq.0.data, &mut gq.1.data, &mut dq_raw[s.clone()]);
                layer_norm_row_backward(&dk[s.clone()], &t.k_xhat[s.clone()], t.k_rstd[r * heads + h], &kg.data, &mut gk.0.data, &mut gk.1.data, &mut dk_raw[s]);
            }
        }
        dq = dq_raw;
        dk = dk_raw;
    }
    let mut dy1 = vec![F::zero(); rows * d];
    linear_backward(&t.y1, &dq, rows, &l.wq, &mut gl.wq, &mut gl.bq, Some(&mut dy1));
    linear_backward(&t.y1, &dk, rows, &l.wk, &mut gl.wk, &mut gl.bk, Some(&mut dy1));
    linear_backward(&t.y1, &dv, rows, &l.wv, &mut gl.wv, &mut gl.bv, Some(&mut dy1));
    let mut dx = dh;
    norm_backward(&dy1, &t.xhat1, &t.rstd1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b, &mut dx);
    dx
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the transformer input (rows x width).
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    trace: &ForwardTrace<F>,
    dlogits: &Tensor<F>,
    grads: &mut ModelParams<F>,
) -> Vec<F> {
    let rows = trace.rows;
    let d = params.config.width;
    let mut dy = vec![F::zero(); rows * d];
    linear_backward(&trace.y_f, &dlogits.data, rows, &params.head_w, &mut grads.head_w, &mut grads.head_b, Some(&mut dy));
    let mut dx = match (&params.final_norm, &mut grads.final_norm) {
        (Some((g, _)), Some((dg, db))) => {
            let mut dx = vec![F::zero(); rows * d];
            norm_backward(&dy, &trace.xhat_f, &trace.rstd_f, g, dg, db, &mut dx);
            dx
        }
        _ => dy,
    };
    for (i, l) in params.layers.iter().enumerate().rev() {
        dx = layer_backward(&trace.layers[i], l, &mut grads.layers[i], params.config.heads, rows, dx);
    }
    dx
}
