use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Real;

use super::config::ModelConfig;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&x| x.to_f64() * x.to_f64()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    /// Per-head LayerNorm on queries and keys, shared across heads.
    pub q_norm: Option<(Tensor<F>, Tensor<F>)>,
    pub k_norm: Option<(Tensor<F>, Tensor<F>)>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

/// All weights of the model. Linear weights are stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<F>,
    pub pos_emb: Tensor<F>,
    /// Target-aware positional table. `None` once merged into `pos_emb`.
    pub ta_pos_emb: Option<Tensor<F>>,
    /// `C + 1` rows; row `C` is the null (unconditional) class.
    pub cls_emb: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    /// Absent for depth-0 models, whose head is a plain linear readout.
    pub final_norm: Option<(Tensor<F>, Tensor<F>)>,
    pub head_w: Tensor<F>,
    pub head_b: Tensor<F>,
}

/// Initialization knobs. The default is truncated normal (±2σ) with
/// σ = 0.02 for embeddings and projections, zero biases, unit norm gains and
/// a zero output projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub std: f64,
    pub zero_head: bool,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme {
            std: 0.02,
            zero_head: true,
        }
    }
}

fn trunc_normal<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // Box-Muller on the stream's f64s keeps draws platform independent.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            data.push(F::from_f64(z * std));
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

pub fn init_params<F: Real, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams<F>> {
    ModelParams::init(config, rng, InitScheme::default())
}

impl<F: Real> ModelParams<F> {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R, scheme: InitScheme) -> Result<Self> {
        config.validate()?;
        let (d, m, v, t, c) = (
            config.width,
            config.mlp_dim,
            config.vocab_size,
            config.seq_len,
            config.num_classes,
        );
        let hd = config.head_dim();
        let std = scheme.std;
        let norm = |n: usize| (Tensor::filled(&[n], F::one()), Tensor::zeros(&[n]));
        let tok_emb = trunc_normal(rng, &[v, d], std);
        let pos_emb = trunc_normal(rng, &[t, d], std);
        let ta_pos_emb = Some(trunc_normal(rng, &[t, d], std));
        let cls_emb = trunc_normal(rng, &[c + 1, d], std);
        let layers = (0..config.depth)
            .map(|_| {
                let (ln1_g, ln1_b) = norm(d);
                let (ln2_g, ln2_b) = norm(d);
                LayerParams {
                    ln1_g,
                    ln1_b,
                    wq: trunc_normal(rng, &[d, d], std),
                    bq: Tensor::zeros(&[d]),
                    wk: trunc_normal(rng, &[d, d], std),
                    bk: Tensor::zeros(&[d]),
                    wv: trunc_normal(rng, &[d, d], std),
                    bv: Tensor::zeros(&[d]),
                    q_norm: config.qk_norm.then(|| norm(hd)),
                    k_norm: config.qk_norm.then(|| norm(hd)),
                    wo: trunc_normal(rng, &[d, d], std),
                    bo: Tensor::zeros(&[d]),
                    ln2_g,
                    ln2_b,
                    w1: trunc_normal(rng, &[d, m], std),
                    b1: Tensor::zeros(&[m]),
                    w2: trunc_normal(rng, &[m, d], std),
                    b2: Tensor::zeros(&[d]),
                }
            })
            .collect();
        let head_w = if scheme.zero_head {
            Tensor::zeros(&[d, v])
        } else {
            trunc_normal(rng, &[d, v], std)
        };
        Ok(ModelParams {
            config: config.clone(),
            tok_emb,
            pos_emb,
            ta_pos_emb,
            cls_emb,
            layers,
            final_norm: (config.depth > 0).then(|| norm(d)),
            head_w,
            head_b: Tensor::zeros(&[v]),
        })
    }

    /// Same structure, every entry zero. Used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = F::zero());
        }
        z
    }

    pub fn is_merged(&self) -> bool {
        self.ta_pos_emb.is_none()
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        if let Some(t) = &self.ta_pos_emb {
            out.push(("ta_pos_emb".into(), t));
        }
        out.push(("cls_emb".into(), &self.cls_emb));
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("ln1.g"), &l.ln1_g));
            out.push((p("ln1.b"), &l.ln1_b));
            out.push((p("attn.wq"), &l.wq));
            out.push((p("attn.bq"), &l.bq));
            out.push((p("attn.wk"), &l.wk));
            out.push((p("attn.bk"), &l.bk));
            out.push((p("attn.wv"), &l.wv));
            out.push((p("attn.bv"), &l.bv));
            if let Some((g, b)) = &l.q_norm {
                out.push((p("attn.q_norm.g"), g));
                out.push((p("attn.q_norm.b"), b));
            }
            if let Some((g, b)) = &l.k_norm {
                out.push((p("attn.k_norm.g"), g));
                out.push((p("attn.k_norm.b"), b));
            }
            out.push((p("attn.wo"), &l.wo));
            out.push((p("attn.bo"), &l.bo));
            out.push((p("ln2.g"), &l.ln2_g));
            out.push((p("ln2.b"), &l.ln2_b));
            out.push((p("mlp.w1"), &l.w1));
            out.push((p("mlp.b1"), &l.b1));
            out.push((p("mlp.w2"), &l.w2));
            out.push((p("mlp.b2"), &l.b2));
        }
        if let Some((g, b)) = &self.final_norm {
            out.push(("final_norm.g".into(), g));
            out.push(("final_norm.b".into(), b));
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        if let Some(t) = &mut self.ta_pos_emb {
            out.push(("ta_pos_emb".into(), t));
        }
        out.push(("cls_emb".into(), &mut self.cls_emb));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("ln1.g"), &mut l.ln1_g));
            out.push((p("ln1.b"), &mut l.ln1_b));
            out.push((p("attn.wq"), &mut l.wq));
            out.push((p("attn.bq"), &mut l.bq));
            out.push((p("attn.wk"), &mut l.wk));
            out.push((p("attn.bk"), &mut l.bk));
            out.push((p("attn.wv"), &mut l.wv));
            out.push((p("attn.bv"), &mut l.bv));
            if let Some((g, b)) = &mut l.q_norm {
                out.push((p("attn.q_norm.g"), g));
                out.push((p("attn.q_norm.b"), b));
            }
            if let Some((g, b)) = &mut l.k_norm {
                out.push((p("attn.k_norm.g"), g));
                out.push((p("attn.k_norm.b"), b));
            }
            out.push((p("attn.wo"), &mut l.wo));
            out.push((p("attn.bo"), &mut l.bo));
            out.push((p("ln2.g"), &mut l.ln2_g));
            out.push((p("ln2.b"), &mut l.ln2_b));
            out.push((p("mlp.w1"), &mut l.w1));
            out.push((p("mlp.b1"), &mut l.b1));
            out.push((p("mlp.w2"), &mut l.w2));
            out.push((p("mlp.b2"), &mut l.b2));
        }
        if let Some((g, b)) = &mut self.final_norm {
            out.push(("final_norm.g".into(), g));
            out.push(("final_norm.b".into(), b));
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let pair = |p: &(Tensor<F>, Tensor<F>)| (p.0.cast(), p.1.cast());
        ModelParams {
            config: self.config.clone(),
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            ta_pos_emb: self.ta_pos_emb.as_ref().map(|t| t.cast()),
            cls_emb: self.cls_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    wq: l.wq.cast(),
                    bq: l.bq.cast(),
                    wk: l.wk.cast(),
                    bk: l.bk.cast(),
                    wv: l.wv.cast(),
                    bv: l.bv.cast(),
                    q_norm: l.q_norm.as_ref().map(pair),
                    k_norm: l.k_norm.as_ref().map(pair),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                    w1: l.w1.cast(),
                    b1: l.b1.cast(),
                    w2: l.w2.cast(),
                    b2: l.b2.cast(),
                })
                .collect(),
            final_norm: self.final_norm.as_ref().map(pair),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }
}

/// Fold the raster-shifted target-aware table into the positional table:
/// `pos'[i] = pos[i] + ta[i + 1]` for `i < T - 1`, `pos'[T-1] = pos[T-1]`.
/// The result only supports raster-order inference.
pub fn merge_positional<F: Real>(params: &ModelParams<F>) -> ModelParams<F> {
    let mut out = params.clone();
    if let Some(ta) = out.ta_pos_emb.take() {
        let t = out.config.seq_len;
        for i in 0..t.saturating_sub(1) {
            let src = ta.row(i + 1).to_vec();
            for (p, s) in out.pos_emb.row_mut(i).iter_mut().zip(src) {
                *p += s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::micro(5, 8, 2);
        let a: ModelParams<f32> = init_params(&cfg, &mut seeded(1)).unwrap();
        let b: ModelParams<f32> = init_params(&cfg, &mut seeded(1)).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&cfg, &mut seeded(2)).unwrap();
        assert_ne!(a, c);
        assert!(a.head_w.data.iter().all(|&x| x == 0.0));
        assert!(a.tok_emb.data.iter().all(|&x| x.abs() <= 0.04));
    }

    #[test]
    fn counts_match_closed_form() {
        for cfg in [
            ModelConfig::micro(5, 8, 2),
            ModelConfig::small(4, 36, 3),
            ModelConfig { depth: 0, ..ModelConfig::micro(3, 4, 1) },
            ModelConfig { qk_norm: false, ..ModelConfig::small(4, 9, 2) },
        ] {
            let p: ModelParams<f32> = init_params(&cfg, &mut seeded(0)).unwrap();
            assert_eq!(p.num_params(), cfg.param_count().total(), "{cfg:?}");
        }
    }

    #[test]
    fn desk_small_count_by_hand() {
        // V=4, T=36, C=3, d=64, m=256, 4 blocks, head dim 16.
        let emb = 4 * 64 + 2 * 36 * 64 + 4 * 64;
        let block = 2 * 64 + 4 * (64 * 64 + 64) + 4 * 16 + 2 * 64 + (64 * 256 + 256) + (256 * 64 + 64);
        let total = emb + 4 * block + 2 * 64 + (64 * 4 + 4);
        assert_eq!(ModelConfig::small(4, 36, 3).param_count().total(), total);
    }

    #[test]
    fn merge_with_zero_table_is_identity() {
        let cfg = ModelConfig::micro(5, 8, 2);
        let mut p: ModelParams<f64> = init_params(&cfg, &mut seeded(3)).unwrap();
        p.ta_pos_emb.as_mut().unwrap().data.iter_mut().for_each(|x| *x = 0.0);
        let m = merge_positional(&p);
        assert!(m.is_merged());
        assert_eq!(m.pos_emb, p.pos_emb);
    }

    #[test]
    fn merge_shifts_by_one() {
        let cfg = ModelConfig::micro(5, 4, 1);
        let p: ModelParams<f64> = init_params(&cfg, &mut seeded(3)).unwrap();
        let m = merge_positional(&p);
        let ta = p.ta_pos_emb.as_ref().unwrap();
        for i in 0..3 {
            for j in 0..8 {
                assert_eq!(m.pos_emb.row(i)[j], p.pos_emb.row(i)[j] + ta.row(i + 1)[j]);
            }
        }
        assert_eq!(m.pos_emb.row(3), p.pos_emb.row(3));
        assert_eq!(m.num_params(), p.num_params() - 4 * 8);
    }
}
