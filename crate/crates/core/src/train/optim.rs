use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{decays, parse_tensor_file, write_header, write_tensor, ModelParams, Tensor};
use crate::num::Real;

use super::TrainConfig;

const ADAM_EPS: f64 = 1e-8;
const MAGIC: &[u8; 8] = b"RAROPT01";

/// Scales every tensor by `max_norm / g` when the global L2 norm `g` exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_named<F: Real>(tensors: Vec<(String, &mut Tensor<F>)>, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, t) in &tensors {
        if t.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        sq += t.sq_norm();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = F::from_f64(max_norm / norm);
        for (_, t) in tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(norm)
}

pub fn clip_gradients<F: Real>(grads: &mut ModelParams<F>, max_norm: f64) -> Result<f64> {
    clip_named(grads.tensors_mut(), max_norm)
}

/// AdamW moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<F> {
    pub step: u64,
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
}

impl<F: Real> OptState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        OptState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let json = serde_json::json!({ "model": self.m.config, "step": self.step }).to_string();
        write_header(&mut out, MAGIC, &json);
        for (name, t) in self.m.tensors() {
            write_tensor(&mut out, &format!("m.{name}"), t);
        }
        for (name, t) in self.v.tensors() {
            write_tensor(&mut out, &format!("v.{name}"), t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &ModelParams<F>) -> Result<Self> {
        let file = parse_tensor_file(bytes, MAGIC, "optimizer state")?;
        let meta: serde_json::Value = serde_json::from_str(&file.json)?;
        let step = meta["step"].as_u64().ok_or_else(|| Error::Corrupt {
            what: "optimizer state",
            field: "step".into(),
        })?;
        let mut tensors = file.tensors;
        let mut state = OptState::new(params);
        state.step = step;
        for (prefix, moments) in [("m", &mut state.m), ("v", &mut state.v)] {
            for (name, slot) in moments.tensors_mut() {
                let key = format!("{prefix}.{name}");
                let t = tensors.remove(&key).ok_or(Error::MissingTensor(key.clone()))?;
                if t.shape != slot.shape {
                    return Err(Error::TensorShape {
                        name: key,
                        expected: slot.shape.clone(),
                        found: t.shape,
                    });
                }
                *slot = t.cast();
            }
        }
        if let Some(extra) = tensors.into_keys().next() {
            return Err(Error::UnexpectedTensor(extra));
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, params: &ModelParams<F>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, params)
    }
}

/// One AdamW update with bias correction. Decay is decoupled
/// (`p -= lr * wd * p`) and touches only the tensors named by
/// [`decays`]. Tensors listed in `cfg.frozen` are left alone.
pub fn optimizer_step<F: Real>(params: &mut ModelParams<F>, grads: &ModelParams<F>, state: &mut OptState<F>, lr: f64, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (F::from_f64(1.0 - cfg.beta1), F::from_f64(1.0 - cfg.beta2));
    let (c1, c2) = (F::from_f64(c1), F::from_f64(c2));
    let lr_f = F::from_f64(lr);
    let eps = F::from_f64(ADAM_EPS);
    let shrink = F::from_f64(lr * cfg.weight_decay);
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for ((((name, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        if cfg.frozen.contains(&name) {
            continue;
        }
        let decay = cfg.weight_decay > 0.0 && decays(&name);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            if decay {
                let pi = p.data[i];
                p.data[i] = pi - shrink * pi;
            }
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr_f * mhat / (vhat.sqrt() + eps);
        }
    }
}
