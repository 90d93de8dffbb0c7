//! Autoregressive generation with KV caches, temperature and classifier-free
//! guidance, in any factorization order.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridtok::TokenGrid;
use crate::model::{class_row, embed_row, forward, forward_step, KvCache, ModelParams, Tensor};
use crate::num::Real;
use crate::permute::Permutation;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSchedule {
    None,
    Linear,
    PowerCosine,
}

impl FromStr for GuidanceSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceSchedule::None),
            "linear" => Ok(GuidanceSchedule::Linear),
            "power_cosine" | "pow_cosine" => Ok(GuidanceSchedule::PowerCosine),
            other => Err(Error::config(format!("unknown guidance schedule {other:?}"))),
        }
    }
}

impl fmt::Display for GuidanceSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceSchedule::None => "none",
            GuidanceSchedule::Linear => "linear",
            GuidanceSchedule::PowerCosine => "power_cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Decoding order; `None` is raster.
    pub order: Option<Permutation>,
    pub temperature: f64,
    pub guidance_scale: f64,
    pub guidance_schedule: GuidanceSchedule,
    pub scale_power: f64,
    /// Argmax instead of sampling.
    pub greedy: bool,
    /// Allow non-raster orders.
    pub force_order: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            order: None,
            temperature: 1.0,
            guidance_scale: 1.0,
            guidance_schedule: GuidanceSchedule::None,
            scale_power: 1.0,
            greedy: false,
            force_order: false,
        }
    }
}

impl SampleConfig {
    pub fn greedy() -> Self {
        SampleConfig {
            greedy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive (use greedy decoding for the zero limit)"));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::config("guidance scale must be non-negative"));
        }
        if self.guidance_schedule == GuidanceSchedule::PowerCosine && !(self.scale_power > 0.0) {
            return Err(Error::config("power_cosine needs a positive scale_power"));
        }
        Ok(())
    }

    /// Whether decoding needs the null-condition pass.
    fn guided(&self) -> bool {
        !(self.guidance_schedule == GuidanceSchedule::None && self.guidance_scale == 1.0)
    }
}

/// Guidance scale at 0-based step `t` of `total`.
pub fn guidance_scale_at(t: usize, total: usize, cfg: &SampleConfig) -> f64 {
    let s = cfg.guidance_scale;
    let frac = (t + 1) as f64 / total as f64;
    match cfg.guidance_schedule {
        GuidanceSchedule::None => s,
        GuidanceSchedule::Linear => s * frac,
        GuidanceSchedule::PowerCosine => s * (1.0 - (std::f64::consts::PI * frac.powf(cfg.scale_power)).cos()) / 2.0,
    }
}

/// `uncond + s (cond - uncond)`; exactly `cond` at `s = 1`.
pub fn guided_logits(cond: &[f64], uncond: &[f64], s: f64) -> Vec<f64> {
    if s == 1.0 {
        return cond.to_vec();
    }
    cond.iter().zip(uncond).map(|(&c, &u)| u + s * (c - u)).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws one token from `logits / temperature`.
pub fn sample_categorical(logits: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    argmax(&scaled)
}

fn to_f64<F: Real>(xs: &[F]) -> Vec<f64> {
    xs.iter().map(|&x| Real::to_f64(x)).collect()
}

fn resolve_order<F: Real>(params: &ModelParams<F>, cfg: &SampleConfig) -> Result<Permutation> {
    cfg.validate()?;
    let t_len = params.config.seq_len;
    let order = cfg.order.clone().unwrap_or_else(|| Permutation::identity(t_len));
    if order.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            actual: order.len(),
        });
    }
    if !order.is_identity() {
        if params.is_merged() {
            return Err(Error::MergedNonRaster);
        }
        if !cfg.force_order {
            return Err(Error::config("non-raster decoding order needs force_order"));
        }
    }
    Ok(order)
}

#[allow(clippy::too_many_arguments)]
fn pick(
    cond: Option<&[f64]>,
    uncond: Option<&[f64]>,
    t: usize,
    total: usize,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> usize {
    let logits = match (cond, uncond) {
        (Some(c), Some(u)) => guided_logits(c, u, guidance_scale_at(t, total, cfg)),
        (Some(c), None) => c.to_vec(),
        (None, Some(u)) => u.to_vec(),
        (None, None) => unreachable!("at least one pass runs"),
    };
    if cfg.greedy {
        argmax(&logits)
    } else {
        sample_categorical(&logits, cfg.temperature, rng)
    }
}

fn into_grid<F: Real>(params: &ModelParams<F>, height: usize, width: usize, order: &Permutation, decoded: &[usize], label: Option<usize>) -> Result<TokenGrid> {
    // Step t decoded the token at grid position order[t].
    let mut tokens = vec![0; order.len()];
    for (t, &pos) in order.order().iter().enumerate() {
        tokens[pos] = decoded[t];
    }
    TokenGrid::new(height, width, tokens, label.unwrap_or(params.config.num_classes))
}

fn check_shape<F: Real>(params: &ModelParams<F>, height: usize, width: usize, label: Option<usize>) -> Result<()> {
    if height * width != params.config.seq_len {
        return Err(Error::config(format!(
            "{height}x{width} grid does not match model seq_len {}",
            params.config.seq_len
        )));
    }
    class_row(params, label).map(|_| ())
}

/// Decodes one grid. With a class label and guidance enabled, each step runs
/// a conditional and a null-condition pass, each with its own cache. An
/// unconditional grid (`label = None`) gets class label `C`.
pub fn generate<F: Real>(params: &ModelParams<F>, height: usize, width: usize, label: Option<usize>, cfg: &SampleConfig, rng: &mut Rng) -> Result<TokenGrid> {
    check_shape(params, height, width, label)?;
    let order = resolve_order(params, cfg)?;
    let tau = order.order();
    let t_len = tau.len();
    let mut cond_cache = label.map(|_| KvCache::new(params));
    let mut null_cache = (label.is_none() || cfg.guided()).then(|| KvCache::new(params));
    let mut decoded = Vec::with_capacity(t_len);
    for t in 0..t_len {
        // Input row t is the class token, then the token decoded at step t - 1
        // tagged with the position decoded at step t.
        let step = |cache: &mut KvCache<F>, label: Option<usize>| -> Result<Vec<f64>> {
            let row = if t == 0 {
                class_row(params, label)?.to_vec()
            } else {
                embed_row(params, decoded[t - 1], tau[t - 1], Some(tau[t]))?
            };
            Ok(to_f64(&forward_step(params, cache, &row)?))
        };
        let c = cond_cache.as_mut().map(|cache| step(cache, label)).transpose()?;
        let u = null_cache.as_mut().map(|cache| step(cache, None)).transpose()?;
        decoded.push(pick(c.as_deref(), u.as_deref(), t, t_len, cfg, rng));
    }
    into_grid(params, height, width, &order, &decoded, label)
}

/// Reference decoder that re-runs the full forward over the whole prefix at
/// every step, with no cache. Same draws and combination as [`generate`].
pub fn generate_uncached<F: Real>(params: &ModelParams<F>, height: usize, width: usize, label: Option<usize>, cfg: &SampleConfig, rng: &mut Rng) -> Result<TokenGrid> {
    check_shape(params, height, width, label)?;
    let order = resolve_order(params, cfg)?;
    let tau = order.order();
    let t_len = tau.len();
    let d = params.config.width;
    let want_cond = label.is_some();
    let want_null = label.is_none() || cfg.guided();
    let mut decoded: Vec<usize> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut rows = Vec::with_capacity(t * d);
        for s in 0..t {
            rows.extend(embed_row(params, decoded[s], tau[s], Some(tau[s + 1]))?);
        }
        let prefix = Tensor::from_vec(&[t, d], rows)?;
        let last = |label: Option<usize>| -> Result<Vec<f64>> {
            let logits = forward(params, &prefix, label)?;
            Ok(to_f64(logits.row(t)))
        };
        let c = want_cond.then(|| last(label)).transpose()?;
        let u = want_null.then(|| last(None)).transpose()?;
        decoded.push(pick(c.as_deref(), u.as_deref(), t, t_len, cfg, rng));
    }
    into_grid(params, height, width, &order, &decoded, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{merge_positional, InitScheme, ModelConfig};
    use crate::permute::{canonical_scan, ScanKind};
    use crate::rng::{seeded, stream, Stream};

    fn lively(cfg: &ModelConfig, seed: u64) -> ModelParams<f32> {
        ModelParams::init(cfg, &mut seeded(seed), InitScheme { std: 0.5, zero_head: false }).unwrap()
    }

    fn cfg_with(schedule: GuidanceSchedule, s: f64, power: f64) -> SampleConfig {
        SampleConfig {
            guidance_scale: s,
            guidance_schedule: schedule,
            scale_power: power,
            ..SampleConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(guidance_scale_at(255, 256, &cfg_with(GuidanceSchedule::Linear, 16.0, 1.0)), 16.0);
        for power in [0.5, 1.0, 2.5, 4.0] {
            let s = guidance_scale_at(99, 100, &cfg_with(GuidanceSchedule::PowerCosine, 7.0, power));
            assert!((s - 7.0).abs() < 1e-12);
        }
        // ((t + 1) / T)^1 = 0.5 at t = 4, T = 10.
        let mid = guidance_scale_at(4, 10, &cfg_with(GuidanceSchedule::PowerCosine, 8.0, 1.0));
        assert!((mid - 4.0).abs() < 1e-12);
        assert_eq!(guidance_scale_at(0, 10, &cfg_with(GuidanceSchedule::None, 3.0, 1.0)), 3.0);
    }

    #[test]
    fn schedules_never_decrease() {
        for schedule in [GuidanceSchedule::None, GuidanceSchedule::Linear, GuidanceSchedule::PowerCosine] {
            for power in [0.3, 1.0, 2.5] {
                let cfg = cfg_with(schedule, 5.0, power);
                for total in [1, 2, 9, 256] {
                    for t in 1..total {
                        assert!(guidance_scale_at(t, total, &cfg) >= guidance_scale_at(t - 1, total, &cfg));
                    }
                }
            }
        }
    }

    #[test]
    fn guidance_combination_identities() {
        let c = [0.3, -1.2, 2.5];
        let u = [1.1, 0.4, -0.7];
        assert_eq!(guided_logits(&c, &u, 1.0), c.to_vec());
        assert_eq!(guided_logits(&c, &u, 0.0), u.to_vec());
        for s in [0.0, 0.5, 3.0, 16.0] {
            assert_eq!(guided_logits(&c, &c, s), c.to_vec());
        }
    }

    #[test]
    fn config_guards() {
        let bad = SampleConfig {
            temperature: 0.0,
            ..SampleConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(cfg_with(GuidanceSchedule::PowerCosine, 2.0, 0.0).validate().is_err());
        assert!("bogus".parse::<GuidanceSchedule>().is_err());
        assert_eq!("power_cosine".parse::<GuidanceSchedule>().unwrap(), GuidanceSchedule::PowerCosine);
    }

    #[test]
    fn greedy_ignores_the_seed() {
        let p = lively(&ModelConfig::micro(4, 9, 2), 1);
        let a = generate(&p, 3, 3, Some(1), &SampleConfig::greedy(), &mut seeded(1)).unwrap();
        let b = generate(&p, 3, 3, Some(1), &SampleConfig::greedy(), &mut seeded(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let p = lively(&ModelConfig::micro(4, 9, 2), 2);
        for cfg in [SampleConfig::default(), cfg_with(GuidanceSchedule::PowerCosine, 4.0, 2.5)] {
            let a = generate(&p, 3, 3, Some(0), &cfg, &mut stream(5, Stream::Sampling, 0)).unwrap();
            let b = generate(&p, 3, 3, Some(0), &cfg, &mut stream(5, Stream::Sampling, 0)).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.iter().all(|&t| t < 4));
        }
    }

    #[test]
    fn cached_and_uncached_decoders_agree() {
        let p = lively(&ModelConfig::micro(4, 9, 2), 3);
        let spiral = canonical_scan(ScanKind::SpiralOut, 3, 3).unwrap();
        let configs = [
            SampleConfig::greedy(),
            SampleConfig::default(),
            cfg_with(GuidanceSchedule::Linear, 3.0, 1.0),
            SampleConfig {
                order: Some(spiral),
                force_order: true,
                ..SampleConfig::default()
            },
        ];
        for cfg in &configs {
            for seed in 0..10 {
                let a = generate(&p, 3, 3, Some(1), cfg, &mut seeded(seed)).unwrap();
                let b = generate_uncached(&p, 3, 3, Some(1), cfg, &mut seeded(seed)).unwrap();
                assert_eq!(a, b);
            }
        }
        let a = generate(&p, 3, 3, None, &SampleConfig::default(), &mut seeded(4)).unwrap();
        assert_eq!(a, generate_uncached(&p, 3, 3, None, &SampleConfig::default(), &mut seeded(4)).unwrap());
        assert_eq!(a.class_label, 2);
    }

    #[test]
    fn order_guards() {
        let p = lively(&ModelConfig::micro(4, 9, 2), 3);
        let spiral = canonical_scan(ScanKind::SpiralIn, 3, 3).unwrap();
        let unforced = SampleConfig {
            order: Some(spiral.clone()),
            ..SampleConfig::default()
        };
        assert!(generate(&p, 3, 3, Some(0), &unforced, &mut seeded(0)).is_err());
        let forced = SampleConfig {
            force_order: true,
            ..unforced
        };
        assert!(generate(&p, 3, 3, Some(0), &forced, &mut seeded(0)).is_ok());
        let merged = merge_positional(&p);
        assert!(matches!(generate(&merged, 3, 3, Some(0), &forced, &mut seeded(0)), Err(Error::MergedNonRaster)));
        assert!(generate(&p, 3, 4, Some(0), &SampleConfig::default(), &mut seeded(0)).is_err());
    }

    #[test]
    fn merge_keeps_raster_greedy_decodes() {
        let cfg = ModelConfig::micro(4, 9, 2);
        for seed in 0..5 {
            let p: ModelParams<f32> = lively(&cfg, seed);
            let merged = merge_positional(&p);
            let a = generate(&p, 3, 3, Some(1), &SampleConfig::greedy(), &mut seeded(0)).unwrap();
            let b = generate(&merged, 3, 3, Some(1), &SampleConfig::greedy(), &mut seeded(0)).unwrap();
            assert_eq!(a, b);
        }
    }
}
