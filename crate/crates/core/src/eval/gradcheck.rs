use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::model::{forward_sequence, loss, sequence_loss_and_grads, InitScheme, ModelConfig, ModelParams};
use crate::permute::{random_permutation, Permutation};
use crate::rng::{stream, Stream};

pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, ABS_FLOOR)`
    /// per tensor. The floor matters for tensors whose true gradient is zero,
    /// such as the key-norm bias (a shift shared by all keys cancels in the
    /// softmax).
    pub per_tensor: Vec<(String, f64)>,
    pub worst_tensor: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn sample_loss(params: &ModelParams<f64>, tokens: &[usize], order: &Permutation, label: Option<usize>) -> Result<f64> {
    let (logits, labels) = forward_sequence(params, tokens, order, label)?;
    loss(&logits, &labels)
}

/// Central differences with `step` against the analytic gradient, one
/// tensor at a time. `tamper` may edit the analytic gradient before the
/// comparison.
pub fn grad_check_with(
    params: &ModelParams<f64>,
    tokens: &[usize],
    order: &Permutation,
    label: Option<usize>,
    step: f64,
    tolerance: f64,
    tamper: impl FnOnce(&mut ModelParams<f64>),
) -> Result<GradCheckReport> {
    let mut analytic = params.zeros_like();
    sequence_loss_and_grads(params, tokens, order, label, 1.0, &mut analytic, None)?;
    tamper(&mut analytic);
    let mut probe = params.clone();
    let mut per_tensor = Vec::new();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].1.len();
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let orig = probe.tensors()[ti].1.data[i];
            probe.tensors_mut()[ti].1.data[i] = orig + step;
            let up = sample_loss(&probe, tokens, order, label)?;
            probe.tensors_mut()[ti].1.data[i] = orig - step;
            let down = sample_loss(&probe, tokens, order, label)?;
            probe.tensors_mut()[ti].1.data[i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        let a = &analytic.tensors()[ti].1.data;
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        per_tensor.push((name.clone(), diff / na.max(nn).max(ABS_FLOOR)));
    }
    let (worst_tensor, max_rel_error) = per_tensor
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(GradCheckReport {
        per_tensor,
        worst_tensor,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Gradient check in 64-bit arithmetic on a random sequence, random order
/// and random class, with weights large enough that no tensor has a
/// vanishing gradient.
pub fn grad_check(config: &ModelConfig, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        dropout: 0.0,
        attn_dropout: 0.0,
        ..config.clone()
    };
    let params: ModelParams<f64> = ModelParams::init(&cfg, &mut stream(seed, Stream::Init, 0), InitScheme { std: 0.3, zero_head: false })?;
    let mut rng = stream(seed, Stream::Probe, 0);
    let tokens: Vec<usize> = (0..cfg.seq_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
    let order = random_permutation(&mut rng, cfg.seq_len);
    let label = Some(rng.gen_range(0..cfg.num_classes));
    grad_check_with(&params, &tokens, &order, label, step, tolerance, |_| {})
}
