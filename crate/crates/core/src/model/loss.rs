use crate::error::{Error, Result};
use crate::num::Real;

use super::params::Tensor;

/// Per-position `-log softmax(logits[t])[labels[t]]`, computed in f64.
///
/// `logits` has one more row than `labels`: row `t` predicts `labels[t]` and
/// the final row (the last sequence token) has no target.
pub fn position_nll<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<Vec<f64>> {
    let rows = logits.shape[0];
    let v = logits.shape[1];
    if labels.is_empty() || rows != labels.len() + 1 {
        return Err(Error::LengthMismatch {
            expected: labels.len() + 1,
            actual: rows,
        });
    }
    labels
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            if y >= v {
                return Err(Error::TokenOutOfRange { token: y, vocab: v });
            }
            let row = logits.row(t);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.to_f64()));
            let lse = m + row.iter().map(|&z| (z.to_f64() - m).exp()).sum::<f64>().ln();
            Ok(lse - row[y].to_f64())
        })
        .collect()
}

/// Mean shifted cross-entropy, see [`position_nll`].
pub fn loss<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<f64> {
    let nll = position_nll(logits, labels)?;
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

/// Mean loss and its gradient with respect to `logits`, scaled by `weight`
/// (e.g. `1 / batch`). The final row's gradient is zero.
pub fn loss_and_grad<F: Real>(logits: &Tensor<F>, labels: &[usize], weight: f64) -> Result<(f64, Tensor<F>)> {
    let loss = loss(logits, labels)?;
    let v = logits.shape[1];
    let mut grad = Tensor::zeros(&logits.shape);
    let coef = weight / labels.len() as f64;
    for (t, &y) in labels.iter().enumerate() {
        let row = logits.row(t);
        let m = row.iter().fold(F::neg_infinity(), |a, &b| if b > a { b } else { a });
        let exps: Vec<F> = row.iter().map(|&z| (z - m).exp()).collect();
        let sum: F = exps.iter().copied().sum();
        let g = grad.row_mut(t);
        let c = F::from_f64(coef);
        for k in 0..v {
            let p = exps[k] / sum;
            g[k] = c * (if k == y { p - F::one() } else { p });
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_v() {
        let logits: Tensor<f32> = Tensor::zeros(&[5, 4]);
        let nll = position_nll(&logits, &[0, 1, 2, 3]).unwrap();
        for x in nll {
            assert!((x - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let mut logits: Tensor<f64> = Tensor::zeros(&[3, 3]);
            logits.row_mut(0)[2] = margin;
            logits.row_mut(1)[0] = margin;
            let l = loss(&logits, &[2, 0]).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn rejects_bad_labels() {
        let logits: Tensor<f64> = Tensor::zeros(&[3, 3]);
        assert!(matches!(loss(&logits, &[0, 3]), Err(Error::TokenOutOfRange { .. })));
        assert!(loss(&logits, &[0]).is_err());
    }

    // Independent oracle: direct per-position log-probabilities.
    #[test]
    fn matches_direct_summation() {
        let data = vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4, 0.0, 0.5, 0.9, 9.9, 9.9, 9.9];
        let logits = Tensor::from_vec(&[4, 3], data.clone()).unwrap();
        let labels = [2, 0, 1];
        let mut want = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            let r = &data[t * 3..t * 3 + 3];
            let z: f64 = r.iter().map(|x: &f64| x.exp()).sum();
            want += -(r[y].exp() / z).ln();
        }
        want /= 3.0;
        assert!((loss(&logits, &labels).unwrap() - want).abs() < 1e-12);
        let (l, g) = loss_and_grad(&logits, &labels, 1.0).unwrap();
        assert!((l - want).abs() < 1e-12);
        assert!(g.row(3).iter().all(|&x| x == 0.0));
    }
}
