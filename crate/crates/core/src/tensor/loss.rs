//! Training losses.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::record_op;
use super::{check_same_shape, Tensor};

/// Mean over the batch of `−log softmax(logits)[label]`. Logits are
/// `(N, K, 1, 1)`; labels are class indices in `[0, K)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    let k = s.c * s.h * s.w;
    if labels.len() != s.n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            axis: "batch",
            detail: format!("{} logits rows vs {} labels", s.n, labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument {
            op: "softmax_cross_entropy",
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }

    let lv = logits.values();
    let n = s.n;
    // softmax rows are reused by the backward closure
    let mut probs = vec![T::zero(); n * k];
    let mut loss = T::zero();
    for r in 0..n {
        let row = &lv[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs[r * k + j] = e;
            denom += e;
        }
        for j in 0..k {
            probs[r * k + j] = probs[r * k + j] / denom;
        }
        loss -= (probs[r * k + labels[r]]).ln();
    }
    loss = loss / T::from_f64(n as f64);

    let labels = labels.to_vec();
    record_op("softmax_cross_entropy", Tensor::scalar(loss), &[logits], |ids| {
        let ix = ids[0];
        Box::new(move |g| {
            let Some(ix) = ix else { return vec![] };
            let scale = g[0] / T::from_f64(n as f64);
            let mut gx = vec![T::zero(); n * k];
            for r in 0..n {
                for j in 0..k {
                    let indicator = if labels[r] == j { T::one() } else { T::zero() };
                    gx[r * k + j] = (probs[r * k + j] - indicator) * scale;
                }
            }
            vec![(ix, gx)]
        })
    })
}

/// Mean squared error multiplied by the batch size
/// (`N · mean((pred − target)²)`), matching the autoencoder training
/// objective used throughout this crate.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mse_loss", pred, target)?;
    let s = pred.shape();
    let per_sample = T::from_f64((s.c * s.h * s.w) as f64);
    let mut acc = T::zero();
    for (&p, &t) in pred.values().iter().zip(target.values().iter()) {
        let d = p - t;
        acc += d * d;
    }
    let loss = acc / per_sample;

    let pv = pred.values_arc();
    let tv = target.values_arc();
    record_op("mse_loss", Tensor::scalar(loss), &[pred, target], |ids| {
        let (ip, it) = (ids[0], ids[1]);
        Box::new(move |g| {
            let two = T::from_f64(2.0);
            let scale = g[0] * two / per_sample;
            let mut grads = Vec::new();
            if let Some(i) = ip {
                let gp = pv
                    .iter()
                    .zip(tv.iter())
                    .map(|(&p, &t)| (p - t) * scale)
                    .collect();
                grads.push((i, gp));
            }
            if let Some(i) = it {
                let gt = pv
                    .iter()
                    .zip(tv.iter())
                    .map(|(&p, &t)| (t - p) * scale)
                    .collect();
                grads.push((i, gt));
            }
            grads
        })
    })
}
