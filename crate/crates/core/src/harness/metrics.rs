//! Evaluation metrics for the synthetic tasks.

use crate::error::{shape_err, Result};
use crate::harness::data::Task;
use crate::ops::argmax;
use crate::tensor::Tensor;

/// Threshold on sigmoid probabilities; ties count as foreground.
pub const MASK_THRESHOLD: f64 = 0.5;

fn batch_dims(preds: &Tensor, targets: &Tensor) -> Result<(usize, usize, usize)> {
    if preds.shape() != targets.shape() {
        return Err(shape_err!(
            "predictions {:?} vs targets {:?}",
            preds.shape(),
            targets.shape()
        ));
    }
    match *preds.shape() {
        [n, k, h, w] => Ok((n * k, h, w)),
        [k, h, w] => Ok((k, h, w)),
        _ => Err(shape_err!(
            "expected [N, K, H, W] or [K, H, W], got {:?}",
            preds.shape()
        )),
    }
}

/// Fraction of maps whose predicted argmax lies within `radius` pixels of
/// the target argmax.
pub fn pck(preds: &Tensor, targets: &Tensor, radius: f64) -> Result<f64> {
    let (maps, h, w) = batch_dims(preds, targets)?;
    let len = h * w;
    let hits = (0..maps)
        .filter(|&m| {
            let (p, _) = argmax(&preds.data()[m * len..(m + 1) * len]);
            let (t, _) = argmax(&targets.data()[m * len..(m + 1) * len]);
            let dr = (p / w) as f64 - (t / w) as f64;
            let dc = (p % w) as f64 - (t % w) as f64;
            (dr * dr + dc * dc).sqrt() <= radius
        })
        .count();
    Ok(hits as f64 / maps as f64)
}

/// Mean over classes of `|pred ∩ gt| / |pred ∪ gt|`, pooled over the batch.
/// Classes with an empty union are skipped; if every class is skipped the
/// result is 1.
pub fn mean_iou(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    batch_dims(probs, targets)?;
    let (n, k, len) = match *probs.shape() {
        [n, k, h, w] => (n, k, h * w),
        [k, h, w] => (1, k, h * w),
        _ => unreachable!(),
    };
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    for s in 0..n {
        for c in 0..k {
            let off = (s * k + c) * len;
            for i in off..off + len {
                let p = probs.data()[i] >= MASK_THRESHOLD;
                let t = targets.data()[i] >= MASK_THRESHOLD;
                inter[c] += usize::from(p && t);
                union[c] += usize::from(p || t);
            }
        }
    }
    let ious: Vec<f64> = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .map(|(&i, &u)| i as f64 / u as f64)
        .collect();
    if ious.is_empty() {
        return Ok(1.0);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// PCK@`radius` for heatmaps, mean IoU for masks (`preds` are
/// probabilities).
pub fn evaluate(preds: &Tensor, targets: &Tensor, task: Task, radius: f64) -> Result<f64> {
    match task {
        Task::Heatmap => pck(preds, targets, radius),
        Task::Mask => mean_iou(preds, targets),
    }
}
