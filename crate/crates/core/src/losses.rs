//! Training losses of the point-wise and refinement branches, with the
//! analytic logit gradients of the cross-entropy terms.
//!
//! Losses take raw logits; probabilities are formed here with a
//! max-shifted softmax / log-sum-exp. Everything accumulates in `f64`.
//! Normalizers that would be zero (no foreground points, no positive
//! proposals) yield a loss of 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Point3;

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    check_finite("logits", logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::OutOfRange {
            what: "label",
            index: label,
            limit: logits.len(),
        });
    }
    check_finite("logits", logits)?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn ce_logit_gradient(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::OutOfRange {
            what: "label",
            index: label,
            limit: logits.len(),
        });
    }
    let mut g = softmax(logits)?;
    g[label] -= 1.0;
    Ok(g)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against target `t`, in the stable
/// `max(z, 0) - z t + ln(1 + e^{-|z|})` form.
pub fn bce_with_logits(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

pub fn bce_logit_gradient(z: f64, t: f64) -> f64 {
    sigmoid(z) - t
}

fn rows(logits: &[f64], width: usize, what: &'static str) -> Result<usize> {
    if width == 0 {
        return Err(Error::param("n_classes", "must be at least 1"));
    }
    if !logits.len().is_multiple_of(width) {
        return Err(Error::LengthMismatch {
            what,
            expected: logits.len() / width * width,
            actual: logits.len(),
        });
    }
    Ok(logits.len() / width)
}

/// Mean cross-entropy over points whose label is not ignored (`-1`).
/// `logits` is row-major `N x n_classes`.
pub fn semantic_loss(logits: &[f64], n_classes: usize, labels: &[i32]) -> Result<f64> {
    let n = rows(logits, n_classes, "semantic logits")?;
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "semantic labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (row, &label) in logits.chunks_exact(n_classes).zip(labels) {
        if label < 0 {
            if label != -1 {
                return Err(Error::param("labels", format!("label {label} below -1")));
            }
            continue;
        }
        sum += cross_entropy(row, label as usize)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("non-ignored points"));
    }
    Ok(sum / count as f64)
}

/// Mean L1 offset error over foreground points.
pub fn offset_loss(offsets: &[Point3], targets: &[Point3], foreground: &[bool]) -> Result<f64> {
    for (what, len) in [("offset targets", targets.len()), ("foreground flags", foreground.len())] {
        if len != offsets.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: offsets.len(),
                actual: len,
            });
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((o, t), &fg) in offsets.iter().zip(targets).zip(foreground) {
        if fg {
            sum += (o[0] - t[0]).abs() + (o[1] - t[1]).abs() + (o[2] - t[2]).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean cross-entropy over all proposals. `logits` is row-major
/// `K x n_outputs` where `n_outputs` includes the background class.
pub fn classification_loss(logits: &[f64], n_outputs: usize, targets: &[usize]) -> Result<f64> {
    let k = rows(logits, n_outputs, "classification logits")?;
    if targets.len() != k {
        return Err(Error::LengthMismatch {
            what: "classification targets",
            expected: k,
            actual: targets.len(),
        });
    }
    if k == 0 {
        return Err(Error::Empty("proposals"));
    }
    let sum = logits
        .chunks_exact(n_outputs)
        .zip(targets)
        .map(|(row, &t)| cross_entropy(row, t))
        .sum::<Result<f64>>()?;
    Ok(sum / k as f64)
}

fn check_aligned(what: &'static str, k: usize, len: usize) -> Result<()> {
    if k == len {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected: k,
            actual: len,
        })
    }
}

/// Mean over positive proposals of the per-proposal mean binary
/// cross-entropy. Entries of negative proposals are ignored.
pub fn mask_loss(logits: &[Vec<f64>], targets: &[Vec<bool>], positive: &[bool]) -> Result<f64> {
    check_aligned("mask targets", positive.len(), targets.len())?;
    check_aligned("mask logits", positive.len(), logits.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((z, t), _) in logits.iter().zip(targets).zip(positive).filter(|(_, &p)| p) {
        check_aligned("mask logits of a proposal", t.len(), z.len())?;
        if z.is_empty() {
            return Err(Error::Empty("positive proposal mask"));
        }
        check_finite("mask logits", z)?;
        let per = z
            .iter()
            .zip(t)
            .map(|(&z, &t)| bce_with_logits(z, if t { 1.0 } else { 0.0 }))
            .sum::<f64>()
            / z.len() as f64;
        sum += per;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean over positive proposals of `|predicted - target|` (the L2 norm of
/// a scalar residual).
pub fn mask_score_loss(predicted: &[f64], targets: &[f64], positive: &[bool]) -> Result<f64> {
    check_aligned("mask score targets", positive.len(), targets.len())?;
    check_aligned("mask score predictions", positive.len(), predicted.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&r, &t), _) in predicted.iter().zip(targets).zip(positive).filter(|(_, &p)| p) {
        for v in [r, t] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param("mask score", format!("{v} outside [0, 1]")));
            }
        }
        sum += (r - t).abs();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub semantic: f64,
    pub offset: f64,
    pub classification: f64,
    pub mask: f64,
    pub mask_score: f64,
    pub total: f64,
}

/// Unweighted sum of the five loss terms.
pub fn total_loss(
    semantic: f64,
    offset: f64,
    classification: f64,
    mask: f64,
    mask_score: f64,
) -> Result<LossReport> {
    let parts = [semantic, offset, classification, mask, mask_score];
    check_finite("loss parts", &parts)?;
    if let Some(v) = parts.iter().find(|&&v| v < 0.0) {
        return Err(Error::param("loss part", format!("{v} is negative")));
    }
    Ok(LossReport {
        semantic,
        offset,
        classification,
        mask,
        mask_score,
        total: parts.iter().sum(),
    })
}
