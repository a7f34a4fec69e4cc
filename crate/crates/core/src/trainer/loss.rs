//! Multi-label losses on raw logits, averaged over classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Focal-loss defaults in common use.
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Focal { gamma: f64, alpha: f64 },
}

impl LossKind {
    pub fn loss(&self, logits: &[f64], labels: &[bool]) -> Result<f64> {
        match *self {
            LossKind::Bce => bce_multilabel_loss(logits, labels),
            LossKind::Focal { gamma, alpha } => focal_loss(logits, labels, gamma, alpha),
        }
    }

    pub fn grad(&self, logits: &[f64], labels: &[bool]) -> Result<Vec<f64>> {
        match *self {
            LossKind::Bce => bce_multilabel_grad(logits, labels),
            LossKind::Focal { gamma, alpha } => focal_grad(logits, labels, gamma, alpha),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(logits: &[f64], labels: &[bool]) -> Result<()> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::arg(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("logits"));
    }
    Ok(())
}

/// `-log p_t` and `1 - p_t`, where `p_t` is the probability assigned to the
/// true outcome.
fn nll_and_miss(z: f64, y: bool) -> (f64, f64) {
    if y {
        (softplus(-z), sigmoid(-z))
    } else {
        (softplus(z), sigmoid(z))
    }
}

pub fn bce_multilabel_loss(logits: &[f64], labels: &[bool]) -> Result<f64> {
    check(logits, labels)?;
    let sum: f64 = logits.iter().zip(labels).map(|(z, y)| nll_and_miss(*z, *y).0).sum();
    Ok(sum / logits.len() as f64)
}

pub fn bce_multilabel_grad(logits: &[f64], labels: &[bool]) -> Result<Vec<f64>> {
    check(logits, labels)?;
    let k = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(z, y)| (sigmoid(*z) - if *y { 1.0 } else { 0.0 }) / k)
        .collect())
}

fn check_focal(gamma: f64, alpha: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::arg(format!("focal gamma must be >= 0, got {gamma}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("focal alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Mean over classes of `alpha * (1 - p_t)^gamma * -log(p_t)`.
pub fn focal_loss(logits: &[f64], labels: &[bool], gamma: f64, alpha: f64) -> Result<f64> {
    check(logits, labels)?;
    check_focal(gamma, alpha)?;
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, y)| {
            let (nll, miss) = nll_and_miss(*z, *y);
            alpha * miss.powf(gamma) * nll
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

pub fn focal_grad(logits: &[f64], labels: &[bool], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    check(logits, labels)?;
    check_focal(gamma, alpha)?;
    let k = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(z, y)| {
            let (nll, q) = nll_and_miss(*z, *y);
            let p = 1.0 - q;
            let sign = if *y { 1.0 } else { -1.0 };
            // d/dz of alpha q^g nll, with dp/dz = sign * p * q.
            let modulating = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma) * p * nll
            };
            -alpha * sign * (modulating + q.powf(gamma + 1.0)) / k
        })
        .collect())
}
