//! Soft-label KL divergence and categorical cross-entropy on logits.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::signal::SoftLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `KL(P || softmax(logits))` against vote-derived distributions.
    KlSoft,
    /// `-log softmax(logits)[y]` against the hard (argmax) label.
    CrossEntropy,
}

/// Row-wise log-softmax in `f64`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// `Σ p log p` with `0 log 0 = 0`, i.e. the negative entropy.
fn neg_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// `-Σ p log q` for one row.
fn soft_ce_row(p: &[f64], logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(p)
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(lq, &pi)| -pi * lq)
        .sum()
}

fn check_rows(n_targets: usize, logits: &Array2<f64>, what: &str) -> Result<()> {
    if n_targets != logits.nrows() {
        return Err(Error::Shape(format!(
            "{n_targets} {what} for {} logit rows",
            logits.nrows()
        )));
    }
    Ok(())
}

/// Batch mean of `Σ_i p_i log(p_i / q_i)` with `q = softmax(logits)`.
pub fn kl_div_loss(targets: &[SoftLabel], logits: &Array2<f64>) -> Result<f64> {
    check_rows(targets.len(), logits, "targets")?;
    let mut total = 0.0;
    for (t, row) in targets.iter().zip(logits.rows()) {
        let z = row.to_vec();
        check_finite(&z)?;
        if t.probs.len() != z.len() {
            return Err(Error::Shape(format!(
                "target of {} classes for {} logits",
                t.probs.len(),
                z.len()
            )));
        }
        total += neg_entropy(&t.probs) + soft_ce_row(&t.probs, &z);
    }
    Ok(total / targets.len().max(1) as f64)
}

/// Batch mean of `-Σ p_i log q_i` (cross-entropy against a distribution).
pub fn soft_cross_entropy(targets: &[SoftLabel], logits: &Array2<f64>) -> Result<f64> {
    check_rows(targets.len(), logits, "targets")?;
    let mut total = 0.0;
    for (t, row) in targets.iter().zip(logits.rows()) {
        let z = row.to_vec();
        check_finite(&z)?;
        total += soft_ce_row(&t.probs, &z);
    }
    Ok(total / targets.len().max(1) as f64)
}

/// Batch mean of the Shannon entropy of the targets.
pub fn mean_entropy(targets: &[SoftLabel]) -> f64 {
    targets.iter().map(|t| -neg_entropy(&t.probs)).sum::<f64>() / targets.len().max(1) as f64
}

/// Batch mean of `-log softmax(logits)[target]`.
pub fn cross_entropy_loss(targets: &[usize], logits: &Array2<f64>) -> Result<f64> {
    check_rows(targets.len(), logits, "targets")?;
    let mut total = 0.0;
    for (&y, row) in targets.iter().zip(logits.rows()) {
        let z = row.to_vec();
        check_finite(&z)?;
        if y >= z.len() {
            return Err(Error::Shape(format!(
                "class index {y} out of range for {} classes",
                z.len()
            )));
        }
        total -= log_softmax(&z)[y];
    }
    Ok(total / targets.len().max(1) as f64)
}

/// Loss value and gradient w.r.t. the logits for a flat `[b × n]` target
/// distribution. Both losses share the gradient `(softmax - p) / b`; they
/// differ only by the target entropy in value.
pub fn loss_and_grad<S: Real>(
    kind: LossKind,
    targets: &[f64],
    logits: &[S],
    n_classes: usize,
) -> Result<(f64, Vec<S>)> {
    let b = logits.len() / n_classes;
    let mut grad = vec![S::zero(); logits.len()];
    let mut total = 0.0;
    for i in 0..b {
        let z: Vec<f64> = logits[i * n_classes..][..n_classes]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        check_finite(&z)?;
        let p = &targets[i * n_classes..][..n_classes];
        let lq = log_softmax(&z);
        total += soft_ce_row(p, &z);
        if kind == LossKind::KlSoft {
            total += neg_entropy(p);
        }
        for j in 0..n_classes {
            grad[i * n_classes + j] = S::of((lq[j].exp() - p[j]) / b as f64);
        }
    }
    Ok((total / b.max(1) as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(p: &[f64]) -> SoftLabel {
        SoftLabel { probs: p.to_vec() }
    }

    fn logits_for(q: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, q.len()), q.iter().map(|v| v.ln()).collect()).unwrap()
    }

    #[test]
    fn kl_hand_values() {
        let v = kl_div_loss(&[label(&[0.5, 0.5])], &logits_for(&[0.25, 0.75])).unwrap();
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.143841).abs() < 1e-6);

        let v = kl_div_loss(&[label(&[1.0, 0.0])], &logits_for(&[0.9, 0.1])).unwrap();
        assert!((v - 0.105361).abs() < 1e-6);

        let v = kl_div_loss(&[label(&[0.2, 0.3, 0.5])], &logits_for(&[0.2, 0.3, 0.5])).unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn ce_hand_values() {
        let z = Array2::from_shape_vec((1, 2), vec![10.0, -10.0]).unwrap();
        let v = cross_entropy_loss(&[0], &z).unwrap();
        assert!((v - (1.0 + (-20f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 2.06e-9).abs() < 1e-11);
        let v = cross_entropy_loss(&[1], &Array2::zeros((1, 2))).unwrap();
        assert!((v - 0.693147).abs() < 1e-6);
        let v = cross_entropy_loss(&[4], &Array2::zeros((1, 6))).unwrap();
        assert!((v - 1.791759).abs() < 1e-6);
        assert!(cross_entropy_loss(&[2], &Array2::zeros((1, 2))).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let z = Array2::from_shape_vec((1, 2), vec![f64::NAN, 0.0]).unwrap();
        assert!(kl_div_loss(&[label(&[0.5, 0.5])], &z).is_err());
    }

    #[test]
    fn grad_matches_finite_difference() {
        let p = [0.1, 0.6, 0.3, 0.0, 0.5, 0.5];
        let z = [0.3, -1.2, 0.8, 1.5, 0.1, -0.4];
        let (_, g) = loss_and_grad(LossKind::KlSoft, &p, &z, 3).unwrap();
        for i in 0..z.len() {
            let mut zp = z;
            let mut zm = z;
            zp[i] += 1e-6;
            zm[i] -= 1e-6;
            let fp = loss_and_grad(LossKind::KlSoft, &p, &zp, 3).unwrap().0;
            let fm = loss_and_grad(LossKind::KlSoft, &p, &zm, 3).unwrap().0;
            assert!(((fp - fm) / 2e-6 - g[i]).abs() < 1e-8);
        }
    }
}
