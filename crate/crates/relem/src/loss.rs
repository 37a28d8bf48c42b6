//! Alignment losses with closed-form gradients.

use crate::error::{ReLeMError, Result};

/// Whether an image and a recipe belong together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Match,
    Mismatch,
}

impl PairLabel {
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Match => 1.0,
            PairLabel::Mismatch => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss {
    pub value: f64,
    pub cosine: f64,
    pub grad_v: Vec<f64>,
    pub grad_t: Vec<f64>,
}

/// `1 - cos(v, t)` for matching pairs and `max(0, cos(v, t) - alpha)`
/// otherwise. Inputs need not be normalized; gradients are taken with
/// respect to the raw vectors. At `cos == alpha` the gradient is zero.
pub fn cosine_margin_loss(v: &[f64], t: &[f64], label: PairLabel, alpha: f64) -> Result<CosineLoss> {
    if v.len() != t.len() {
        return Err(ReLeMError::Shape(format!("v has {} entries, t has {}", v.len(), t.len())));
    }
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv == 0.0 || nt == 0.0 {
        return Err(ReLeMError::ZeroNorm);
    }
    let dot: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
    let cos = (dot / (nv * nt)).clamp(-1.0, 1.0);
    // d cos / dv = t / (|v||t|) - cos v / |v|^2, symmetric for t
    let dcos_dv = |v: &[f64], t: &[f64], nv: f64, nt: f64| -> Vec<f64> {
        v.iter()
            .zip(t)
            .map(|(a, b)| b / (nv * nt) - cos * a / (nv * nv))
            .collect()
    };
    let (value, sign) = match label {
        PairLabel::Match => (1.0 - cos, -1.0),
        PairLabel::Mismatch if cos > alpha => (cos - alpha, 1.0),
        PairLabel::Mismatch => (0.0, 0.0),
    };
    let scale = |g: Vec<f64>| g.into_iter().map(|x| x * sign).collect::<Vec<_>>();
    Ok(CosineLoss {
        value,
        cosine: cos,
        grad_v: scale(dcos_dv(v, t, nv, nt)),
        grad_t: scale(dcos_dv(t, v, nt, nv)),
    })
}

/// Softmax cross-entropy of `logits` against `label` and its gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} outside {} logits", logits.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, z)| (z - log_z).exp() - if i == label { 1.0 } else { 0.0 })
        .collect();
    (log_z - logits[label], grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLoss {
    pub value: f64,
    pub grad_v: Vec<f64>,
    pub grad_t: Vec<f64>,
    /// The image side had no label, so its term was skipped.
    pub missing_v: bool,
    pub missing_t: bool,
}

/// `CE(logits_v, u_v) + CE(logits_t, u_t)`; a missing label contributes 0.
pub fn semantic_loss(logits_v: &[f64], logits_t: &[f64], u_v: Option<usize>, u_t: Option<usize>) -> Result<SemanticLoss> {
    let k = logits_v.len();
    if logits_t.len() != k {
        return Err(ReLeMError::Shape(format!("{k} vs {} logits", logits_t.len())));
    }
    let term = |logits: &[f64], label: Option<usize>| -> Result<(f64, Vec<f64>)> {
        match label {
            Some(l) if l >= k => Err(ReLeMError::LabelOutOfRange { label: l, k }),
            Some(l) => Ok(cross_entropy(logits, l)),
            None => Ok((0.0, vec![0.0; k])),
        }
    };
    let (lv, grad_v) = term(logits_v, u_v)?;
    let (lt, grad_t) = term(logits_t, u_t)?;
    Ok(SemanticLoss {
        value: lv + lt,
        grad_v,
        grad_t,
        missing_v: u_v.is_none(),
        missing_t: u_t.is_none(),
    })
}

/// `cosine + lambda * semantic`.
pub fn total_loss(cosine: &CosineLoss, semantic: &SemanticLoss, lambda_semantic: f64) -> f64 {
    cosine.value + lambda_semantic * semantic.value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_values() {
        let v = [0.6, 0.8];
        assert_eq!(cosine_margin_loss(&v, &v, PairLabel::Match, 0.1).unwrap().value, 0.0);
        assert_eq!(cosine_margin_loss(&v, &v, PairLabel::Mismatch, 0.1).unwrap().value, 0.9);
        let ortho = cosine_margin_loss(&[1.0, 0.0], &[0.0, 1.0], PairLabel::Mismatch, 0.1).unwrap();
        assert_eq!(ortho.value, 0.0);
        assert!(ortho.grad_v.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_norm_rejected() {
        assert!(matches!(
            cosine_margin_loss(&[0.0, 0.0], &[1.0, 0.0], PairLabel::Match, 0.1),
            Err(ReLeMError::ZeroNorm)
        ));
    }

    #[test]
    fn uniform_logits_give_two_log_k() {
        let k = 2000;
        let z = vec![0.3; k];
        let s = semantic_loss(&z, &z, Some(5), Some(1999)).unwrap();
        assert!((s.value - 2.0 * (k as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn missing_label_is_skipped_and_flagged() {
        let s = semantic_loss(&[1.0, 2.0], &[0.0, 0.0], None, Some(0)).unwrap();
        assert!(s.missing_v && !s.missing_t);
        assert!((s.value - 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.grad_v, vec![0.0, 0.0]);
    }

    #[test]
    fn confident_correct_head_tends_to_zero() {
        let s = semantic_loss(&[60.0, 0.0], &[0.0, 60.0], Some(0), Some(1)).unwrap();
        assert!(s.value < 1e-20);
    }
}
