use foodseg_core::{LabelMap, IGNORE};
use foodseg_nn::Tensor;

use crate::error::{Result, SegError};

#[derive(Debug, Clone, PartialEq)]
pub struct PixelLoss {
    pub value: f64,
    /// Gradient with respect to the logits.
    pub grad: Tensor,
    pub valid_pixels: usize,
    /// Every pixel was ignored, so the loss is defined as 0.
    pub all_ignored: bool,
}

/// Mean softmax cross-entropy over pixels whose label is not `IGNORE`.
/// `logits` is `[N, C, H, W]`; `labels` holds `N * H * W` ids in row-major
/// image order.
pub fn pixel_ce_loss(logits: &Tensor, labels: &[u8]) -> Result<PixelLoss> {
    if logits.rank() != 4 {
        return Err(SegError::Shape(format!("logits must be [N, C, H, W], got {:?}", logits.shape())));
    }
    let (n, c, h, w) = (logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3));
    let hw = h * w;
    if labels.len() != n * hw {
        return Err(SegError::Shape(format!("{} labels for logits {:?}", labels.len(), logits.shape())));
    }
    let z = logits.data();
    let mut grad = vec![0.0; z.len()];
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut probs = vec![0.0; c];
    for (index, &label) in labels.iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        if label as usize >= c {
            return Err(SegError::Label {
                label,
                index,
                num_classes: c,
            });
        }
        let (img, px) = (index / hw, index % hw);
        let at = |k: usize| img * c * hw + k * hw + px;
        let max = (0..c).map(|k| z[at(k)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (z[at(k)] - max).exp();
            sum += *p;
        }
        total += max + sum.ln() - z[at(label as usize)];
        for (k, p) in probs.iter().enumerate() {
            grad[at(k)] = p / sum - if k == label as usize { 1.0 } else { 0.0 };
        }
        valid += 1;
    }
    if valid > 0 {
        let inv = 1.0 / valid as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        total *= inv;
    }
    Ok(PixelLoss {
        value: total,
        grad: Tensor::new(logits.shape(), grad),
        valid_pixels: valid,
        all_ignored: valid == 0,
    })
}

/// Per-pixel argmax of `[N, C, H, W]` logits; ties go to the lower id.
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<LabelMap>> {
    if logits.rank() != 4 || logits.dim(1) == 0 || logits.dim(1) > 255 {
        return Err(SegError::Shape(format!("cannot take argmax of {:?}", logits.shape())));
    }
    let (n, c, h, w) = (logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3));
    let hw = h * w;
    let z = logits.data();
    let mut out = Vec::with_capacity(n);
    for img in 0..n {
        let base = img * c * hw;
        let data = (0..hw)
            .map(|px| {
                let mut best = 0;
                for k in 1..c {
                    if z[base + k * hw + px] > z[base + best * hw + px] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        out.push(LabelMap::new(h, w, data)?);
    }
    Ok(out)
}
