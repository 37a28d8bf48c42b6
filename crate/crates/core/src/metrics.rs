//! Confusion-matrix accumulation and per-class / mean segmentation metrics.
//!
//! Counts are exact integers so that matrices built from any partition of a
//! dataset merge to a bit-identical result; ratios are only formed in
//! [`ConfusionMatrix::summarize`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::LabelMap;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// Row-major; `counts[g * C + p]` = pixels with ground truth `g` predicted as `p`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds the matrix for one (prediction, ground truth) pair.
    pub fn from_pair(pred: &LabelMap, gt: &LabelMap, num_classes: usize, ignore: u8) -> Result<Self> {
        let mut cm = Self::new(num_classes);
        cm.accumulate(pred, gt, ignore)?;
        Ok(cm)
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, ignore: u8) -> Result<()> {
        if !pred.same_shape(gt) {
            return Err(Error::DimensionMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let c = self.num_classes;
        // Validate first so a failed call leaves the matrix untouched.
        for (index, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if g == ignore {
                continue;
            }
            for value in [g, p] {
                if usize::from(value) >= c {
                    return Err(Error::InvalidLabel {
                        value,
                        index,
                        num_classes: c,
                    });
                }
            }
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != ignore {
                self.counts[usize::from(g) * c + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.get(k, k)
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&g| g != k)
            .map(|g| self.get(g, k))
            .sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&p| p != k)
            .map(|p| self.get(k, p))
            .sum()
    }

    /// Element-wise sum.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::ClassCountMismatch(self.num_classes, other.num_classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn summarize(&self) -> MetricReport {
        self.summarize_with(true)
    }

    /// Per-class IoU = TP/(TP+FP+FN), Acc = TP/(TP+FN). A class whose
    /// denominator is zero gets `None` and is left out of the corresponding
    /// mean. With `include_background == false`, class 0 is reported but
    /// excluded from both means.
    pub fn summarize_with(&self, include_background: bool) -> MetricReport {
        let c = self.num_classes;
        let mut per_class_iou = Vec::with_capacity(c);
        let mut per_class_acc = Vec::with_capacity(c);
        let mut present = BTreeSet::new();
        for k in 0..c {
            let tp = self.true_positives(k);
            let fp = self.false_positives(k);
            let fn_ = self.false_negatives(k);
            if tp + fp + fn_ > 0 {
                present.insert(k);
            }
            per_class_iou.push(ratio(tp, tp + fp + fn_));
            per_class_acc.push(ratio(tp, tp + fn_));
        }
        let first = if include_background { 0 } else { 1 };
        MetricReport {
            miou: mean_defined(per_class_iou.iter().skip(first)),
            macc: mean_defined(per_class_acc.iter().skip(first)),
            aacc: ratio(self.trace(), self.total()),
            per_class_iou,
            per_class_acc,
            present_classes: present,
            include_background,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summary metrics. `None` marks a value whose denominator was zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_acc: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
    pub aacc: Option<f64>,
    pub present_classes: BTreeSet<usize>,
    pub include_background: bool,
}

impl MetricReport {
    /// Tab-separated report: one row per class (`class_id name iou acc`)
    /// followed by a `mIoU mAcc aAcc` summary block.
    pub fn to_tsv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class_id\tname\tIoU\tAcc\n");
        for (k, (iou, acc)) in self.per_class_iou.iter().zip(&self.per_class_acc).enumerate() {
            let name = class_names.get(k).map(String::as_str).unwrap_or("?");
            let _ = writeln!(out, "{k}\t{name}\t{}\t{}", fmt_opt(*iou), fmt_opt(*acc));
        }
        out.push_str("\nmIoU\tmAcc\taAcc\n");
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            fmt_opt(self.miou),
            fmt_opt(self.macc),
            fmt_opt(self.aacc)
        );
        out
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    }
}

/// Published full-scale FoodSeg103 results (mIoU, mAcc in percent), kept as
/// annotations for comparison tables. Desk-scale runs do not reproduce them.
pub const FOODSEG103_REFERENCE: &[(&str, f64, f64)] = &[
    ("CCNet (ResNet-50)", 35.5, 45.3),
    ("ReLeM-CCNet (LSTM)", 36.8, 47.4),
    ("ReLeM-CCNet (Transformer)", 36.0, 46.5),
    ("FPN (ResNet-50)", 27.8, 38.2),
    ("ReLeM-FPN (LSTM)", 29.1, 39.8),
    ("ReLeM-FPN (Transformer)", 28.9, 39.7),
    ("SeTR (ViT-16/B)", 41.3, 52.7),
    ("ReLeM-SeTR (LSTM)", 43.9, 57.0),
    ("ReLeM-SeTR (Transformer)", 43.2, 55.7),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::IGNORE;
    use proptest::prelude::*;

    fn lm(h: usize, w: usize, d: &[u8]) -> LabelMap {
        LabelMap::new(h, w, d.to_vec()).unwrap()
    }

    #[test]
    fn worked_two_class_example() {
        let gt = lm(2, 2, &[0, 0, 1, 1]);
        let pred = lm(2, 2, &[0, 1, 1, 1]);
        let cm = ConfusionMatrix::from_pair(&pred, &gt, 2, IGNORE).unwrap();
        assert_eq!(cm.counts(), &[1, 1, 0, 2]);
        let r = cm.summarize();
        assert_eq!(r.per_class_iou, vec![Some(1.0 / 2.0), Some(2.0 / 3.0)]);
        assert_eq!(r.per_class_acc, vec![Some(1.0 / 2.0), Some(1.0)]);
        assert!((r.miou.unwrap() - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.macc, Some(0.75));
        assert_eq!(r.aacc, Some(0.75));
    }

    #[test]
    fn identity_prediction_is_diagonal() {
        let gt = lm(2, 3, &[0, 1, 2, 2, IGNORE, 1]);
        let cm = ConfusionMatrix::from_pair(&gt, &gt, 4, IGNORE).unwrap();
        assert_eq!(cm.trace(), cm.total());
        assert_eq!(cm.total(), 5);
        let r = cm.summarize();
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.per_class_iou[3], None);
        assert_eq!(r.present_classes, [0, 1, 2].into_iter().collect());
    }

    #[test]
    fn diagonal_matrix_scores_one() {
        let gt = lm(1, 8, &[0, 0, 0, 0, 0, 1, 1, 1]);
        let r = ConfusionMatrix::from_pair(&gt, &gt, 2, IGNORE).unwrap().summarize();
        assert_eq!((r.miou, r.macc, r.aacc), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn all_ignored_is_undefined_not_zero() {
        let gt = lm(2, 2, &[IGNORE; 4]);
        let pred = lm(2, 2, &[0, 1, 0, 1]);
        let cm = ConfusionMatrix::from_pair(&pred, &gt, 2, IGNORE).unwrap();
        assert_eq!(cm.total(), 0);
        let r = cm.summarize();
        assert_eq!((r.miou, r.macc, r.aacc), (None, None, None));
        assert!(r.to_tsv(&[]).contains("undefined"));
    }

    #[test]
    fn errors() {
        let a = lm(2, 2, &[0; 4]);
        let b = lm(1, 4, &[0; 4]);
        assert!(matches!(
            ConfusionMatrix::from_pair(&a, &b, 2, IGNORE),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(ConfusionMatrix::new(2).merge(&ConfusionMatrix::new(3)).is_err());
        let bad = lm(1, 2, &[0, 5]);
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&bad, &lm(1, 2, &[0, 1]), IGNORE).is_err());
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn background_flag_changes_means_only() {
        let gt = lm(2, 2, &[0, 0, 1, 1]);
        let pred = lm(2, 2, &[0, 1, 1, 1]);
        let cm = ConfusionMatrix::from_pair(&pred, &gt, 2, IGNORE).unwrap();
        let r = cm.summarize_with(false);
        assert_eq!(r.miou, Some(2.0 / 3.0));
        assert_eq!(r.macc, Some(1.0));
        assert_eq!(r.aacc, Some(0.75));
    }

    #[test]
    fn tsv_layout() {
        let gt = lm(1, 2, &[0, 1]);
        let r = ConfusionMatrix::from_pair(&gt, &gt, 2, IGNORE).unwrap().summarize();
        let names = vec!["background".to_string(), "candy".to_string()];
        assert_eq!(
            r.to_tsv(&names),
            "class_id\tname\tIoU\tAcc\n0\tbackground\t1.000000\t1.000000\n1\tcandy\t1.000000\t1.000000\n\nmIoU\tmAcc\taAcc\n1.000000\t1.000000\t1.000000\n"
        );
    }

    fn matrix(c: usize) -> impl Strategy<Value = ConfusionMatrix> {
        prop::collection::vec(0u64..50, c * c).prop_map(move |counts| ConfusionMatrix {
            num_classes: c,
            counts,
        })
    }

    proptest! {
        #[test]
        fn iou_never_exceeds_acc_and_all_in_unit_interval(cm in matrix(5)) {
            let r = cm.summarize();
            for (iou, acc) in r.per_class_iou.iter().zip(&r.per_class_acc) {
                if let (Some(i), Some(a)) = (iou, acc) {
                    prop_assert!(i <= a);
                }
            }
            for v in r.per_class_iou.iter().chain(&r.per_class_acc).chain([&r.miou, &r.macc, &r.aacc]).flatten() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn merge_is_a_commutative_monoid(a in matrix(4), b in matrix(4), c in matrix(4)) {
            prop_assert_eq!(a.merge(&ConfusionMatrix::new(4)).unwrap(), a.clone());
            prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
            prop_assert_eq!(
                a.merge(&b).unwrap().merge(&c).unwrap(),
                a.merge(&b.merge(&c).unwrap()).unwrap()
            );
        }
    }
}
