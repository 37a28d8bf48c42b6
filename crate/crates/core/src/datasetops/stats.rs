use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MaskSource;
use crate::manifest::{DatasetManifest, ImageRecord, SplitTag};
use crate::mask::LabelMap;
use crate::ontology::BACKGROUND;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub test: u64,
}

/// Whole-dataset counts. A "mask" is one (image, class) presence for a
/// non-background class, so `num_masks` equals the sum of the per-class
/// image counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatistics {
    pub num_images: u64,
    pub num_masks: u64,
    pub num_dishes: u64,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Indexed by class id; background is counted but never a "mask".
    pub per_class_image_counts: Vec<u64>,
    pub per_class_split_counts: Vec<SplitCounts>,
    pub mean_image_width: f64,
    pub mean_image_height: f64,
    /// True when some masks could not be read; see `diagnostics`.
    pub partial: bool,
    pub diagnostics: Vec<String>,
}

/// Mergeable partial statistics; [`StatsAccumulator::merge`] is associative
/// and commutative, so records may be folded in any grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsAccumulator {
    num_images: u64,
    num_masks: u64,
    class_counts: Vec<u64>,
    split_counts: Vec<SplitCounts>,
    width_sum: u64,
    height_sum: u64,
    measured: u64,
    dishes: BTreeSet<u32>,
    diagnostics: BTreeSet<String>,
}

impl StatsAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_images: 0,
            num_masks: 0,
            class_counts: vec![0; num_classes],
            split_counts: vec![SplitCounts::default(); num_classes],
            width_sum: 0,
            height_sum: 0,
            measured: 0,
            dishes: BTreeSet::new(),
            diagnostics: BTreeSet::new(),
        }
    }

    pub fn add(&mut self, record: &ImageRecord, mask: crate::Result<LabelMap>) {
        self.num_images += 1;
        self.dishes.insert(record.dish_id);
        let mask = match mask {
            Ok(m) => m,
            Err(e) => {
                self.diagnostics
                    .insert(format!("{}: {e}", record.mask_path.display()));
                return;
            }
        };
        self.measured += 1;
        self.width_sum += mask.width() as u64;
        self.height_sum += mask.height() as u64;
        for class in mask.present_classes() {
            let k = usize::from(class);
            self.class_counts[k] += 1;
            match record.split_tag {
                SplitTag::Train => self.split_counts[k].train += 1,
                SplitTag::Test => self.split_counts[k].test += 1,
                SplitTag::Unassigned => {}
            }
            if class != BACKGROUND {
                self.num_masks += 1;
            }
        }
    }

    pub fn merge(mut self, other: &StatsAccumulator) -> Self {
        self.num_images += other.num_images;
        self.num_masks += other.num_masks;
        for (a, b) in self.class_counts.iter_mut().zip(&other.class_counts) {
            *a += b;
        }
        for (a, b) in self.split_counts.iter_mut().zip(&other.split_counts) {
            a.train += b.train;
            a.test += b.test;
        }
        self.width_sum += other.width_sum;
        self.height_sum += other.height_sum;
        self.measured += other.measured;
        self.dishes.extend(&other.dishes);
        self.diagnostics.extend(other.diagnostics.iter().cloned());
        self
    }

    pub fn finish(self, class_names: Vec<String>) -> DatasetStatistics {
        let mean = |sum: u64| {
            if self.measured == 0 {
                0.0
            } else {
                sum as f64 / self.measured as f64
            }
        };
        DatasetStatistics {
            num_images: self.num_images,
            num_masks: self.num_masks,
            num_dishes: self.dishes.len() as u64,
            num_classes: self.class_counts.len(),
            class_names,
            mean_image_width: mean(self.width_sum),
            mean_image_height: mean(self.height_sum),
            per_class_image_counts: self.class_counts,
            per_class_split_counts: self.split_counts,
            partial: !self.diagnostics.is_empty(),
            diagnostics: self.diagnostics.into_iter().collect(),
        }
    }
}

pub fn compute_statistics(manifest: &DatasetManifest, masks: &dyn MaskSource) -> DatasetStatistics {
    let c = manifest.ontology.num_classes();
    let mut acc = StatsAccumulator::new(c);
    for rec in &manifest.records {
        acc.add(rec, masks.mask(rec, c));
    }
    acc.finish(manifest.ontology.names())
}

impl DatasetStatistics {
    /// Summary block named like the usual dataset comparison table, then a
    /// per-class table.
    pub fn to_report(&self) -> String {
        let mut out = String::from("statistic\tvalue\n");
        let _ = writeln!(out, "# Dish\t{}", self.num_dishes);
        let _ = writeln!(out, "# Ingr.\t{}", self.num_classes.saturating_sub(1));
        let _ = writeln!(out, "# images\t{}", self.num_images);
        let _ = writeln!(out, "# masks\t{}", self.num_masks);
        let _ = writeln!(out, "mean image width\t{} pixels", self.mean_image_width.round());
        let _ = writeln!(out, "mean image height\t{} pixels", self.mean_image_height.round());
        let _ = writeln!(out, "partial\t{}", self.partial);
        out.push_str("\nclass_id\tname\timages\ttrain\ttest\n");
        for (k, count) in self.per_class_image_counts.iter().enumerate() {
            let split = self.per_class_split_counts[k];
            let name = self.class_names.get(k).map(String::as_str).unwrap_or("?");
            let _ = writeln!(out, "{k}\t{name}\t{count}\t{}\t{}", split.train, split.test);
        }
        for d in &self.diagnostics {
            let _ = writeln!(out, "# diagnostic: {d}");
        }
        out
    }
}
