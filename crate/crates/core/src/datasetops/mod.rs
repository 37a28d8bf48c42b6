//! Dataset statistics, refinement and split procedures over a
//! [`DatasetManifest`](crate::manifest::DatasetManifest).

mod distribution;
pub mod fixture;
mod import;
mod refine;
mod split;
mod stats;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub use distribution::{class_distribution_report, distribution_svg, distribution_tsv, DistributionRow};
pub use import::import_foodseg103;
pub use refine::{apply_refinement, plan_delete_rare, IdChange, Refined, RefinementPlan, RelabelFix};
pub use split::{round_half_up, split_random, split_stratified_by_dish};
pub use stats::{compute_statistics, DatasetStatistics, SplitCounts, StatsAccumulator};

use crate::error::{Error, Result};
use crate::manifest::{resolve, ImageRecord};
use crate::mask::{load_mask, LabelMap};

/// Where the masks referenced by manifest records come from.
pub trait MaskSource {
    fn mask(&self, record: &ImageRecord, num_classes: usize) -> Result<LabelMap>;
}

/// Masks read from disk, relative paths resolved against `root`.
#[derive(Debug, Clone)]
pub struct DiskMasks {
    pub root: PathBuf,
}

impl DiskMasks {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_of(&self, record: &ImageRecord) -> PathBuf {
        resolve(&self.root, &record.mask_path)
    }
}

impl MaskSource for DiskMasks {
    fn mask(&self, record: &ImageRecord, num_classes: usize) -> Result<LabelMap> {
        load_mask(self.path_of(record), num_classes)
    }
}

/// Masks held in memory, keyed by the record's mask path.
#[derive(Debug, Clone, Default)]
pub struct MemoryMasks {
    pub masks: HashMap<PathBuf, LabelMap>,
}

impl MemoryMasks {
    pub fn insert(&mut self, path: impl AsRef<Path>, mask: LabelMap) {
        self.masks.insert(path.as_ref().to_path_buf(), mask);
    }
}

impl MaskSource for MemoryMasks {
    fn mask(&self, record: &ImageRecord, num_classes: usize) -> Result<LabelMap> {
        let mask = self
            .masks
            .get(&record.mask_path)
            .cloned()
            .ok_or_else(|| {
                Error::io(
                    &record.mask_path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "mask not in memory"),
                )
            })?;
        mask.check_classes(num_classes)?;
        Ok(mask)
    }
}
