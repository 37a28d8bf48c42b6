use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::CategoryOntology;

/// Environment variable that overrides the directory relative record paths
/// are resolved against.
pub const DATA_ROOT_ENV: &str = "FOODSEG_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Unassigned,
}

impl Default for SplitTag {
    fn default() -> Self {
        SplitTag::Unassigned
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub dish_id: u32,
    pub ingredient_ids: BTreeSet<u8>,
    #[serde(default)]
    pub split_tag: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub ontology: CategoryOntology,
    pub records: Vec<ImageRecord>,
    /// Fingerprints of refinement plans already applied to this manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub applied_plans: Vec<String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, ontology: CategoryOntology, records: Vec<ImageRecord>) -> Self {
        Self {
            name: name.into(),
            ontology,
            records,
            applied_plans: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ontology.validate()?;
        let mut images = HashSet::new();
        let mut masks = HashSet::new();
        for rec in &self.records {
            if !images.insert(&rec.image_path) {
                return Err(Error::Manifest(format!(
                    "duplicate image path {}",
                    rec.image_path.display()
                )));
            }
            if !masks.insert(&rec.mask_path) {
                return Err(Error::Manifest(format!(
                    "duplicate mask path {}",
                    rec.mask_path.display()
                )));
            }
            if let Some(bad) = rec.ingredient_ids.iter().find(|&&id| !self.ontology.contains(id)) {
                return Err(Error::Manifest(format!(
                    "{} lists unknown class {bad}",
                    rec.image_path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split_tag == tag)
    }

    pub fn split_count(&self, tag: SplitTag) -> usize {
        self.split(tag).count()
    }
}

/// Directory relative record paths resolve against: [`DATA_ROOT_ENV`] when
/// set, otherwise the directory holding the manifest.
pub fn data_root_for(manifest_path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    }
}

pub fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ont() -> CategoryOntology {
        CategoryOntology::new("background", &[("a", 0), ("b", 0)], &["Others"]).unwrap()
    }

    fn rec(name: &str, ids: &[u8]) -> ImageRecord {
        ImageRecord {
            image_path: format!("img/{name}.png").into(),
            mask_path: format!("ann/{name}.png").into(),
            dish_id: 1,
            ingredient_ids: ids.iter().copied().collect(),
            split_tag: SplitTag::Unassigned,
        }
    }

    #[test]
    fn json_field_names_and_round_trip() {
        let m = DatasetManifest::new("t", ont(), vec![rec("x", &[1, 2])]);
        let json = m.to_json();
        for field in ["image_path", "mask_path", "dish_id", "ingredient_ids", "split_tag"] {
            assert!(json.contains(field), "{field} missing");
        }
        assert!(json.contains("\"unassigned\""));
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn duplicate_paths_and_unknown_ids_rejected() {
        let m = DatasetManifest::new("t", ont(), vec![rec("x", &[1]), rec("x", &[2])]);
        assert!(m.validate().is_err());
        let m = DatasetManifest::new("t", ont(), vec![rec("x", &[7])]);
        assert!(m.validate().is_err());
    }
}
