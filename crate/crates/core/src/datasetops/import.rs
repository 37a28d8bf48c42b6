use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRecord, SplitTag};
use crate::mask::read_mask;
use crate::ontology::{ClassEntry, CategoryOntology, SuperClass, BACKGROUND};

/// Builds a manifest from the public FoodSeg103 release layout:
/// `category_id.txt` (`id<TAB>name` per line) and
/// `Images/{img_dir,ann_dir}/{train,test}/`. Dish ids are not part of the
/// release, so every record gets dish 0; the ontology has a single
/// "Others" super class.
pub fn import_foodseg103(root: &Path) -> Result<DatasetManifest> {
    let cat_path = root.join("category_id.txt");
    let text = std::fs::read_to_string(&cat_path).map_err(|e| Error::io(&cat_path, e))?;
    let mut classes = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let id: u8 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Manifest(format!("bad category line {line:?}")))?;
        let name = parts.collect::<Vec<_>>().join(" ");
        classes.push(ClassEntry {
            id,
            name,
            super_class: (id != BACKGROUND).then_some(0),
        });
    }
    let ontology = CategoryOntology {
        classes,
        super_classes: vec![SuperClass {
            id: 0,
            name: "Others".into(),
        }],
    };
    ontology.validate()?;

    let mut records = Vec::new();
    for (split, tag) in [("train", SplitTag::Train), ("test", SplitTag::Test)] {
        let ann_dir = root.join("Images/ann_dir").join(split);
        let mut entries: Vec<_> = std::fs::read_dir(&ann_dir)
            .map_err(|e| Error::io(&ann_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        entries.sort();
        for mask_path in entries {
            let stem = mask_path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let mask = read_mask(&mask_path)?;
            let ingredient_ids: BTreeSet<u8> = mask
                .present_classes()
                .into_iter()
                .filter(|&c| c != BACKGROUND)
                .collect();
            records.push(ImageRecord {
                image_path: format!("Images/img_dir/{split}/{stem}.jpg").into(),
                mask_path: format!("Images/ann_dir/{split}/{stem}.png").into(),
                dish_id: 0,
                ingredient_ids,
                split_tag: tag,
            });
        }
    }
    let manifest = DatasetManifest::new("FoodSeg103", ontology, records);
    manifest.validate()?;
    Ok(manifest)
}
