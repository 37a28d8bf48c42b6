//! The bundled twelve-image fixture used by tests and the CLI smoke runs.
//!
//! Seven ingredient classes over three dishes; class 7 ("saffron") is the
//! planted rare class present in only two images.

use std::path::Path;

use super::MemoryMasks;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRecord, SplitTag};
use crate::mask::{save_mask, LabelMap, RgbImage, IGNORE};
use crate::ontology::CategoryOntology;

pub const FIXTURE_CLASSES: &[(&str, u8)] = &[
    ("rice", 9),
    ("egg", 3),
    ("tomato", 11),
    ("lettuce", 11),
    ("orange", 4),
    ("citrus", 4),
    ("saffron", 6),
];

/// The fifteen FoodSeg103 super classes, "Others" included.
pub const FIXTURE_SUPER_CLASSES: &[&str] = &[
    "Dessert", "Beverage", "Nut", "Egg", "Fruit", "Meat", "Condiment", "Seafood", "Soup", "Main", "Soy",
    "Vegetable", "Fungus", "Salad", "Others",
];

/// (dish id, ingredient classes) per image.
pub const FIXTURE_IMAGES: &[(u32, &[u8])] = &[
    (1, &[1, 2]),
    (1, &[1, 3]),
    (1, &[1, 2, 3]),
    (2, &[2, 4]),
    (2, &[1, 4, 5]),
    (2, &[3, 4, 6]),
    (2, &[1, 5, 7]),
    (3, &[2, 3, 5]),
    (3, &[4, 5, 6]),
    (3, &[1, 6]),
    (3, &[3, 6, 7]),
    (3, &[2, 4, 5, 6]),
];

pub const FIXTURE_HEIGHT: usize = 8;

pub fn fixture_width(index: usize) -> usize {
    if index % 2 == 0 {
        8
    } else {
        12
    }
}

/// Vertical bands: background first, then each class in order. Every third
/// image carries one IGNORE pixel in its top-left corner.
pub fn fixture_mask(index: usize) -> LabelMap {
    let (_, classes) = FIXTURE_IMAGES[index];
    let (h, w) = (FIXTURE_HEIGHT, fixture_width(index));
    let bands = classes.len() + 1;
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h {
        for c in 0..w {
            let band = c * bands / w;
            data.push(if band == 0 { 0 } else { classes[band - 1] });
        }
    }
    if index % 3 == 0 {
        data[0] = IGNORE;
    }
    LabelMap::new(h, w, data).expect("fixture shape")
}

pub fn fixture_ontology() -> CategoryOntology {
    CategoryOntology::new("background", FIXTURE_CLASSES, FIXTURE_SUPER_CLASSES)
        .expect("fixture ontology")
}

pub fn fixture_manifest() -> (DatasetManifest, MemoryMasks) {
    let mut masks = MemoryMasks::default();
    let records = FIXTURE_IMAGES
        .iter()
        .enumerate()
        .map(|(i, (dish, classes))| {
            let rec = ImageRecord {
                image_path: format!("images/{i:03}.png").into(),
                mask_path: format!("masks/{i:03}.png").into(),
                dish_id: *dish,
                ingredient_ids: classes.iter().copied().collect(),
                split_tag: SplitTag::Unassigned,
            };
            masks.insert(&rec.mask_path, fixture_mask(i));
            rec
        })
        .collect();
    (
        DatasetManifest::new("fixture12", fixture_ontology(), records),
        masks,
    )
}

/// Writes the fixture (manifest.json, masks/, images/) under `dir` and
/// returns the manifest path.
pub fn write_fixture(dir: &Path) -> Result<std::path::PathBuf> {
    let (manifest, masks) = fixture_manifest();
    for sub in ["masks", "images"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    for rec in &manifest.records {
        let mask = &masks.masks[&rec.mask_path];
        save_mask(dir.join(&rec.mask_path), mask)?;
        let rgb: Vec<u8> = mask
            .data()
            .iter()
            .flat_map(|&v| [v.wrapping_mul(37), v.wrapping_mul(91), v.wrapping_mul(13)])
            .collect();
        RgbImage::new(mask.height(), mask.width(), rgb)?.save(dir.join(&rec.image_path))?;
    }
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
