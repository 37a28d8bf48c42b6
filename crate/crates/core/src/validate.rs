//! Image-selection rules applied to annotated records.

use std::fmt;

use crate::manifest::ImageRecord;
use crate::mask::LabelMap;
use crate::ontology::{CategoryOntology, BACKGROUND};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRules {
    pub min_ingredients: usize,
    pub max_ingredients: usize,
    /// Minimum share of all image pixels each present ingredient must cover.
    pub min_area_fraction: f64,
}

impl Default for SelectionRules {
    fn default() -> Self {
        Self {
            min_ingredients: 2,
            max_ingredients: 16,
            min_area_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewIngredients { found: usize, min: usize },
    TooManyIngredients { found: usize, max: usize },
    RegionBelowMinArea { class: u8, fraction: f64, min: f64 },
    UnlistedClass { class: u8 },
    UnknownClass { class: u8 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewIngredients { found, min } => {
                write!(f, "ingredient count < {min} (found {found})")
            }
            Violation::TooManyIngredients { found, max } => {
                write!(f, "ingredient count > {max} (found {found})")
            }
            Violation::RegionBelowMinArea {
                class,
                fraction,
                min,
            } => write!(
                f,
                "region below {}%: class {class} covers {:.2}%",
                min * 100.0,
                fraction * 100.0
            ),
            Violation::UnlistedClass { class } => {
                write!(f, "class {class} present in mask but not listed in record")
            }
            Violation::UnknownClass { class } => write!(f, "class {class} not in ontology"),
        }
    }
}

pub fn validate_record(
    rec: &ImageRecord,
    mask: &LabelMap,
    ontology: &CategoryOntology,
) -> Vec<Violation> {
    validate_record_with(rec, mask, ontology, &SelectionRules::default())
}

pub fn validate_record_with(
    rec: &ImageRecord,
    mask: &LabelMap,
    ontology: &CategoryOntology,
    rules: &SelectionRules,
) -> Vec<Violation> {
    let hist = mask.histogram();
    let total = mask.len() as f64;
    let present: Vec<u8> = mask
        .present_classes()
        .into_iter()
        .filter(|&c| c != BACKGROUND)
        .collect();

    let mut out = Vec::new();
    if present.len() < rules.min_ingredients {
        out.push(Violation::TooFewIngredients {
            found: present.len(),
            min: rules.min_ingredients,
        });
    }
    if present.len() > rules.max_ingredients {
        out.push(Violation::TooManyIngredients {
            found: present.len(),
            max: rules.max_ingredients,
        });
    }
    for &class in &present {
        if !ontology.contains(class) {
            out.push(Violation::UnknownClass { class });
            continue;
        }
        let fraction = hist[usize::from(class)] as f64 / total;
        if fraction < rules.min_area_fraction {
            out.push(Violation::RegionBelowMinArea {
                class,
                fraction,
                min: rules.min_area_fraction,
            });
        }
        if !rec.ingredient_ids.contains(&class) {
            out.push(Violation::UnlistedClass { class });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::SplitTag;

    fn ontology(n: usize) -> CategoryOntology {
        let names: Vec<String> = (1..=n).map(|i| format!("ing{i}")).collect();
        let pairs: Vec<(&str, u8)> = names.iter().map(|s| (s.as_str(), 0)).collect();
        CategoryOntology::new("background", &pairs, &["Others"]).unwrap()
    }

    fn record(ids: impl IntoIterator<Item = u8>) -> ImageRecord {
        ImageRecord {
            image_path: "i.png".into(),
            mask_path: "m.png".into(),
            dish_id: 0,
            ingredient_ids: ids.into_iter().collect(),
            split_tag: SplitTag::Unassigned,
        }
    }

    /// Mask of `counts[i].1` pixels for each class `counts[i].0`, rest background.
    fn mask_with(total: usize, counts: &[(u8, usize)]) -> LabelMap {
        let mut data = vec![0u8; total];
        let mut at = 0;
        for &(c, n) in counts {
            data[at..at + n].fill(c);
            at += n;
        }
        LabelMap::new(1, total, data).unwrap()
    }

    #[test]
    fn two_large_regions_pass() {
        let ont = ontology(10);
        let mask = mask_with(100, &[(5, 30), (9, 20)]);
        assert!(validate_record(&record([5, 9]), &mask, &ont).is_empty());
    }

    #[test]
    fn single_ingredient_flagged() {
        let ont = ontology(10);
        let mask = mask_with(100, &[(5, 50)]);
        let v = validate_record(&record([5]), &mask, &ont);
        assert_eq!(v, vec![Violation::TooFewIngredients { found: 1, min: 2 }]);
        assert!(v[0].to_string().starts_with("ingredient count < 2"));
    }

    #[test]
    fn seventeen_ingredients_flagged() {
        let ont = ontology(20);
        let counts: Vec<(u8, usize)> = (1..=17).map(|c| (c, 10)).collect();
        let mask = mask_with(170, &counts);
        let v = validate_record(&record(1..=17), &mask, &ont);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("ingredient count > 16"));
        let counts: Vec<(u8, usize)> = (1..=16).map(|c| (c, 10)).collect();
        let mask = mask_with(160, &counts);
        assert!(validate_record(&record(1..=16), &mask, &ont).is_empty());
    }

    #[test]
    fn small_region_flagged_by_pixel_share() {
        let ont = ontology(10);
        // class 7: 3 of 100 pixels
        let mask = mask_with(100, &[(5, 40), (7, 3)]);
        let v = validate_record(&record([5, 7]), &mask, &ont);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::RegionBelowMinArea { class, fraction, .. } => {
                assert_eq!(*class, 7);
                assert_eq!(*fraction, 3.0 / 100.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(v[0].to_string().starts_with("region below 5%"));
        // exactly 5% is allowed
        let mask = mask_with(100, &[(5, 40), (7, 5)]);
        assert!(validate_record(&record([5, 7]), &mask, &ont).is_empty());
    }

    #[test]
    fn unlisted_class_and_purity() {
        let ont = ontology(10);
        let mask = mask_with(100, &[(5, 40), (6, 40)]);
        let v1 = validate_record(&record([5]), &mask, &ont);
        let v2 = validate_record(&record([5]), &mask, &ont);
        assert_eq!(v1, vec![Violation::UnlistedClass { class: 6 }]);
        assert_eq!(v1, v2);
    }
}
