use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::IGNORE;

pub const BACKGROUND: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    /// Super-class id; `None` only for background.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub super_class: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperClass {
    pub id: u8,
    pub name: String,
}

/// Ingredient classes grouped into super classes. Class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryOntology {
    pub classes: Vec<ClassEntry>,
    pub super_classes: Vec<SuperClass>,
}

impl CategoryOntology {
    /// Builds and validates an ontology from `(name, super id)` pairs for the
    /// non-background classes, which receive ids 1..=n in order.
    pub fn new(
        background_name: &str,
        ingredients: &[(&str, u8)],
        super_classes: &[&str],
    ) -> Result<Self> {
        let mut classes = vec![ClassEntry {
            id: BACKGROUND,
            name: background_name.to_string(),
            super_class: None,
        }];
        for (i, (name, sup)) in ingredients.iter().enumerate() {
            classes.push(ClassEntry {
                id: (i + 1) as u8,
                name: name.to_string(),
                super_class: Some(*sup),
            });
        }
        let super_classes = super_classes
            .iter()
            .enumerate()
            .map(|(i, n)| SuperClass {
                id: i as u8,
                name: n.to_string(),
            })
            .collect();
        let ont = Self {
            classes,
            super_classes,
        };
        ont.validate()?;
        Ok(ont)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Ontology("no classes".into()));
        }
        if self.classes.len() > usize::from(IGNORE) {
            return Err(Error::Ontology(format!(
                "{} classes do not fit below the IGNORE value",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if usize::from(c.id) != i {
                return Err(Error::Ontology(format!(
                    "class ids must be dense: position {i} holds id {}",
                    c.id
                )));
            }
        }
        let supers: BTreeSet<u8> = self.super_classes.iter().map(|s| s.id).collect();
        if supers.len() != self.super_classes.len() {
            return Err(Error::Ontology("duplicate super-class id".into()));
        }
        for c in &self.classes[1..] {
            match c.super_class {
                Some(s) if supers.contains(&s) => {}
                Some(s) => {
                    return Err(Error::Ontology(format!(
                        "class {} refers to unknown super class {s}",
                        c.id
                    )))
                }
                None => {
                    return Err(Error::Ontology(format!(
                        "class {} has no super class",
                        c.id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn background_id(&self) -> u8 {
        BACKGROUND
    }

    pub fn contains(&self, id: u8) -> bool {
        usize::from(id) < self.classes.len()
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.classes.get(usize::from(id)).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn class_to_super(&self) -> BTreeMap<u8, u8> {
        self.classes
            .iter()
            .filter_map(|c| c.super_class.map(|s| (c.id, s)))
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_ids_and_total_super_map() {
        let ont = CategoryOntology::new("background", &[("candy", 0), ("egg", 1)], &["Dessert", "Egg"])
            .unwrap();
        assert_eq!(ont.num_classes(), 3);
        assert_eq!(ont.id_of("egg"), Some(2));
        assert_eq!(ont.class_to_super().len(), 2);

        let mut broken = ont.clone();
        broken.classes[2].super_class = None;
        assert!(broken.validate().is_err());
        let mut broken = ont.clone();
        broken.classes[1].id = 5;
        assert!(broken.validate().is_err());
        let mut broken = ont;
        broken.classes[1].super_class = Some(9);
        assert!(broken.validate().is_err());
    }
}
