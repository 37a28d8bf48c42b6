use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetStatistics, MaskSource};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::mask::{remap_labels, LabelMap, LabelMapping};
use crate::ontology::{CategoryOntology, ClassEntry, BACKGROUND};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelFix {
    /// Record the fix applies to, identified by its image path.
    pub image_path: PathBuf,
    pub old_id: u8,
    pub new_id: u8,
}

/// Class deletions, merges and per-record label corrections, all expressed
/// in the ids of the ontology the plan was made for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementPlan {
    #[serde(default)]
    pub delete_set: BTreeSet<u8>,
    /// Merged class -> surviving class. Chains are followed to their end.
    #[serde(default)]
    pub merge_map: BTreeMap<u8, u8>,
    #[serde(default)]
    pub relabel_fixes: Vec<RelabelFix>,
}

impl RefinementPlan {
    pub fn is_empty(&self) -> bool {
        self.delete_set.is_empty() && self.merge_map.is_empty() && self.relabel_fixes.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("plan serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Survivor of `id` after following merge chains.
    fn resolve_merge(&self, id: u8) -> Result<u8> {
        let mut seen = BTreeSet::new();
        let mut cur = id;
        while let Some(&next) = self.merge_map.get(&cur) {
            if !seen.insert(cur) {
                return Err(Error::Plan(format!("merge cycle through class {id}")));
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn validate(&self, ontology: &CategoryOntology) -> Result<()> {
        let known = |id: u8, what: &str| {
            if ontology.contains(id) {
                Ok(())
            } else {
                Err(Error::Plan(format!("{what} refers to unknown class {id}")))
            }
        };
        for &id in &self.delete_set {
            known(id, "delete_set")?;
            if id == BACKGROUND {
                return Err(Error::Plan("background cannot be deleted".into()));
            }
        }
        for (&from, &to) in &self.merge_map {
            known(from, "merge_map")?;
            known(to, "merge_map")?;
            if from == BACKGROUND || to == BACKGROUND {
                return Err(Error::Plan("background cannot take part in a merge".into()));
            }
        }
        for fix in &self.relabel_fixes {
            known(fix.old_id, "relabel fix")?;
            known(fix.new_id, "relabel fix")?;
        }
        for &from in self.merge_map.keys() {
            let survivor = self.resolve_merge(from)?;
            if self.delete_set.contains(&survivor) {
                return Err(Error::Plan(format!(
                    "class {survivor} is both a merge target and deleted"
                )));
            }
        }
        Ok(())
    }
}

/// Classes assigned to fewer than `min_images` images (background excluded).
pub fn plan_delete_rare(stats: &DatasetStatistics, min_images: u64) -> RefinementPlan {
    RefinementPlan {
        delete_set: stats
            .per_class_image_counts
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &n)| n < min_images)
            .map(|(k, _)| k as u8)
            .collect(),
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdChange {
    pub old_id: u8,
    pub name: String,
    /// `None` when the class was deleted (its pixels became background).
    pub new_id: Option<u8>,
    pub action: String,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub manifest: DatasetManifest,
    /// One mask per record, in record order.
    pub masks: Vec<LabelMap>,
    pub id_table: Vec<IdChange>,
}

impl Refined {
    pub fn id_table_tsv(&self) -> String {
        let mut out = String::from("old_id\tname\tnew_id\taction\n");
        for row in &self.id_table {
            let new = row.new_id.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{}\t{}\t{new}\t{}", row.old_id, row.name, row.action);
        }
        out
    }
}

/// Applies relabel fixes, then merges, then deletions, then re-densifies
/// class ids. A plan already recorded in the manifest, or an empty plan,
/// leaves everything unchanged.
pub fn apply_refinement(
    manifest: &DatasetManifest,
    plan: &RefinementPlan,
    masks: &dyn MaskSource,
) -> Result<Refined> {
    let c = manifest.ontology.num_classes();
    let mut loaded = manifest
        .records
        .iter()
        .map(|r| masks.mask(r, c))
        .collect::<Result<Vec<_>>>()?;

    let fingerprint = plan.fingerprint();
    if plan.is_empty() || manifest.applied_plans.contains(&fingerprint) {
        let id_table = manifest
            .ontology
            .classes
            .iter()
            .map(|cl| IdChange {
                old_id: cl.id,
                name: cl.name.clone(),
                new_id: Some(cl.id),
                action: "keep".into(),
            })
            .collect();
        return Ok(Refined {
            manifest: manifest.clone(),
            masks: loaded,
            id_table,
        });
    }
    plan.validate(&manifest.ontology)?;

    let mut records = manifest.records.clone();
    for fix in &plan.relabel_fixes {
        let idx = records
            .iter()
            .position(|r| r.image_path == fix.image_path)
            .ok_or_else(|| {
                Error::Plan(format!(
                    "relabel fix for unknown record {}",
                    fix.image_path.display()
                ))
            })?;
        let mut mapping = LabelMapping::identity(c);
        mapping.insert(fix.old_id, fix.new_id);
        loaded[idx] = remap_labels(&loaded[idx], &mapping)?;
        let ids = &mut records[idx].ingredient_ids;
        if ids.remove(&fix.old_id) {
            ids.insert(fix.new_id);
        }
    }

    // old id -> surviving old id (or background for deletions)
    let mut survivor = Vec::with_capacity(c);
    let mut actions = Vec::with_capacity(c);
    for id in 0..c as u8 {
        let merged = plan.resolve_merge(id)?;
        if plan.delete_set.contains(&merged) {
            survivor.push(BACKGROUND);
            actions.push("delete".to_string());
        } else if merged != id {
            survivor.push(merged);
            actions.push(format!("merge into {merged}"));
        } else {
            survivor.push(id);
            actions.push("keep".to_string());
        }
    }
    let kept: Vec<u8> = (0..c as u8)
        .filter(|&id| actions[usize::from(id)] == "keep")
        .collect();
    let mut dense = BTreeMap::new();
    for (new, &old) in kept.iter().enumerate() {
        dense.insert(old, new as u8);
    }
    let mapping: LabelMapping = (0..c as u8)
        .map(|id| (id, dense[&survivor[usize::from(id)]]))
        .collect();

    let masks_out = loaded
        .iter()
        .map(|m| remap_labels(m, &mapping))
        .collect::<Result<Vec<_>>>()?;
    for rec in &mut records {
        rec.ingredient_ids = rec
            .ingredient_ids
            .iter()
            .filter_map(|&id| mapping.get(id))
            .filter(|&id| id != BACKGROUND)
            .collect();
    }

    let old = &manifest.ontology;
    let classes = kept
        .iter()
        .map(|&id| {
            let entry = &old.classes[usize::from(id)];
            ClassEntry {
                id: dense[&id],
                name: entry.name.clone(),
                super_class: entry.super_class,
            }
        })
        .collect();
    let ontology = CategoryOntology {
        classes,
        super_classes: old.super_classes.clone(),
    };
    ontology.validate()?;

    let id_table = old
        .classes
        .iter()
        .map(|cl| {
            let action = actions[usize::from(cl.id)].clone();
            IdChange {
                old_id: cl.id,
                name: cl.name.clone(),
                new_id: (action != "delete").then(|| mapping.get(cl.id).unwrap_or(BACKGROUND)),
                action,
            }
        })
        .collect();

    let mut applied_plans = manifest.applied_plans.clone();
    applied_plans.push(fingerprint);
    let refined = DatasetManifest {
        name: manifest.name.clone(),
        ontology,
        records,
        applied_plans,
    };
    refined.validate()?;
    Ok(Refined {
        manifest: refined,
        masks: masks_out,
        id_table,
    })
}
