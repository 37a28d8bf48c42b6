use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors. Names are dotted paths (`encoder.stage0.conv.weight`)
/// and are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} registered twice"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Marks every parameter under `prefix` trainable or frozen.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (i, name) in self.names.iter().enumerate() {
            if has_prefix(name, prefix) {
                self.trainable[i] = trainable;
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids under `prefix`, sorted by name.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .ids()
            .filter(|&id| has_prefix(self.name(id), prefix))
            .collect();
        ids.sort_by(|a, b| self.name(*a).cmp(self.name(*b)));
        ids
    }

    pub fn num_scalars(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix)
            .into_iter()
            .map(|id| self.get(id).numel())
            .sum()
    }

    /// SHA-256 over names, shapes and value bytes of the parameters under
    /// `prefix`, in name order.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for id in self.ids_with_prefix(prefix) {
            let t = self.get(id);
            h.update(self.name(id).as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Parameters under `prefix`, keyed by name with the prefix removed.
    pub fn export(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.ids_with_prefix(prefix)
            .into_iter()
            .map(|id| (strip(self.name(id), prefix).to_string(), self.get(id).clone()))
            .collect()
    }

    /// Overwrites every parameter under `prefix` from `tensors` (keys without
    /// the prefix). The key sets and all shapes must match exactly.
    pub fn import(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let ids = self.ids_with_prefix(prefix);
        if ids.len() != tensors.len() {
            return Err(NnError::ArchitectureMismatch(format!(
                "{} tensors under {prefix:?} but the archive holds {}",
                ids.len(),
                tensors.len()
            )));
        }
        for &id in &ids {
            let key = strip(self.name(id), prefix);
            let src = tensors.get(key).ok_or_else(|| {
                NnError::ArchitectureMismatch(format!("archive lacks tensor {key}"))
            })?;
            if src.shape() != self.get(id).shape() {
                return Err(NnError::ArchitectureMismatch(format!(
                    "tensor {key}: archive shape {:?} vs model shape {:?}",
                    src.shape(),
                    self.get(id).shape()
                )));
            }
        }
        for id in ids {
            let key = strip(self.name(id), prefix).to_string();
            self.values[id.0] = tensors[&key].clone();
        }
        Ok(())
    }
}

fn has_prefix(name: &str, prefix: &str) -> bool {
    prefix.is_empty()
        || name == prefix
        || (name.starts_with(prefix) && name.as_bytes().get(prefix.len()) == Some(&b'.'))
}

fn strip<'a>(name: &'a str, prefix: &str) -> &'a str {
    if prefix.is_empty() {
        name
    } else {
        name[prefix.len()..].trim_start_matches('.')
    }
}
