//! Experiment configuration: a TOML file with `[dataset]`, `[relem]`,
//! `[segmenter]`, `[eval]` and `[run]` sections, then `section.key=value`
//! overrides, then named command-line flags.

use std::path::{Path, PathBuf};

use foodseg_relem::model::ReLeMConfig;
use foodseg_segmenter::config::SegmenterConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::args::{Common, SplitMode};
use crate::failure::{CmdResult, Failure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub split_mode: SplitMode,
    pub split_ratio: f64,
    /// Recipe records (JSON lines) for pretraining.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recipes: Option<PathBuf>,
    /// Image/recipe pairs (JSON lines) for pretraining.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            manifest: None,
            split_mode: SplitMode::Random,
            split_ratio: 0.7,
            recipes: None,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub include_background: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            include_background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; copied into `relem.seed` and `segmenter.seed`.
    pub seed: u64,
    pub out: PathBuf,
    /// Label used in comparison tables; defaults to the decoder name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            method: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub relem: ReLeMConfig,
    pub segmenter: SegmenterConfig,
    pub eval: EvalSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Reads the config file (if any), applies overrides and flags, and
    /// propagates the run seed.
    pub fn resolve(common: &Common) -> CmdResult<Self> {
        let mut table = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<Table>(&text)
                    .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for item in &common.overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: ExperimentConfig = Value::Table(table.clone())
            .try_into()
            .map_err(|e| Failure::usage(format!("invalid config: {e}")))?;
        check_known_keys(&table, &cfg)?;

        if let Some(seed) = common.seed {
            cfg.run.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.run.out = out.clone();
        }
        if let Some(m) = &common.manifest {
            cfg.dataset.manifest = Some(m.clone());
        }
        cfg.relem.seed = cfg.run.seed;
        cfg.segmenter.seed = cfg.run.seed;
        Ok(cfg)
    }

    pub fn manifest_path(&self) -> CmdResult<&Path> {
        self.dataset
            .manifest
            .as_deref()
            .ok_or_else(|| Failure::usage("no manifest given (use --manifest or dataset.manifest)"))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&serde_json::to_value(self).expect("config serializes")).expect("json")
    }

    /// SHA-256 of the canonical (sorted-key) JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Sets `a.b.c=value` in `table`. The value is parsed as a TOML literal
/// when possible and taken as a plain string otherwise.
pub fn apply_override(table: &mut Table, item: &str) -> CmdResult {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override {item:?} is not of the form section.key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::usage(format!("override key {key:?} must be section.key")));
    }
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::usage(format!("override {key:?} descends into a non-table value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Rejects keys the typed config silently dropped (typos in nested
/// library sections).
fn check_known_keys(given: &Table, cfg: &ExperimentConfig) -> CmdResult {
    let known = Value::try_from(cfg).map_err(|e| Failure::Internal(e.into()))?;
    fn walk(given: &Table, known: &Value, prefix: &str) -> Result<(), String> {
        for (k, v) in given {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            let Some(kv) = known.as_table().and_then(|t| t.get(k)) else {
                return Err(path);
            };
            if let (Value::Table(sub), Value::Table(_)) = (v, kv) {
                walk(sub, kv, &path)?;
            }
        }
        Ok(())
    }
    walk(given, &known, "").map_err(|k| Failure::usage(format!("unknown config key {k}")))
}
