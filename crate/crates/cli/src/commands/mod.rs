mod dataset;
mod eval;
mod learn;
mod report;

pub use dataset::{refine, split, stats, synth, SynthOptions};
pub use eval::{eval, EvalSummary};
pub use learn::{pretrain, train};
pub use report::{comparison_table, report};

use std::path::{Path, PathBuf};

use anyhow::Context;
use foodseg_core::datasetops::import_foodseg103;
use foodseg_core::manifest::{data_root_for, resolve, DatasetManifest, DATA_ROOT_ENV};
use foodseg_core::mask::RgbImage;
use foodseg_nn::image::rgb_to_tensor;
use foodseg_nn::Tensor;

use crate::failure::CmdResult;
use crate::provenance::{relative_to, RunDir};

/// Loads and validates a manifest, recording it as an input. Returns the
/// manifest and the directory its record paths resolve against. A
/// directory is read as a FoodSeg103 release root.
fn load_manifest(run: &mut RunDir, path: &Path) -> CmdResult<(DatasetManifest, PathBuf)> {
    if path.is_dir() {
        run.input(&path.join("category_id.txt"))?;
        let manifest = import_foodseg103(path).with_context(|| format!("importing {}", path.display()))?;
        return Ok((manifest, path.to_path_buf()));
    }
    run.input(path)?;
    let manifest = DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    Ok((manifest, data_root_for(path)))
}

/// Re-expresses a record path for a manifest written to `out`: relative to
/// `out`, or absolute when the data root comes from the environment.
fn rebase(root: &Path, path: &Path, out: &Path) -> CmdResult<PathBuf> {
    let full = resolve(root, path);
    let from_env = std::env::var_os(DATA_ROOT_ENV).is_some_and(|v| !v.is_empty());
    let p = if from_env {
        std::path::absolute(&full)
    } else {
        relative_to(&full, out)
    };
    Ok(p.with_context(|| format!("resolving {}", full.display()))?)
}

fn load_image(run: &mut RunDir, path: &Path) -> CmdResult<Tensor> {
    run.input(path)?;
    let img = RgbImage::load(path).with_context(|| format!("loading image {}", path.display()))?;
    Ok(rgb_to_tensor(img.height, img.width, &img.data))
}

fn pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
