use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use foodseg_core::manifest::{resolve, ImageRecord, SplitTag};
use foodseg_core::mask::{load_mask, save_mask, LabelMap, IGNORE};
use foodseg_core::metrics::{ConfusionMatrix, MetricReport};
use foodseg_nn::image::{resize_chw, stack};
use foodseg_nn::Archive;
use foodseg_segmenter::{argmax_labels, Segmenter};
use serde::{Deserialize, Serialize};

use super::learn::init_label;
use super::{load_image, load_manifest, pretty_json};
use crate::args::Common;
use crate::config::ExperimentConfig;
use crate::failure::{CmdResult, OutputContext};
use crate::provenance::RunDir;

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub init: String,
    /// `None` when scoring external predictions.
    pub num_parameters: Option<usize>,
    pub images: usize,
    pub class_names: Vec<String>,
    pub report: MetricReport,
}

fn mask_file_name(rec: &ImageRecord) -> CmdResult<String> {
    Ok(rec
        .mask_path
        .file_name()
        .ok_or_else(|| anyhow!("mask path {} has no file name", rec.mask_path.display()))?
        .to_string_lossy()
        .into_owned())
}

/// Predicts at the training crop size and resizes the logits back to the
/// ground-truth raster.
fn predict_at(model: &Segmenter, image: &foodseg_nn::Tensor, height: usize, width: usize) -> CmdResult<LabelMap> {
    let crop = model.config.crop_size;
    let x = resize_chw(image, crop, crop);
    let logits = model.logits(&stack(&[&x]))?;
    let c = logits.dim(1);
    let per_image = logits.reshape(&[c, crop, crop]);
    let full = resize_chw(&per_image, height, width).reshape(&[1, c, height, width]);
    Ok(argmax_labels(&full)?.remove(0))
}

pub fn eval(common: &Common, checkpoint: Option<&Path>, pred_dir: Option<&Path>) -> CmdResult {
    let cfg = ExperimentConfig::resolve(common)?;
    let mut run = RunDir::create(&cfg.run.out, "eval")?;
    let (manifest, root) = load_manifest(&mut run, cfg.manifest_path()?)?;
    let c = manifest.ontology.num_classes();
    let mut records: Vec<&ImageRecord> = manifest.split(SplitTag::Test).collect();
    if records.is_empty() {
        log::warn!("manifest has no test split; evaluating every record");
        records = manifest.records.iter().collect();
    }
    let mut names = BTreeSet::new();
    for rec in &records {
        if !names.insert(mask_file_name(rec)?) {
            return Err(anyhow!("two evaluated records share the mask file name of {}", rec.mask_path.display()).into());
        }
    }

    let model = match (checkpoint, pred_dir) {
        (_, Some(_)) => None,
        (Some(ck), None) => {
            run.input(ck)?;
            let archive = Archive::load(ck).with_context(|| format!("loading checkpoint {}", ck.display()))?;
            if cfg.segmenter.num_classes != c {
                return Err(anyhow!(
                    "manifest has {c} classes but segmenter.num_classes is {}",
                    cfg.segmenter.num_classes
                )
                .into());
            }
            Some(Segmenter::from_checkpoint(&cfg.segmenter, &archive)?)
        }
        (None, None) => return Err(crate::failure::Failure::usage("eval needs --checkpoint or --pred-dir")),
    };

    let mut cm = ConfusionMatrix::new(c);
    for rec in &records {
        let gt_path = resolve(&root, &rec.mask_path);
        run.input(&gt_path)?;
        let gt = load_mask(&gt_path, c).with_context(|| format!("loading mask {}", gt_path.display()))?;
        let name = mask_file_name(rec)?;
        let pred = match (&model, pred_dir) {
            (Some(m), _) => {
                let image = load_image(&mut run, &resolve(&root, &rec.image_path))?;
                let pred = predict_at(m, &image, gt.height(), gt.width())?;
                let rel = PathBuf::from("pred").join(&name);
                let path = run.output(&rel)?;
                save_mask(&path, &pred).output(&rel.display().to_string())?;
                pred
            }
            (None, Some(dir)) => {
                let p = dir.join(&name);
                run.input(&p)?;
                load_mask(&p, c).with_context(|| format!("loading prediction {}", p.display()))?
            }
            (None, None) => unreachable!("checked above"),
        };
        cm.accumulate(&pred, &gt, IGNORE)
            .with_context(|| format!("scoring {}", rec.image_path.display()))?;
    }
    let report = cm.summarize_with(cfg.eval.include_background);
    let class_names = manifest.ontology.names();
    let summary = EvalSummary {
        method: cfg
            .run
            .method
            .clone()
            .unwrap_or_else(|| if model.is_some() { cfg.segmenter.decoder.to_string() } else { "external".into() }),
        init: if model.is_some() { init_label(&cfg.segmenter.init_source).into() } else { "-".into() },
        num_parameters: model.as_ref().map(Segmenter::num_parameters),
        images: records.len(),
        class_names: class_names.clone(),
        report,
    };
    log::info!(
        "mIoU {} over {} images",
        foodseg_core::metrics::fmt_opt(summary.report.miou),
        records.len()
    );
    run.write("metrics.tsv", summary.report.to_tsv(&class_names))?;
    run.write("metrics.json", pretty_json(&summary))?;
    run.finish(&cfg.hash(), cfg.run.seed)
}
