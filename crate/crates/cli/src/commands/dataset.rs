use std::path::{Component, Path, PathBuf};

use foodseg_core::datasetops::{
    apply_refinement, class_distribution_report, compute_statistics, distribution_svg, distribution_tsv,
    plan_delete_rare, split_random, split_stratified_by_dish, DiskMasks, RefinementPlan,
};
use foodseg_core::manifest::{DatasetManifest, SplitTag};
use foodseg_core::mask::save_mask;
use serde::Serialize;

use super::{load_manifest, pretty_json, rebase};
use crate::args::{Common, SplitMode};
use crate::config::ExperimentConfig;
use crate::failure::{CmdResult, Failure, OutputContext};
use crate::provenance::RunDir;

fn record_masks(run: &mut RunDir, manifest: &DatasetManifest, masks: &DiskMasks) -> CmdResult {
    for rec in &manifest.records {
        let p = masks.path_of(rec);
        // unreadable masks are reported by the statistics themselves
        if p.is_file() {
            run.input(&p)?;
        }
    }
    Ok(())
}

pub fn stats(common: &Common, plot: bool) -> CmdResult {
    let cfg = ExperimentConfig::resolve(common)?;
    let mut run = RunDir::create(&cfg.run.out, "stats")?;
    let (manifest, root) = load_manifest(&mut run, cfg.manifest_path()?)?;
    let masks = DiskMasks::new(&root);
    record_masks(&mut run, &manifest, &masks)?;
    let stats = compute_statistics(&manifest, &masks);
    if stats.partial {
        log::warn!("{} masks could not be read; statistics are partial", stats.diagnostics.len());
    }
    run.write("stats.tsv", stats.to_report())?;
    run.write("stats.json", pretty_json(&stats))?;
    let rows = class_distribution_report(&stats);
    run.write("distribution.tsv", distribution_tsv(&rows))?;
    if plot {
        run.write("distribution.svg", distribution_svg(&rows))?;
    }
    run.finish(&cfg.hash(), cfg.run.seed)
}

/// Output location of a rewritten mask, always under `masks/`.
fn refined_mask_path(index: usize, original: &Path) -> PathBuf {
    if original.starts_with("masks") && original.components().all(|c| matches!(c, Component::Normal(_))) {
        original.to_path_buf()
    } else if original.is_relative() && original.components().all(|c| matches!(c, Component::Normal(_))) {
        Path::new("masks").join(original)
    } else {
        let name = original.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        PathBuf::from(format!("masks/{index:06}_{name}"))
    }
}

pub fn refine(common: &Common, plan_path: Option<&Path>, min_images: Option<u64>) -> CmdResult {
    let cfg = ExperimentConfig::resolve(common)?;
    let mut run = RunDir::create(&cfg.run.out, "refine")?;
    let out = run.root().to_path_buf();
    let (manifest, root) = load_manifest(&mut run, cfg.manifest_path()?)?;
    let masks = DiskMasks::new(&root);
    record_masks(&mut run, &manifest, &masks)?;
    let plan = match (plan_path, min_images) {
        (Some(p), _) => {
            run.input(p)?;
            RefinementPlan::load(p)?
        }
        (None, Some(n)) => plan_delete_rare(&compute_statistics(&manifest, &masks), n),
        (None, None) => RefinementPlan::default(),
    };
    let refined = apply_refinement(&manifest, &plan, &masks)?;
    let unchanged = refined.manifest == manifest;

    let mut written = refined.manifest.clone();
    for (i, (rec, mask)) in written.records.iter_mut().zip(&refined.masks).enumerate() {
        rec.image_path = rebase(&root, &rec.image_path, &out)?;
        if unchanged {
            rec.mask_path = rebase(&root, &rec.mask_path, &out)?;
        } else {
            let rel = refined_mask_path(i, &rec.mask_path);
            let path = run.output(&rel)?;
            save_mask(&path, mask).output(&rel.display().to_string())?;
            rec.mask_path = rel;
        }
    }
    log::info!(
        "refined {} classes into {} ({} deleted)",
        manifest.ontology.num_classes(),
        written.ontology.num_classes(),
        plan.delete_set.len()
    );
    run.write("manifest.json", written.to_json())?;
    run.write("plan.json", plan.to_json())?;
    run.write("id_table.tsv", refined.id_table_tsv())?;
    run.finish(&cfg.hash(), cfg.run.seed)
}

pub fn split(common: &Common, mode: Option<SplitMode>, ratio: Option<f64>) -> CmdResult {
    let mut cfg = ExperimentConfig::resolve(common)?;
    if let Some(m) = mode {
        cfg.dataset.split_mode = m;
    }
    if let Some(r) = ratio {
        cfg.dataset.split_ratio = r;
    }
    let ratio = cfg.dataset.split_ratio;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Failure::usage(format!("split ratio {ratio} must lie in [0, 1]")));
    }
    let mut run = RunDir::create(&cfg.run.out, "split")?;
    let out = run.root().to_path_buf();
    let (manifest, root) = load_manifest(&mut run, cfg.manifest_path()?)?;
    let mut split = match cfg.dataset.split_mode {
        SplitMode::Random => split_random(&manifest, ratio, cfg.run.seed),
        SplitMode::Stratified => split_stratified_by_dish(&manifest, ratio, cfg.run.seed),
    };
    let mut table = String::from("image_path\tsplit\n");
    for rec in &split.records {
        let tag = if rec.split_tag == SplitTag::Train { "train" } else { "test" };
        table.push_str(&format!("{}\t{tag}\n", rec.image_path.display()));
    }
    for rec in &mut split.records {
        rec.image_path = rebase(&root, &rec.image_path, &out)?;
        rec.mask_path = rebase(&root, &rec.mask_path, &out)?;
    }
    log::info!(
        "split {} records: {} train, {} test",
        split.records.len(),
        split.split_count(SplitTag::Train),
        split.split_count(SplitTag::Test)
    );
    run.write("manifest.json", split.to_json())?;
    run.write("split.tsv", table)?;
    run.finish(&cfg.hash(), cfg.run.seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthOptions {
    pub seed: u64,
    pub pretrain_images: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub image_size: usize,
}

/// Writes a synthetic segmentation dataset (`manifest.json`, `images/`,
/// `masks/`) and a paired recipe corpus (`recipes.jsonl`, `pairs.jsonl`).
pub fn synth(out: &Path, opts: &SynthOptions) -> CmdResult {
    if opts.image_size < 8 || opts.pretrain_images == 0 {
        return Err(Failure::usage("image size must be at least 8 and the corpus non-empty"));
    }
    let mut run = RunDir::create(out, "synth")?;
    let corpus = foodseg_synth::pretraining_corpus(opts.pretrain_images, opts.image_size, opts.seed);
    foodseg_synth::write_pretraining_corpus(out, &corpus)
        .map_err(|e| Failure::Internal(anyhow::anyhow!("writing pretraining corpus: {e}")))?;
    for i in 0..opts.pretrain_images {
        run.register(format!("images/pretrain{i:04}.png"));
    }
    run.register("recipes.jsonl");
    run.register("pairs.jsonl");

    let (train, test) = foodseg_synth::segmentation_sets(opts.train_images, opts.test_images, opts.image_size, opts.seed);
    let path = foodseg_synth::write_segmentation_dataset(
        out,
        "synthetic",
        &[(SplitTag::Train, &train), (SplitTag::Test, &test)],
    )
    .output("segmentation dataset")?;
    let manifest = DatasetManifest::load(&path).output("manifest.json")?;
    for rec in &manifest.records {
        run.register(&rec.image_path);
        run.register(&rec.mask_path);
    }
    run.register("manifest.json");
    let hash = crate::provenance::blob_hash(serde_json::to_string(opts).expect("json").as_bytes());
    run.finish(&hash, opts.seed)
}
