use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use foodseg_core::manifest::{data_root_for, resolve, SplitTag};
use foodseg_core::mask::load_mask;
use foodseg_nn::image::resize_chw;
use foodseg_nn::Archive;
use foodseg_relem::pretrain::{PairedDataset, Pretrainer};
use foodseg_relem::recipe::{load_pairs, load_recipe_records, RecipeCorpus};
use foodseg_relem::ReLeMModel;
use foodseg_segmenter::{train as train_segmenter, InitSource, SegDataset, Segmenter};
use serde::Serialize;

use super::{load_image, load_manifest, pretty_json};
use crate::args::Common;
use crate::config::ExperimentConfig;
use crate::failure::{CmdResult, Failure, OutputContext};
use crate::provenance::RunDir;

pub const ENCODER_ARCHIVE: &str = "encoder.archive";
pub const CHECKPOINT: &str = "checkpoint.archive";

#[derive(Debug, Serialize)]
struct PretrainSummary {
    steps: usize,
    stage1_steps: usize,
    vocabulary: usize,
    semantic_classes: usize,
    images: usize,
    recipes: usize,
    pairs: usize,
    first_loss: f64,
    last_loss: f64,
    /// Vision and text checksums at start, stage switch and end.
    checksums: BTreeMap<String, String>,
}

pub fn pretrain(common: &Common) -> CmdResult {
    let cfg = ExperimentConfig::resolve(common)?;
    cfg.relem.validate()?;
    let recipes_path = cfg
        .dataset
        .recipes
        .clone()
        .ok_or_else(|| Failure::usage("pretraining needs dataset.recipes"))?;
    let pairs_path = cfg
        .dataset
        .pairs
        .clone()
        .ok_or_else(|| Failure::usage("pretraining needs dataset.pairs"))?;
    let mut run = RunDir::create(&cfg.run.out, "pretrain")?;
    run.input(&recipes_path)?;
    run.input(&pairs_path)?;
    let records = load_recipe_records(&recipes_path)?;
    let pair_records = load_pairs(&pairs_path)?;
    let corpus = RecipeCorpus::build(&records, cfg.relem.num_semantic)?;
    let root = data_root_for(&pairs_path);

    let size = cfg.relem.image_size;
    let mut image_index: BTreeMap<PathBuf, usize> = BTreeMap::new();
    let mut images = Vec::new();
    let mut pairs = Vec::with_capacity(pair_records.len());
    for p in &pair_records {
        let recipe = *corpus
            .index
            .get(&p.recipe_id)
            .ok_or_else(|| anyhow!("pair references unknown recipe {:?}", p.recipe_id))?;
        let path = resolve(&root, &p.image);
        let img = match image_index.get(&path) {
            Some(&i) => i,
            None => {
                let t = load_image(&mut run, &path)?;
                images.push(resize_chw(&t, size, size));
                image_index.insert(path, images.len() - 1);
                images.len() - 1
            }
        };
        pairs.push((img, recipe));
    }
    let data = PairedDataset {
        images,
        recipes: corpus.recipes.clone(),
        pairs,
    };
    let (n_images, n_recipes, n_pairs) = (data.images.len(), data.recipes.len(), data.pairs.len());
    let model = ReLeMModel::new(&cfg.relem, corpus.tokens.len(), corpus.semantic.k);
    let mut checksums = BTreeMap::new();
    checksums.insert("start.vision".into(), model.vision_checksum());
    checksums.insert("start.text".into(), model.text_checksum());
    let mut trainer = Pretrainer::new(model, cfg.relem.clone(), data)?;
    while !trainer.is_done() {
        if trainer.steps_done() == cfg.relem.stage1_steps {
            checksums.insert("switch.vision".into(), trainer.model.vision_checksum());
            checksums.insert("switch.text".into(), trainer.model.text_checksum());
        }
        let s = trainer.step()?;
        if s.step % 100 == 0 {
            log::info!("pretrain step {} stage {} loss {:.4}", s.step, s.stage, s.loss);
        }
    }
    trainer.run()?;
    checksums.insert("end.vision".into(), trainer.model.vision_checksum());
    checksums.insert("end.text".into(), trainer.model.text_checksum());

    let mut log_tsv = String::from("step\tstage\tloss\tcosine_loss\tsemantic_loss\tmean_cosine\tnegatives\tmissing_labels\n");
    for s in &trainer.log {
        let _ = writeln!(
            log_tsv,
            "{}\t{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{}\t{}",
            s.step, s.stage, s.loss, s.cosine_loss, s.semantic_loss, s.mean_cosine, s.negatives, s.missing_labels
        );
    }
    let summary = PretrainSummary {
        steps: trainer.log.len(),
        stage1_steps: cfg.relem.stage1_steps,
        vocabulary: corpus.tokens.len(),
        semantic_classes: corpus.semantic.k,
        images: n_images,
        recipes: n_recipes,
        pairs: n_pairs,
        first_loss: trainer.log.first().map_or(f64::NAN, |s| s.loss),
        last_loss: trainer.log.last().map_or(f64::NAN, |s| s.loss),
        checksums,
    };
    let archive = trainer.into_model().export_encoder();
    let path = run.output(ENCODER_ARCHIVE)?;
    archive.save(&path).output(ENCODER_ARCHIVE)?;
    run.write("pretrain_log.tsv", log_tsv)?;
    run.write("pretrain_summary.json", pretty_json(&summary))?;
    run.write("config.json", pretty_json(&cfg))?;
    run.finish(&cfg.hash(), cfg.run.seed)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    iterations: usize,
    train_images: usize,
    num_parameters: usize,
    init: String,
    final_loss: f64,
    empty_batches: usize,
    checksums: BTreeMap<String, String>,
}

pub fn init_label(source: &InitSource) -> &'static str {
    match source {
        InitSource::Random => "random",
        InitSource::Archive(_) => "relem",
    }
}

pub fn train(common: &Common) -> CmdResult {
    let cfg = ExperimentConfig::resolve(common)?;
    cfg.segmenter.validate()?;
    let mut run = RunDir::create(&cfg.run.out, "train")?;
    let (manifest, root) = load_manifest(&mut run, cfg.manifest_path()?)?;
    let c = cfg.segmenter.num_classes;
    if manifest.ontology.num_classes() != c {
        return Err(anyhow!(
            "manifest has {} classes but segmenter.num_classes is {c}",
            manifest.ontology.num_classes()
        )
        .into());
    }
    let mut data = SegDataset {
        images: Vec::new(),
        masks: Vec::new(),
    };
    for rec in manifest.split(SplitTag::Train) {
        data.images.push(load_image(&mut run, &resolve(&root, &rec.image_path))?);
        let mp = resolve(&root, &rec.mask_path);
        run.input(&mp)?;
        data.masks.push(load_mask(&mp, c).with_context(|| format!("loading mask {}", mp.display()))?);
    }
    let n_train = data.images.len();

    let mut model = Segmenter::new(&cfg.segmenter)?;
    if let InitSource::Archive(path) = &cfg.segmenter.init_source {
        run.input(path)?;
        let archive = Archive::load(path).with_context(|| format!("loading encoder archive {}", path.display()))?;
        model.init_from_relem(&archive)?;
    }
    log::info!("training {} parameters on {n_train} images", model.num_parameters());
    let params = model.num_parameters();
    let (_, state, checkpoint) = train_segmenter(model, data)?;

    let mut log_tsv = String::from("iteration\tlr\tloss\n");
    for (i, lr) in state.lr_history.iter().enumerate() {
        let loss = state.loss_history.get(i).map(|l| format!("{l:.9}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(log_tsv, "{i}\t{lr:.15e}\t{loss}");
    }
    let summary = TrainSummary {
        iterations: state.iteration,
        train_images: n_train,
        num_parameters: params,
        init: init_label(&cfg.segmenter.init_source).into(),
        final_loss: state.loss_history.last().copied().unwrap_or(f64::NAN),
        empty_batches: state.empty_batches,
        checksums: state.checksums.clone(),
    };
    let path = run.output(CHECKPOINT)?;
    checkpoint.save(&path).output(CHECKPOINT)?;
    run.write("train_log.tsv", log_tsv)?;
    run.write("train_summary.json", pretty_json(&summary))?;
    run.write("config.json", pretty_json(&cfg))?;
    run.finish(&cfg.hash(), cfg.run.seed)
}
