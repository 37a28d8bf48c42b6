use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use foodseg_core::mask::{read_mask, save_mask, LabelMap};
use foodseg_core::DatasetManifest;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fixture12/manifest.json")
}

fn foodseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foodseg"))
        .args(args)
        .env_remove("FOODSEG_DATA_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn foodseg")
}

fn ok(args: &[&str]) {
    let out = foodseg(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    foodseg(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let fx = fixture();
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["split", "--bogus"]), 1);
    // no manifest configured
    assert_eq!(code(&["stats", "--out", s(&out)]), 1);
    assert_eq!(code(&["stats", "--manifest", "/nonexistent/manifest.json", "--out", s(&out)]), 2);
    assert_eq!(code(&["stats", "--manifest", s(&fx), "--out", s(&out), "nosuch.key=1"]), 1);
    assert_eq!(code(&["stats", "--manifest", s(&fx), "--out", s(&out), "not-an-override"]), 1);
    assert_eq!(code(&["split", "--manifest", s(&fx), "--out", s(&out), "--ratio", "1.5"]), 1);
    assert_eq!(code(&["stats", "--config", "/nonexistent.toml", "--out", s(&out)]), 1);
    // garbage manifest contents are a data error
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&["stats", "--manifest", s(&bad), "--out", s(&out)]), 2);
    assert_eq!(code(&["stats", "--manifest", s(&fx), "--out", s(&out)]), 0);
}

#[test]
fn stats_match_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats");
    ok(&["stats", "--manifest", s(&fixture()), "--out", s(&out), "--plot"]);
    let st = json(&out.join("stats.json"));
    assert_eq!(st["num_images"], 12);
    assert_eq!(st["num_masks"], 33);
    assert_eq!(st["num_dishes"], 3);
    assert_eq!(st["num_classes"], 8);
    let counts: Vec<u64> = serde_json::from_value(st["per_class_image_counts"].clone()).unwrap();
    assert_eq!(counts, [12, 6, 5, 5, 5, 5, 5, 2]);
    assert_eq!(st["mean_image_width"], 10.0);
    assert_eq!(st["mean_image_height"], 8.0);
    assert_eq!(st["partial"], false);
    let dist = fs::read_to_string(out.join("distribution.tsv")).unwrap();
    let last = dist.lines().last().unwrap();
    assert_eq!(last, "7\t7\tsaffron\t2\t0.060606\t1.000000");
    assert!(out.join("distribution.svg").exists());
}

#[test]
fn delete_rare_removes_only_the_planted_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("refined");
    ok(&["refine", "--manifest", s(&fixture()), "--min-images", "5", "--out", s(&out)]);
    let plan = json(&out.join("plan.json"));
    assert_eq!(plan["delete_set"], serde_json::json!([7]));
    let table = fs::read_to_string(out.join("id_table.tsv")).unwrap();
    assert!(table.lines().any(|l| l == "7\tsaffron\t-\tdelete"));
    assert_eq!(table.lines().filter(|l| l.ends_with("\tkeep")).count(), 7);

    let m = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.ontology.num_classes(), 7);
    assert_eq!(m.records.len(), 12);
    assert_eq!(m.records[6].ingredient_ids.iter().copied().collect::<Vec<_>>(), [1, 5]);
    assert_eq!(m.records[10].ingredient_ids.iter().copied().collect::<Vec<_>>(), [3, 6]);
    for rec in &m.records {
        let mask = read_mask(out.join(&rec.mask_path)).unwrap();
        assert!(mask.data().iter().all(|&v| v < 7 || v == foodseg_core::IGNORE));
    }
    // re-running on the refined output with the same threshold changes nothing
    let again = dir.path().join("again");
    ok(&["refine", "--manifest", s(&out.join("manifest.json")), "--min-images", "5", "--out", s(&again)]);
    let m2 = DatasetManifest::load(again.join("manifest.json")).unwrap();
    assert_eq!(m2.ontology, m.ontology);
}

#[test]
fn empty_plan_keeps_records_modulo_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("refined");
    ok(&["refine", "--manifest", s(&fixture()), "--out", s(&out)]);
    assert!(!out.join("masks").exists());
    let original = DatasetManifest::load(fixture()).unwrap();
    let refined = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(original.ontology, refined.ontology);
    assert_eq!(original.records.len(), refined.records.len());
    let root = fixture().parent().unwrap().to_path_buf();
    for (a, b) in original.records.iter().zip(&refined.records) {
        assert_eq!(a.dish_id, b.dish_id);
        assert_eq!(a.ingredient_ids, b.ingredient_ids);
        assert_eq!(a.split_tag, b.split_tag);
        let ga = fs::read(root.join(&a.mask_path)).unwrap();
        let gb = fs::read(out.join(&b.mask_path)).unwrap();
        assert_eq!(ga, gb);
        assert!(out.join(&b.image_path).exists());
    }
    // the refined manifest is itself a valid input
    ok(&["stats", "--manifest", s(&out.join("manifest.json")), "--out", s(&dir.path().join("st"))]);
    let st = json(&dir.path().join("st/stats.json"));
    assert_eq!(st["num_masks"], 33);
}

fn split_outputs(dir: &Path, name: &str, extra: &[&str]) -> (String, String) {
    let out = dir.join(name);
    let mut args = vec!["split", "--manifest", s(&fixture()).to_owned().leak(), "--out", s(&out).to_owned().leak()];
    args.extend_from_slice(extra);
    ok(&args);
    (
        fs::read_to_string(out.join("split.tsv")).unwrap(),
        fs::read_to_string(out.join("manifest.json")).unwrap(),
    )
}

#[test]
fn split_is_seeded_and_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let a = split_outputs(dir.path(), "a", &["--ratio", "0.7", "--seed", "11"]);
    let b = split_outputs(dir.path(), "b", &["--ratio", "0.7", "--seed", "11"]);
    assert_eq!(a, b);
    let tags: Vec<&str> = a.0.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(tags.len(), 12);
    assert_eq!(tags.iter().filter(|&&t| t == "train").count(), 8);
    assert_eq!(tags.iter().filter(|&&t| t == "test").count(), 4);

    let seeds: Vec<String> = (0..6)
        .map(|seed| split_outputs(dir.path(), &format!("s{seed}"), &["--seed", &seed.to_string()]).0)
        .collect();
    assert!(seeds.iter().any(|t| *t != seeds[0]), "seed must matter");

    let strat = split_outputs(dir.path(), "strat", &["--mode", "stratified", "--ratio", "0.7"]);
    let tags: Vec<&str> = strat.0.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(tags.len(), 12);
    assert!(tags.iter().all(|&t| t == "train" || t == "test"));
}

#[test]
fn overrides_and_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let base = dir.path().join("base");
    let seeded = dir.path().join("seeded");
    let flipped = dir.path().join("flipped");
    ok(&["stats", "--manifest", s(&fx), "--out", s(&base)]);
    ok(&["stats", "--manifest", s(&fx), "--out", s(&seeded), "run.seed=5"]);
    ok(&["stats", "--manifest", s(&fx), "--out", s(&flipped), "eval.include_background=false"]);
    let (mb, ms, mf) = (
        json(&base.join("run-manifest.json")),
        json(&seeded.join("run-manifest.json")),
        json(&flipped.join("run-manifest.json")),
    );
    assert_eq!(mb["seed"], 0);
    assert_eq!(ms["seed"], 5);
    assert_ne!(mb["config_sha256"], mf["config_sha256"]);
    assert_eq!(mb["command"], "stats");
    // --seed wins over the override
    let both = dir.path().join("both");
    ok(&["stats", "--manifest", s(&fx), "--out", s(&both), "--seed", "9", "run.seed=5"]);
    assert_eq!(json(&both.join("run-manifest.json"))["seed"], 9);

    // output hashes are git-style blob hashes of the written files
    for (rel, hash) in mb["outputs"].as_object().unwrap() {
        let bytes = fs::read(base.join(rel)).unwrap();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()));
        h.update(&bytes);
        assert_eq!(hash.as_str().unwrap(), hex::encode(h.finalize()), "{rel}");
    }
    assert!(mb["inputs"].as_object().unwrap().len() > 1);
}

#[test]
fn eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let gt_dir = fx.parent().unwrap().join("masks");
    let perfect = dir.path().join("perfect");
    ok(&["eval", "--manifest", s(&fx), "--pred-dir", s(&gt_dir), "--out", s(&perfect)]);
    let m = json(&perfect.join("metrics.json"));
    assert_eq!(m["report"]["miou"], 1.0);
    assert_eq!(m["report"]["macc"], 1.0);
    assert_eq!(m["report"]["aacc"], 1.0);

    // all-background predictions
    let zeros = dir.path().join("zeros");
    fs::create_dir_all(&zeros).unwrap();
    for entry in fs::read_dir(&gt_dir).unwrap() {
        let p = entry.unwrap().path();
        let gt = read_mask(&p).unwrap();
        let z = LabelMap::filled(gt.height(), gt.width(), 0).unwrap();
        save_mask(zeros.join(p.file_name().unwrap()), &z).unwrap();
    }
    let bg = dir.path().join("bg");
    ok(&["eval", "--manifest", s(&fx), "--pred-dir", s(&zeros), "--out", s(&bg)]);
    let mbg = json(&bg.join("metrics.json"));
    let miou = mbg["report"]["miou"].as_f64().unwrap();
    assert!(miou < 0.2, "{miou}");

    // a prediction with an out-of-range class is a data error
    let badp = dir.path().join("badp");
    fs::create_dir_all(&badp).unwrap();
    for entry in fs::read_dir(&gt_dir).unwrap() {
        let p = entry.unwrap().path();
        let gt = read_mask(&p).unwrap();
        save_mask(badp.join(p.file_name().unwrap()), &LabelMap::filled(gt.height(), gt.width(), 50).unwrap()).unwrap();
    }
    assert_eq!(code(&["eval", "--manifest", s(&fx), "--pred-dir", s(&badp), "--out", s(&dir.path().join("x"))]), 2);

    let rep = dir.path().join("report");
    ok(&["report", "--out", s(&rep), "--plot", s(&perfect), s(&bg)]);
    let table = fs::read_to_string(rep.join("comparison.tsv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(header, ["run", "method", "init", "mIoU", "mAcc", "aAcc", "params", "delta_mIoU", "delta_mAcc"]);
    let first: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let second: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(first[3], "100.00");
    assert_eq!(first[7], "+0.00");
    assert_eq!(second[7], format!("{:+.2}", 100.0 * (miou - 1.0)));
    assert!(rep.join("per_class_iou.svg").exists());
    assert_eq!(code(&["report", "--out", s(&rep), s(&dir.path().join("missing"))]), 2);
}
