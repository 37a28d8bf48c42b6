use std::collections::{BTreeMap, BTreeSet};

use foodseg_core::datasetops::fixture::{fixture_manifest, write_fixture};
use foodseg_core::datasetops::{
    apply_refinement, class_distribution_report, compute_statistics, plan_delete_rare, split_random,
    split_stratified_by_dish, DatasetStatistics, DiskMasks, MemoryMasks, RefinementPlan, RelabelFix,
};
use foodseg_core::manifest::{DatasetManifest, ImageRecord, SplitTag};
use foodseg_core::mask::encode_mask;
use foodseg_core::CategoryOntology;

/// Image counts per class id for the fixture, counted by hand from its table.
const EXPECTED_CLASS_IMAGES: [u64; 8] = [12, 6, 5, 5, 5, 5, 5, 2];

fn stats() -> (DatasetManifest, MemoryMasks, DatasetStatistics) {
    let (m, masks) = fixture_manifest();
    let s = compute_statistics(&m, &masks);
    (m, masks, s)
}

#[test]
fn fixture_statistics_match_hand_table() {
    let (_, _, s) = stats();
    assert_eq!(s.num_images, 12);
    assert_eq!(s.num_masks, 33);
    assert_eq!(s.num_dishes, 3);
    assert_eq!(s.num_classes, 8);
    assert_eq!(s.per_class_image_counts, EXPECTED_CLASS_IMAGES);
    assert_eq!(s.mean_image_width, 10.0);
    assert_eq!(s.mean_image_height, 8.0);
    assert!(!s.partial);
    assert_eq!(s.num_masks, s.per_class_image_counts[1..].iter().sum::<u64>());
}

#[test]
fn statistics_brute_force_agreement() {
    let (m, masks, s) = stats();
    // brute force: per class, set of images containing at least one pixel
    for class in 0..8u8 {
        let images: BTreeSet<usize> = m
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| masks.masks[&r.mask_path].data().contains(&class))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(images.len() as u64, s.per_class_image_counts[usize::from(class)]);
    }
}

#[test]
fn empty_manifest_gives_zero_statistics() {
    let (m, masks) = fixture_manifest();
    let empty = DatasetManifest::new("empty", m.ontology.clone(), vec![]);
    let s = compute_statistics(&empty, &masks);
    assert_eq!((s.num_images, s.num_masks, s.num_dishes), (0, 0, 0));
    assert!(s.per_class_image_counts.iter().all(|&c| c == 0));
    assert_eq!((s.mean_image_width, s.mean_image_height), (0.0, 0.0));
}

#[test]
fn statistics_invariant_under_reordering_and_split_sums() {
    let (m, masks, s) = stats();
    let mut rev = m.clone();
    rev.records.reverse();
    assert_eq!(compute_statistics(&rev, &masks), s);

    let split = split_random(&m, 0.7, 3);
    let st = compute_statistics(&split, &masks);
    for (k, total) in st.per_class_image_counts.iter().enumerate() {
        let c = st.per_class_split_counts[k];
        assert_eq!(c.train + c.test, *total);
    }
}

#[test]
fn unreadable_mask_marks_partial() {
    let (m, mut masks) = fixture_manifest();
    masks.masks.remove(&m.records[0].mask_path);
    let s = compute_statistics(&m, &masks);
    assert!(s.partial);
    assert_eq!(s.diagnostics.len(), 1);
    assert_eq!(s.num_images, 12);
    assert_eq!(s.num_masks, 33 - 2);
}

#[test]
fn delete_rare_plans() {
    let (_, _, s) = stats();
    let plan = plan_delete_rare(&s, 5);
    assert_eq!(plan.delete_set, BTreeSet::from([7]));
    assert!(plan_delete_rare(&s, 1).is_empty());
    assert!(plan_delete_rare(&s, 2).is_empty());
}

#[test]
fn delete_rare_then_recompute_leaves_no_rare_class() {
    let (m, masks, s) = stats();
    let refined = apply_refinement(&m, &plan_delete_rare(&s, 5), &masks).unwrap();
    let mut mem = MemoryMasks::default();
    for (r, mask) in refined.manifest.records.iter().zip(&refined.masks) {
        mem.insert(&r.mask_path, mask.clone());
    }
    let s2 = compute_statistics(&refined.manifest, &mem);
    assert_eq!(s2.num_classes, 7);
    assert_eq!(s2.num_images, s.num_images);
    assert!(s2.per_class_image_counts[1..].iter().all(|&n| n >= 5));
    assert_eq!(s2.num_masks, 31);
    assert_eq!(refined.manifest.ontology.id_of("saffron"), None);
}

#[test]
fn empty_plan_is_identity() {
    let (m, masks, _) = stats();
    let r = apply_refinement(&m, &RefinementPlan::default(), &masks).unwrap();
    assert_eq!(r.manifest, m);
    for (rec, mask) in m.records.iter().zip(&r.masks) {
        assert_eq!(&masks.masks[&rec.mask_path], mask);
    }
}

fn refined_stats(m: &DatasetManifest, masks: &MemoryMasks, plan: &RefinementPlan) -> (DatasetManifest, DatasetStatistics, Vec<Vec<u8>>) {
    let r = apply_refinement(m, plan, masks).unwrap();
    let mut mem = MemoryMasks::default();
    for (rec, mask) in r.manifest.records.iter().zip(&r.masks) {
        mem.insert(&rec.mask_path, mask.clone());
    }
    let bytes = r.masks.iter().map(|m| encode_mask(m).unwrap()).collect();
    let s = compute_statistics(&r.manifest, &mem);
    (r.manifest, s, bytes)
}

#[test]
fn merge_counts_union_of_images() {
    let (m, masks, _) = stats();
    let orange = m.ontology.id_of("orange").unwrap();
    let citrus = m.ontology.id_of("citrus").unwrap();
    let images_of = |class: u8| -> BTreeSet<usize> {
        m.records
            .iter()
            .enumerate()
            .filter(|(_, r)| masks.masks[&r.mask_path].data().contains(&class))
            .map(|(i, _)| i)
            .collect()
    };
    let union = images_of(orange).union(&images_of(citrus)).count() as u64;
    assert_eq!(union, 8);

    let plan = RefinementPlan {
        merge_map: BTreeMap::from([(orange, citrus)]),
        ..Default::default()
    };
    let (rm, s, _) = refined_stats(&m, &masks, &plan);
    let new_citrus = rm.ontology.id_of("citrus").unwrap();
    assert_eq!(s.per_class_image_counts[usize::from(new_citrus)], union);
    assert_eq!(rm.ontology.id_of("orange"), None);
    assert_eq!(s.num_classes, 7);
    // ids re-densified: citrus 6 -> 5, saffron 7 -> 6
    assert_eq!(new_citrus, 5);
    assert_eq!(rm.ontology.id_of("saffron"), Some(6));
}

#[test]
fn refinement_is_idempotent_bytewise() {
    let (m, masks, s) = stats();
    let mut plan = plan_delete_rare(&s, 5);
    plan.merge_map.insert(5, 6);
    plan.relabel_fixes.push(RelabelFix {
        image_path: m.records[0].image_path.clone(),
        old_id: 2,
        new_id: 3,
    });
    let (once, _, once_masks) = refined_stats(&m, &masks, &plan);
    let mut mem = MemoryMasks::default();
    let r = apply_refinement(&m, &plan, &masks).unwrap();
    for (rec, mask) in r.manifest.records.iter().zip(&r.masks) {
        mem.insert(&rec.mask_path, mask.clone());
    }
    let (twice, _, twice_masks) = refined_stats(&once, &mem, &plan);
    assert_eq!(once.to_json(), twice.to_json());
    assert_eq!(once_masks, twice_masks);
    // the relabel fix moved egg pixels of record 0 to tomato
    assert_eq!(once.records[0].ingredient_ids, BTreeSet::from([1, 3]));
}

#[test]
fn refinement_never_grows_classes_or_changes_image_count() {
    let (m, masks, s) = stats();
    for plan in [
        plan_delete_rare(&s, 6),
        RefinementPlan {
            merge_map: BTreeMap::from([(1, 2), (2, 3)]),
            ..Default::default()
        },
    ] {
        let (rm, rs, _) = refined_stats(&m, &masks, &plan);
        assert!(rs.num_classes <= s.num_classes);
        assert_eq!(rm.records.len(), m.records.len());
    }
}

#[test]
fn invalid_plans_rejected() {
    let (m, masks, _) = stats();
    let bad = [
        RefinementPlan {
            delete_set: BTreeSet::from([42]),
            ..Default::default()
        },
        RefinementPlan {
            merge_map: BTreeMap::from([(1, 2), (2, 1)]),
            ..Default::default()
        },
        RefinementPlan {
            delete_set: BTreeSet::from([2]),
            merge_map: BTreeMap::from([(1, 2)]),
            ..Default::default()
        },
        RefinementPlan {
            delete_set: BTreeSet::from([0]),
            ..Default::default()
        },
    ];
    for plan in bad {
        assert!(apply_refinement(&m, &plan, &masks).is_err(), "{plan:?}");
    }
}

#[test]
fn random_split_counts_and_determinism() {
    let (m, _, _) = stats();
    let a = split_random(&m, 0.7, 1);
    let b = split_random(&m, 0.7, 1);
    assert_eq!(a, b);
    // 0.7 * 12 = 8.4 -> 8
    assert_eq!(a.split_count(SplitTag::Train), 8);
    assert_eq!(a.split_count(SplitTag::Test), 4);
    assert_eq!(a.split_count(SplitTag::Unassigned), 0);
    assert_ne!(
        split_random(&m, 0.7, 1).records,
        split_random(&m, 0.7, 2).records,
        "different seeds should usually differ"
    );
}

fn synthetic_manifest(n: usize, dish_of: impl Fn(usize) -> u32) -> DatasetManifest {
    let ont = CategoryOntology::new("background", &[("x", 0)], &["Others"]).unwrap();
    let records = (0..n)
        .map(|i| ImageRecord {
            image_path: format!("i{i}.png").into(),
            mask_path: format!("m{i}.png").into(),
            dish_id: dish_of(i),
            ingredient_ids: BTreeSet::from([1]),
            split_tag: SplitTag::Unassigned,
        })
        .collect();
    DatasetManifest::new("synthetic", ont, records)
}

#[test]
fn random_split_at_full_dataset_size() {
    let m = synthetic_manifest(10, |_| 0);
    let s = split_random(&m, 0.7, 0);
    assert_eq!((s.split_count(SplitTag::Train), s.split_count(SplitTag::Test)), (7, 3));
    let m = synthetic_manifest(7118, |_| 0);
    let s = split_random(&m, 0.7, 0);
    assert_eq!(s.split_count(SplitTag::Train), 4983);
    assert_eq!(s.split_count(SplitTag::Test), 2135);
}

#[test]
fn stratified_split_partition_constraints() {
    let m = synthetic_manifest(4, |_| 9);
    let s = split_stratified_by_dish(&m, 0.5, 0);
    assert_eq!(s.split_count(SplitTag::Train), 2);

    // dishes of sizes 3 and 5: each gets floor or ceil of half, 4 in total
    let m = synthetic_manifest(8, |i| if i < 3 { 1 } else { 2 });
    let mut outcomes = BTreeSet::new();
    for seed in 0..32 {
        let s = split_stratified_by_dish(&m, 0.5, seed);
        let t1 = s.records[..3].iter().filter(|r| r.split_tag == SplitTag::Train).count();
        let t2 = s.records[3..].iter().filter(|r| r.split_tag == SplitTag::Train).count();
        assert!((1..=2).contains(&t1) && (2..=3).contains(&t2));
        assert_eq!(t1 + t2, 4);
        assert_eq!(s, split_stratified_by_dish(&m, 0.5, seed));
        outcomes.insert((t1, t2));
    }
    // both tie resolutions are reachable under different seeds
    assert_eq!(outcomes, BTreeSet::from([(1, 3), (2, 2)]));

    let m = synthetic_manifest(2372, |i| (i % 37) as u32);
    let s = split_stratified_by_dish(&m, 0.5, 7);
    assert_eq!(s.split_count(SplitTag::Train), 1186);
    assert_eq!(s.split_count(SplitTag::Test), 1186);
}

#[test]
fn fixture_stratified_split() {
    let (m, _, _) = stats();
    let s = split_stratified_by_dish(&m, 0.5, 11);
    assert_eq!(s.split_count(SplitTag::Train), 6);
    let per_dish = |d: u32| s.records.iter().filter(|r| r.dish_id == d && r.split_tag == SplitTag::Train).count();
    assert!((1..=2).contains(&per_dish(1)));
    assert_eq!(per_dish(2), 2);
    assert!((2..=3).contains(&per_dish(3)));
}

#[test]
fn distribution_shares() {
    let (_, _, mut s) = stats();
    s.per_class_image_counts = vec![99, 2, 8, 1, 4];
    s.class_names = ["bg", "a", "b", "c", "d"].map(String::from).to_vec();
    let rows = class_distribution_report(&s);
    let counts: Vec<u64> = rows.iter().map(|r| r.images).collect();
    assert_eq!(counts, vec![8, 4, 2, 1]);
    let shares: Vec<f64> = rows.iter().map(|r| r.share).collect();
    assert_eq!(shares, vec![8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0]);
    assert_eq!(rows.last().unwrap().cumulative_share, 1.0);

    s.per_class_image_counts = vec![0, 3, 3, 3, 3];
    let rows = class_distribution_report(&s);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.share, 0.25);
        assert!((r.cumulative_share - 0.25 * (i + 1) as f64).abs() < 1e-15);
    }
}

#[test]
fn fixture_on_disk_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(dir.path()).unwrap();
    let m = DatasetManifest::load(&path).unwrap();
    let s = compute_statistics(&m, &DiskMasks::new(dir.path()));
    assert_eq!(s.per_class_image_counts, EXPECTED_CLASS_IMAGES);
    assert!(s.to_report().contains("# masks\t33"));
}

#[test]
fn bundled_fixture_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path()).unwrap();
    let bundled = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fixture12");
    let (m, _) = fixture_manifest();
    let mut files = vec![std::path::PathBuf::from("manifest.json")];
    for r in &m.records {
        files.push(r.image_path.clone());
        files.push(r.mask_path.clone());
    }
    for f in files {
        let a = std::fs::read(dir.path().join(&f)).unwrap();
        let b = std::fs::read(bundled.join(&f)).unwrap_or_else(|_| panic!("{} missing from the bundle", f.display()));
        assert_eq!(a, b, "{} differs from the generator", f.display());
    }
}
