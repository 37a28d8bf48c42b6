use foodseg_core::manifest::{DatasetManifest, SplitTag};
use foodseg_core::mask::load_mask;
use foodseg_relem::recipe::{load_pairs, load_recipe_records};
use foodseg_synth::*;

#[test]
fn generation_is_seed_deterministic() {
    let a = pretraining_corpus(20, 32, 5);
    let b = pretraining_corpus(20, 32, 5);
    let c = pretraining_corpus(20, 32, 6);
    assert!(a.dishes.iter().zip(&b.dishes).all(|(x, y)| x.image == y.image && x.mask == y.mask));
    assert_eq!(a.recipes, b.recipes);
    assert!(a.dishes.iter().zip(&c.dishes).any(|(x, y)| x.image != y.image));
}

#[test]
fn masks_match_portions_and_titles_ignore_style() {
    for dish in pretraining_corpus(50, 32, 1).dishes {
        let present = dish.mask.present_classes();
        for id in &present {
            assert!(*id == 0 || dish.ingredient_ids().contains(id));
        }
        assert!(dish.mask.data().iter().all(|&v| (v as usize) < NUM_CLASSES));
    }
    let raw = [Portion { ingredient: 1, style: 0 }, Portion { ingredient: 0, style: 0 }];
    let fried = [Portion { ingredient: 0, style: 1 }, Portion { ingredient: 1, style: 1 }];
    assert_eq!(dish_title(&raw), "egg and tomato");
    assert_eq!(dish_title(&raw), dish_title(&fried));
}

#[test]
fn styles_change_appearance() {
    let mean_color = |style| {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let d = render(32, &[Portion { ingredient: 0, style }], &mut rng);
        let mut sum = [0.0f64; 3];
        let mut n = 0.0;
        for (i, &l) in d.mask.data().iter().enumerate() {
            if l == 1 {
                for c in 0..3 {
                    sum[c] += d.image.data[i * 3 + c] as f64;
                }
                n += 1.0;
            }
        }
        sum.map(|s| s / n)
    };
    let (raw, fried, boiled) = (mean_color(0), mean_color(1), mean_color(2));
    let dist = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist(raw, fried) > 40.0);
    assert!(dist(raw, boiled) > 40.0);
}

#[test]
fn probe_set_covers_every_ingredient_and_style() {
    let p = probe_set(2, 32, 0);
    assert_eq!(p.len(), INGREDIENTS.len() * STYLES.len() * 2);
    for (dish, ing) in &p {
        assert_eq!(dish.portions.len(), 1);
        assert_eq!(dish.portions[0].ingredient, *ing);
    }
}

#[test]
fn written_datasets_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = segmentation_sets(4, 3, 32, 2);
    let path = write_segmentation_dataset(dir.path(), "synthetic", &[(SplitTag::Train, &train), (SplitTag::Test, &test)]).unwrap();
    let m = DatasetManifest::load(&path).unwrap();
    assert_eq!(m.split_count(SplitTag::Train), 4);
    assert_eq!(m.split_count(SplitTag::Test), 3);
    let mask = load_mask(dir.path().join(&m.records[0].mask_path), NUM_CLASSES).unwrap();
    assert_eq!(mask, train[0].mask);

    let corpus = pretraining_corpus(6, 32, 3);
    write_pretraining_corpus(dir.path(), &corpus).unwrap();
    assert_eq!(load_recipe_records(&dir.path().join("recipes.jsonl")).unwrap(), corpus.recipes);
    assert_eq!(load_pairs(&dir.path().join("pairs.jsonl")).unwrap().len(), 6);
}
