//! Synthetic food images for tests and demos.
//!
//! Each dish is a dark plate holding elliptical blobs. An ingredient fixes a
//! base color and a surface pattern; a cooking style then shifts the color
//! and texture, so the same ingredient looks different across styles while
//! its recipe still names it. Masks label each blob with its ingredient id.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use foodseg_core::manifest::{DatasetManifest, ImageRecord, SplitTag};
use foodseg_core::mask::{save_mask, LabelMap, RgbImage};
use foodseg_core::ontology::CategoryOntology;
use foodseg_relem::recipe::{save_pairs, save_recipe_records, PairRecord, RecipeRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INGREDIENTS: [&str; 4] = ["tomato", "egg", "spinach", "potato"];
pub const STYLES: [&str; 3] = ["raw", "fried", "boiled"];
pub const NUM_CLASSES: usize = INGREDIENTS.len() + 1;

const BASE_COLORS: [[f64; 3]; 4] = [[215.0, 45.0, 40.0], [245.0, 225.0, 80.0], [40.0, 135.0, 55.0], [205.0, 170.0, 120.0]];
const PLATE: [f64; 3] = [70.0, 72.0, 88.0];
const PANTRY: [&str; 3] = ["salt", "pepper", "oil"];
const SHARED_STEPS: [&str; 5] = [
    "wash everything well",
    "serve on a warm plate",
    "season to taste",
    "cut into bite sized pieces",
    "let it rest for a minute",
];

/// One ingredient blob and how it was cooked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Portion {
    /// Index into [`INGREDIENTS`]; its mask id is `ingredient + 1`.
    pub ingredient: usize,
    pub style: usize,
}

#[derive(Debug, Clone)]
pub struct Dish {
    pub image: RgbImage,
    pub mask: LabelMap,
    pub portions: Vec<Portion>,
}

impl Dish {
    pub fn ingredient_ids(&self) -> BTreeSet<u8> {
        self.portions.iter().map(|p| (p.ingredient + 1) as u8).collect()
    }
}

fn styled_color(p: Portion) -> [f64; 3] {
    let base = BASE_COLORS[p.ingredient];
    let (mix, target) = match p.style {
        0 => (0.0, [0.0; 3]),
        1 => (0.5, [110.0, 60.0, 15.0]),
        _ => (0.5, [235.0, 235.0, 225.0]),
    };
    [0, 1, 2].map(|c| base[c] * (1.0 - mix) + target[c] * mix)
}

/// Pattern multiplier in `[0.7, 1.15]` for a pixel at offset `(dy, dx)`
/// from the blob center with normalized radius `r`.
fn pattern(ingredient: usize, dy: f64, dx: f64, r: f64) -> f64 {
    match ingredient {
        0 => 1.0 - 0.2 * r * r,
        1 => if r < 0.45 { 1.15 } else { 0.85 },
        2 => if (dx.floor() as i64).rem_euclid(3) == 0 { 0.7 } else { 1.0 },
        _ => if (dy.floor() as i64).rem_euclid(3) == 0 && (dx.floor() as i64).rem_euclid(3) == 0 { 0.75 } else { 1.0 },
    }
}

fn noise_amplitude(style: usize) -> f64 {
    match style {
        0 => 8.0,
        1 => 30.0,
        _ => 3.0,
    }
}

/// Renders the portions in order; later blobs occlude earlier ones.
pub fn render<R: Rng + ?Sized>(size: usize, portions: &[Portion], rng: &mut R) -> Dish {
    let mut rgb = vec![0.0f64; size * size * 3];
    for px in rgb.chunks_mut(3) {
        for c in 0..3 {
            px[c] = PLATE[c] + rng.gen_range(-6.0..6.0);
        }
    }
    let mut labels = vec![0u8; size * size];
    let s = size as f64;
    for &p in portions {
        let ry = rng.gen_range(s / 6.0..s / 3.0);
        let rx = rng.gen_range(s / 6.0..s / 3.0);
        let cy = rng.gen_range(ry.min(s / 2.0)..(s - ry).max(s / 2.0 + 1e-9));
        let cx = rng.gen_range(rx.min(s / 2.0)..(s - rx).max(s / 2.0 + 1e-9));
        let color = styled_color(p);
        let amp = noise_amplitude(p.style);
        for y in 0..size {
            for x in 0..size {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let r = ((dy / ry).powi(2) + (dx / rx).powi(2)).sqrt();
                if r > 1.0 {
                    continue;
                }
                let m = pattern(p.ingredient, dy, dx, r);
                let i = y * size + x;
                labels[i] = (p.ingredient + 1) as u8;
                for c in 0..3 {
                    rgb[i * 3 + c] = color[c] * m + rng.gen_range(-amp..=amp);
                }
            }
        }
    }
    let bytes = rgb.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Dish {
        image: RgbImage::new(size, size, bytes).expect("square raster"),
        mask: LabelMap::new(size, size, labels).expect("square raster"),
        portions: portions.to_vec(),
    }
}

/// Title naming the ingredients, independent of cooking style.
pub fn dish_title(portions: &[Portion]) -> String {
    let names: BTreeSet<&str> = portions.iter().map(|p| INGREDIENTS[p.ingredient]).collect();
    names.into_iter().collect::<Vec<_>>().join(" and ")
}

/// A recipe listing the dish's ingredients, one pantry item, shared steps
/// and one sentence per portion describing its cooking style.
pub fn recipe_for<R: Rng + ?Sized>(id: &str, portions: &[Portion], rng: &mut R) -> RecipeRecord {
    let mut ingredients: Vec<String> = portions.iter().map(|p| INGREDIENTS[p.ingredient].to_string()).collect();
    ingredients.dedup();
    ingredients.push(PANTRY[rng.gen_range(0..PANTRY.len())].to_string());
    let shared = rng.gen_range(1..=2);
    let mut instructions: Vec<String> = SHARED_STEPS
        .choose_multiple(rng, shared)
        .map(|s| s.to_string())
        .collect();
    for p in portions {
        let name = INGREDIENTS[p.ingredient];
        instructions.push(match p.style {
            0 => format!("serve the {name} fresh"),
            1 => format!("fry the {name} in hot oil"),
            _ => format!("boil the {name} in water"),
        });
    }
    instructions.shuffle(rng);
    RecipeRecord {
        id: id.to_string(),
        title: dish_title(portions),
        ingredients,
        instructions,
    }
}

fn random_portions<R: Rng + ?Sized>(rng: &mut R, max: usize) -> Vec<Portion> {
    let n = rng.gen_range(1..=max);
    let mut ids: Vec<usize> = (0..INGREDIENTS.len()).collect();
    ids.shuffle(rng);
    ids.truncate(n);
    let style = rng.gen_range(0..STYLES.len());
    ids.into_iter().map(|ingredient| Portion { ingredient, style }).collect()
}

/// Paired images and recipes for alignment pretraining.
pub struct PretrainCorpus {
    pub dishes: Vec<Dish>,
    pub recipes: Vec<RecipeRecord>,
}

/// `n` dishes of one or two ingredients sharing a cooking style, each with
/// its own recipe.
pub fn pretraining_corpus(n: usize, size: usize, seed: u64) -> PretrainCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dishes = Vec::with_capacity(n);
    let mut recipes = Vec::with_capacity(n);
    for i in 0..n {
        let portions = random_portions(&mut rng, 2);
        recipes.push(recipe_for(&format!("r{i:04}"), &portions, &mut rng));
        dishes.push(render(size, &portions, &mut rng));
    }
    PretrainCorpus { dishes, recipes }
}

/// Single-ingredient dishes: `per_style` images for every ingredient and
/// style, returned with their ingredient index.
pub fn probe_set(per_style: usize, size: usize, seed: u64) -> Vec<(Dish, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut out = Vec::new();
    for ingredient in 0..INGREDIENTS.len() {
        for style in 0..STYLES.len() {
            for _ in 0..per_style {
                out.push((render(size, &[Portion { ingredient, style }], &mut rng), ingredient));
            }
        }
    }
    out
}

/// Train and test dishes of one to three ingredients, each portion cooked
/// in its own random style.
pub fn segmentation_sets(n_train: usize, n_test: usize, size: usize, seed: u64) -> (Vec<Dish>, Vec<Dish>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut make = |n: usize| {
        (0..n)
            .map(|_| {
                let mut portions = random_portions(&mut rng, 3);
                for p in &mut portions {
                    p.style = rng.gen_range(0..STYLES.len());
                }
                render(size, &portions, &mut rng)
            })
            .collect::<Vec<_>>()
    };
    let train = make(n_train);
    let test = make(n_test);
    (train, test)
}

pub fn ontology() -> CategoryOntology {
    let classes: Vec<(&str, u8)> = INGREDIENTS.iter().map(|n| (*n, 0)).collect();
    CategoryOntology::new("background", &classes, &["ingredient"]).expect("synthetic ontology")
}

/// Writes `images/`, `masks/` and a manifest whose records carry the given
/// split tags. Returns the manifest path.
pub fn write_segmentation_dataset(dir: &Path, name: &str, sets: &[(SplitTag, &[Dish])]) -> foodseg_core::Result<PathBuf> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| foodseg_core::Error::io(p.clone(), e))?;
    }
    let mut records = Vec::new();
    for (tag, dishes) in sets {
        for dish in dishes.iter() {
            let stem = format!("{}{:04}", if *tag == SplitTag::Test { "test" } else { "train" }, records.len());
            let image_path = PathBuf::from(format!("images/{stem}.png"));
            let mask_path = PathBuf::from(format!("masks/{stem}.png"));
            dish.image.save(dir.join(&image_path))?;
            save_mask(dir.join(&mask_path), &dish.mask)?;
            records.push(ImageRecord {
                image_path,
                mask_path,
                dish_id: records.len() as u32,
                ingredient_ids: dish.ingredient_ids(),
                split_tag: *tag,
            });
        }
    }
    let manifest = DatasetManifest::new(name, ontology(), records);
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Writes `images/`, `recipes.jsonl` and `pairs.jsonl` for pretraining.
pub fn write_pretraining_corpus(dir: &Path, corpus: &PretrainCorpus) -> std::result::Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut pairs = Vec::with_capacity(corpus.dishes.len());
    for (i, (dish, recipe)) in corpus.dishes.iter().zip(&corpus.recipes).enumerate() {
        let image = PathBuf::from(format!("images/pretrain{i:04}.png"));
        dish.image.save(dir.join(&image))?;
        pairs.push(PairRecord {
            image,
            recipe_id: recipe.id.clone(),
        });
    }
    save_recipe_records(&dir.join("recipes.jsonl"), &corpus.recipes)?;
    save_pairs(&dir.join("pairs.jsonl"), &pairs)?;
    Ok(())
}
