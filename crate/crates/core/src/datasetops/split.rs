use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::{DatasetManifest, SplitTag};

/// `floor(x + 0.5)` for non-negative `x`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Shuffles records under `seed` and marks the first `round_half_up(ratio * N)`
/// as train, the rest as test. Existing tags are overwritten.
pub fn split_random(manifest: &DatasetManifest, ratio: f64, seed: u64) -> DatasetManifest {
    let n = manifest.records.len();
    let n_train = round_half_up(ratio.clamp(0.0, 1.0) * n as f64).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.records[idx].split_tag = if rank < n_train {
            SplitTag::Train
        } else {
            SplitTag::Test
        };
    }
    out
}

/// Per-dish split: every dish sends `floor` or `ceil` of `fraction * n` of
/// its images to train. The global train count is `round_half_up(fraction *
/// N)`, with the leftover seats handed out by largest remainder; equal
/// remainders are ordered by a seeded shuffle of the dishes.
pub fn split_stratified_by_dish(manifest: &DatasetManifest, fraction: f64, seed: u64) -> DatasetManifest {
    let fraction = fraction.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_dish: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, rec) in manifest.records.iter().enumerate() {
        by_dish.entry(rec.dish_id).or_default().push(i);
    }

    let mut dishes: Vec<(u32, usize, f64)> = by_dish
        .iter()
        .map(|(&d, idx)| {
            let quota = fraction * idx.len() as f64;
            (d, quota.floor() as usize, quota - quota.floor())
        })
        .collect();
    let target = round_half_up(fraction * manifest.records.len() as f64);
    let assigned: usize = dishes.iter().map(|d| d.1).sum();
    let mut extra = target.saturating_sub(assigned);

    dishes.shuffle(&mut rng);
    // stable sort keeps the shuffled order among equal remainders
    dishes.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut quota: BTreeMap<u32, usize> = BTreeMap::new();
    for (d, base, rem) in dishes {
        let bonus = usize::from(extra > 0 && rem > 0.0);
        extra -= bonus;
        quota.insert(d, base + bonus);
    }

    let mut out = manifest.clone();
    for (d, mut idx) in by_dish {
        idx.shuffle(&mut rng);
        let k = quota[&d];
        for (rank, &i) in idx.iter().enumerate() {
            out.records[i].split_tag = if rank < k {
                SplitTag::Train
            } else {
                SplitTag::Test
            };
        }
    }
    out
}
