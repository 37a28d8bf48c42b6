use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DatasetStatistics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub class_id: usize,
    pub name: String,
    pub images: u64,
    pub share: f64,
    pub cumulative_share: f64,
}

/// Ingredient classes (background excluded) sorted by descending image
/// count, ties by class id, with share of all ingredient masks.
pub fn class_distribution_report(stats: &DatasetStatistics) -> Vec<DistributionRow> {
    let mut classes: Vec<(usize, u64)> = stats
        .per_class_image_counts
        .iter()
        .copied()
        .enumerate()
        .skip(1)
        .collect();
    classes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: u64 = classes.iter().map(|c| c.1).sum();
    let mut running = 0u64;
    classes
        .into_iter()
        .map(|(class_id, images)| {
            running += images;
            let frac = |n: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
            DistributionRow {
                class_id,
                name: stats.class_names.get(class_id).cloned().unwrap_or_default(),
                images,
                share: frac(images),
                cumulative_share: frac(running),
            }
        })
        .collect()
}

pub fn distribution_tsv(rows: &[DistributionRow]) -> String {
    let mut out = String::from("rank\tclass_id\tname\timages\tshare\tcumulative_share\n");
    for (rank, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            rank + 1,
            r.class_id,
            r.name,
            r.images,
            r.share,
            r.cumulative_share
        );
    }
    out
}

/// Bar chart of image counts per class in long-tail order.
pub fn distribution_svg(rows: &[DistributionRow]) -> String {
    let bar = 14.0;
    let (left, top, height) = (50.0, 20.0, 200.0);
    let width = left + bar * rows.len() as f64 + 20.0;
    let max = rows.iter().map(|r| r.images).max().unwrap_or(0).max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"9\">\n",
        top + height + 90.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        top + height,
        width - 10.0,
        top + height
    );
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\">{}</text>", top + 4.0, max as u64);
    for (i, r) in rows.iter().enumerate() {
        let h = height * r.images as f64 / max;
        let x = left + bar * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4a7ab0\"><title>{} ({})</title></rect>",
            x + 1.0,
            top + height - h,
            bar - 2.0,
            h,
            r.name,
            r.images
        );
        let _ = writeln!(
            svg,
            "<text transform=\"translate({:.1},{:.1}) rotate(60)\">{}</text>",
            x + bar / 2.0,
            top + height + 6.0,
            r.name
        );
    }
    svg.push_str("</svg>\n");
    svg
}
