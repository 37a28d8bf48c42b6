use foodseg_core::{LabelMap, IGNORE};
use foodseg_nn::image::resize_chw;
use foodseg_nn::Tensor;
use rand::Rng;

use crate::config::AugmentConfig;

fn resize_nearest(mask: &LabelMap, height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * mask.height() as f64 / height as f64) as usize).min(mask.height() - 1);
        for x in 0..width {
            let sx = (((x as f64 + 0.5) * mask.width() as f64 / width as f64) as usize).min(mask.width() - 1);
            out.push(mask.get(sy, sx));
        }
    }
    out
}

/// Resizes image and mask to `size x size` without randomness.
pub fn fit(image: &Tensor, mask: &LabelMap, size: usize) -> (Tensor, Vec<u8>) {
    (resize_chw(image, size, size), resize_nearest(mask, size, size))
}

/// Random rescale, pad-and-crop to `crop x crop`, horizontal flip and
/// brightness/contrast jitter. Padding is 0 in the image and `IGNORE` in
/// the mask. With augmentation disabled this is [`fit`].
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    mask: &LabelMap,
    crop: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Tensor, Vec<u8>) {
    if !cfg.enabled {
        return fit(image, mask, crop);
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let s = rng.gen_range(cfg.scale_min..=cfg.scale_max);
    let nh = ((h as f64 * s).round() as usize).max(1);
    let nw = ((w as f64 * s).round() as usize).max(1);
    let img = resize_chw(image, nh, nw);
    let lab = resize_nearest(mask, nh, nw);
    let (ph, pw) = (nh.max(crop), nw.max(crop));
    let oy = rng.gen_range(0..=ph - crop);
    let ox = rng.gen_range(0..=pw - crop);
    let flip = cfg.flip && rng.gen_bool(0.5);
    let (bright, contrast) = if cfg.jitter > 0.0 {
        (
            rng.gen_range(-cfg.jitter..=cfg.jitter),
            rng.gen_range(1.0 - cfg.jitter..=1.0 + cfg.jitter),
        )
    } else {
        (0.0, 1.0)
    };
    let mut out = vec![0.0; 3 * crop * crop];
    let mut labels = vec![IGNORE; crop * crop];
    for y in 0..crop {
        let sy = oy + y;
        if sy >= nh {
            continue;
        }
        for x in 0..crop {
            let dx = if flip { crop - 1 - x } else { x };
            let sx = ox + x;
            if sx >= nw {
                continue;
            }
            labels[y * crop + dx] = lab[sy * nw + sx];
            for c in 0..3 {
                let v = img.data()[(c * nh + sy) * nw + sx];
                out[(c * crop + y) * crop + dx] = v * contrast + bright;
            }
        }
    }
    (Tensor::new(&[3, crop, crop], out), labels)
}
