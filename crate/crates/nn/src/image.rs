//! Conversions between interleaved 8-bit RGB and normalized `[3, H, W]`
//! tensors.

use crate::tensor::Tensor;

/// Maps bytes to `(v / 255 - 0.5) / 0.5`, i.e. into `[-1, 1]`.
pub fn rgb_to_tensor(height: usize, width: usize, rgb: &[u8]) -> Tensor {
    assert_eq!(rgb.len(), height * width * 3, "rgb buffer size");
    let mut data = vec![0.0; rgb.len()];
    let plane = height * width;
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(&[3, height, width], data)
}

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel centers.
pub fn resize_chw(t: &Tensor, height: usize, width: usize) -> Tensor {
    let (c, h, w) = (t.dim(0), t.dim(1), t.dim(2));
    if h == height && w == width {
        return t.clone();
    }
    let table = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(src - 1);
                (lo, (lo + 1).min(src - 1), pos - lo as f64)
            })
            .collect()
    };
    let rows = table(h, height);
    let cols = table(w, width);
    let mut out = Vec::with_capacity(c * height * width);
    for src in t.data().chunks(h * w) {
        for &(y0, y1, ly) in &rows {
            for &(x0, x1, lx) in &cols {
                out.push(
                    (1.0 - ly) * ((1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1])
                        + ly * ((1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]),
                );
            }
        }
    }
    Tensor::new(&[c, height, width], out)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[&Tensor]) -> Tensor {
    let first = items.first().expect("stack of nothing").shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * items[0].numel());
    for t in items {
        assert_eq!(t.shape(), first.as_slice(), "stack shape mismatch");
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend(first);
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_range_and_layout() {
        let t = rgb_to_tensor(1, 2, &[0, 255, 51, 255, 0, 0]);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, 1.0, -1.0, 51.0 / 127.5 - 1.0, -1.0]);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let t = Tensor::full(&[2, 3, 5], 0.25);
        let r = resize_chw(&t, 7, 4);
        assert_eq!(r.shape(), &[2, 7, 4]);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
