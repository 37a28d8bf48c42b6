//! Label rasters.
//!
//! On disk a mask is an 8-bit single-channel PNG (grayscale or palette
//! indexed) whose pixel value is the class id; [`IGNORE`] marks pixels that
//! are excluded from losses and metrics.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Pixel value excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// Row-major raster of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidShape {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Checks every pixel is a class id below `num_classes` or [`IGNORE`].
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE && usize::from(v) >= num_classes)
        {
            Some(index) => Err(Error::InvalidLabel {
                value: self.data[index],
                index,
                num_classes,
            }),
            None => Ok(()),
        }
    }

    /// Pixel count per value, IGNORE included.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[usize::from(v)] += 1;
        }
        hist
    }

    /// Distinct values present, excluding IGNORE.
    pub fn present_classes(&self) -> Vec<u8> {
        let hist = self.histogram();
        (0..=254u8).filter(|&v| hist[usize::from(v)] > 0).collect()
    }
}

/// Total label mapping used by [`remap_labels`]. IGNORE always maps to IGNORE.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMapping {
    table: BTreeMap<u8, u8>,
}

impl LabelMapping {
    pub fn identity(num_classes: usize) -> Self {
        (0..num_classes).map(|c| (c as u8, c as u8)).collect()
    }

    pub fn insert(&mut self, from: u8, to: u8) {
        self.table.insert(from, to);
    }

    pub fn get(&self, from: u8) -> Option<u8> {
        if from == IGNORE {
            return Some(IGNORE);
        }
        self.table.get(&from).copied()
    }

    /// `self` applied after `first`, i.e. `x -> self(first(x))`.
    pub fn after(&self, first: &LabelMapping) -> Result<LabelMapping> {
        first
            .table
            .iter()
            .map(|(&from, &mid)| {
                self.get(mid)
                    .map(|to| (from, to))
                    .ok_or(Error::UnmappedLabel(mid))
            })
            .collect()
    }
}

impl FromIterator<(u8, u8)> for LabelMapping {
    fn from_iter<I: IntoIterator<Item = (u8, u8)>>(iter: I) -> Self {
        Self {
            table: iter.into_iter().collect(),
        }
    }
}

/// Applies `mapping` pixel-wise.
pub fn remap_labels(mask: &LabelMap, mapping: &LabelMapping) -> Result<LabelMap> {
    let mut lut = [None; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = mapping.get(v as u8);
    }
    let data = mask
        .data
        .iter()
        .map(|&v| lut[usize::from(v)].ok_or(Error::UnmappedLabel(v)))
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(mask.height, mask.width, data)
}

/// Reads an 8-bit single-channel raster without class validation.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes).map_err(|e| match e {
        Error::Decode { reason, .. } => Error::Decode {
            path: path.to_path_buf(),
            reason,
        },
        Error::NotSingleChannel { found, .. } => Error::NotSingleChannel {
            path: path.to_path_buf(),
            found,
        },
        other => other,
    })
}

/// Reads a mask and rejects pixel values that are neither below
/// `num_classes` nor IGNORE.
pub fn load_mask(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMap> {
    let mask = read_mask(path)?;
    mask.check_classes(num_classes)?;
    Ok(mask)
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMap> {
    let decode_err = |reason: String| Error::Decode {
        path: Default::default(),
        reason,
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Palette indices are the class ids; never expand them.
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    let single = matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed);
    if !single || depth != png::BitDepth::Eight {
        return Err(Error::NotSingleChannel {
            path: Default::default(),
            found: format!("{color:?} at {depth:?}"),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(e.to_string()))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks(frame.line_size).take(height) {
        data.extend_from_slice(&row[..width]);
    }
    LabelMap::new(height, width, data)
}

pub fn encode_mask(mask: &LabelMap) -> Result<Vec<u8>> {
    encode_png(
        mask.width,
        mask.height,
        png::ColorType::Grayscale,
        &mask.data,
    )
}

pub fn save_mask(path: impl AsRef<Path>, mask: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask(mask)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Balanced);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::InvalidShape {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decode_err = |reason: String| Error::Decode {
            path: path.to_path_buf(),
            reason,
        };
        let mut decoder = png::Decoder::new(Cursor::new(&bytes[..]));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| decode_err(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| decode_err("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let frame = reader
            .next_frame(&mut buf)
            .map_err(|e| decode_err(e.to_string()))?;
        let (width, height) = (frame.width as usize, frame.height as usize);
        let channels = frame.color_type.samples();
        let mut data = Vec::with_capacity(width * height * 3);
        for row in buf.chunks(frame.line_size).take(height) {
            for px in row[..width * channels].chunks(channels) {
                match channels {
                    1 | 2 => data.extend_from_slice(&[px[0], px[0], px[0]]),
                    _ => data.extend_from_slice(&px[..3]),
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_png(self.width, self.height, png::ColorType::Rgb, &self.data)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn load_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        save_mask(&p, &m).unwrap();
        let back = load_mask(&p, 2).unwrap();
        assert_eq!(back, m);
        assert_eq!((back.height(), back.width()), (2, 2));
    }

    #[test]
    fn rejects_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_mask(&p, &LabelMap::new(1, 3, vec![0, 200, 5]).unwrap()).unwrap();
        match load_mask(&p, 103) {
            Err(Error::InvalidLabel { value: 200, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // IGNORE is always allowed
        save_mask(&p, &LabelMap::new(1, 2, vec![0, IGNORE]).unwrap()).unwrap();
        assert!(load_mask(&p, 103).is_ok());
    }

    #[test]
    fn rejects_missing_and_multichannel() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_mask(dir.path().join("nope.png"), 3),
            Err(Error::Io { .. })
        ));
        let p = dir.path().join("rgb.png");
        RgbImage::new(1, 1, vec![1, 2, 3]).unwrap().save(&p).unwrap();
        assert!(matches!(
            load_mask(&p, 3),
            Err(Error::NotSingleChannel { .. })
        ));
    }

    #[test]
    fn reads_palette_indices_unexpanded() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 3, 1);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(vec![0u8; 3 * 8]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 7, 3]).unwrap();
        }
        let m = decode_mask(&out).unwrap();
        assert_eq!(m.data(), &[0, 7, 3]);
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(LabelMap::new(0, 2, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn identity_remap_and_merge() {
        let m = LabelMap::new(2, 3, vec![0, 1, 2, 3, IGNORE, 1]).unwrap();
        assert_eq!(remap_labels(&m, &LabelMapping::identity(4)).unwrap(), m);
        // merge 3 ("orange") into 2 ("citrus")
        let mut merge = LabelMapping::identity(4);
        merge.insert(3, 2);
        let out = remap_labels(&m, &merge).unwrap();
        assert!(!out.data().contains(&3));
        assert_eq!(out.data(), &[0, 1, 2, 2, IGNORE, 1]);
        let mut partial = LabelMapping::identity(3);
        partial.insert(1, 1);
        assert!(matches!(
            remap_labels(&m, &partial),
            Err(Error::UnmappedLabel(3))
        ));
    }

    fn mask_strategy() -> impl Strategy<Value = LabelMap> {
        prop::collection::vec(prop_oneof![9 => 0u8..6, 1 => Just(IGNORE)], 64)
            .prop_map(|d| LabelMap::new(8, 8, d).unwrap())
    }

    fn mapping_strategy() -> impl Strategy<Value = LabelMapping> {
        prop::collection::vec(0u8..6, 6)
            .prop_map(|t| t.into_iter().enumerate().map(|(i, v)| (i as u8, v)).collect())
    }

    proptest! {
        #[test]
        fn remap_composes(m in mask_strategy(), f in mapping_strategy(), g in mapping_strategy()) {
            let twice = remap_labels(&remap_labels(&m, &f).unwrap(), &g).unwrap();
            let direct = remap_labels(&m, &g.after(&f).unwrap()).unwrap();
            prop_assert_eq!(&twice, &direct);
            prop_assert_eq!(twice.len(), m.len());
        }

        #[test]
        fn save_load_is_byte_identical(m in mask_strategy()) {
            let bytes = encode_mask(&m).unwrap();
            let back = decode_mask(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_mask(&back).unwrap(), bytes);
        }
    }
}
