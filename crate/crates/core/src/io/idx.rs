//! IDX image/label files (big-endian headers) and input quantization.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::QuantTensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;

/// One quantized input with its ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub image: QuantTensor,
    pub label: u8,
}

/// Raw grayscale images paired with labels, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them when `n` exceeds the size).
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }

    pub fn quantized(&self) -> Vec<LabeledImage> {
        self.images
            .iter()
            .zip(&self.labels)
            .map(|(pixels, &label)| LabeledImage {
                image: quantize_pixels(pixels, self.rows, self.cols),
                label,
            })
            .collect()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let idx_err = |path: &Path, detail: String| Error::Idx {
        path: path.to_path_buf(),
        detail,
    };

    let img = read(images_path)?;
    match be_u32(&img, 0) {
        Some(IDX_IMAGES_MAGIC) => {}
        other => {
            return Err(idx_err(
                images_path,
                format!("image magic {other:?}, expected {IDX_IMAGES_MAGIC:#010x}"),
            ))
        }
    }
    let (Some(count), Some(rows), Some(cols)) =
        (be_u32(&img, 4), be_u32(&img, 8), be_u32(&img, 12))
    else {
        return Err(idx_err(images_path, "truncated header".into()));
    };
    let (count, rows, cols) = (count as usize, rows as usize, cols as usize);
    let pixels = &img[16..];
    if pixels.len() != count * rows * cols {
        return Err(idx_err(
            images_path,
            format!(
                "{} pixel bytes for {count} images of {rows}x{cols}",
                pixels.len()
            ),
        ));
    }

    let lbl = read(labels_path)?;
    match be_u32(&lbl, 0) {
        Some(IDX_LABELS_MAGIC) => {}
        other => {
            return Err(idx_err(
                labels_path,
                format!("label magic {other:?}, expected {IDX_LABELS_MAGIC:#010x}"),
            ))
        }
    }
    let Some(label_count) = be_u32(&lbl, 4) else {
        return Err(idx_err(labels_path, "truncated header".into()));
    };
    let labels = lbl[8..].to_vec();
    if labels.len() != label_count as usize {
        return Err(idx_err(
            labels_path,
            format!("{} label bytes, header says {label_count}", labels.len()),
        ));
    }
    if labels.len() != count {
        return Err(idx_err(
            labels_path,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(idx_err(labels_path, format!("label {bad} outside 0..=9")));
    }

    let images = if rows * cols == 0 {
        vec![Vec::new(); count]
    } else {
        pixels
            .chunks_exact(rows * cols)
            .map(<[u8]>::to_vec)
            .collect()
    };
    Ok(IdxDataset {
        rows,
        cols,
        images,
        labels,
    })
}

/// Serializes images and labels in IDX form.
pub fn idx_bytes(
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend((images.len() as u32).to_be_bytes());
    img.extend((rows as u32).to_be_bytes());
    img.extend((cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend((labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    (img, lbl)
}

pub fn save_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
    labels: &[u8],
) -> Result<()> {
    let (img, lbl) = idx_bytes(rows, cols, images, labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lbl).map_err(|e| Error::io(labels_path, e))
}

/// Maps a pixel in [0, 255] to `round(p / 255 * 127)` with dec 0.
#[inline]
pub fn quantize_pixel(p: u8) -> i8 {
    // p * 127 / 255 never lands on a half, so the rounding direction is moot.
    ((u32::from(p) * 127 + 127) / 255) as i8
}

fn quantize_pixels(pixels: &[u8], rows: usize, cols: usize) -> QuantTensor {
    QuantTensor::new(
        vec![rows, cols, 1],
        pixels.iter().map(|&p| quantize_pixel(p)).collect(),
        0,
    )
    .expect("pixel count matches rows * cols")
}

/// Quantizes a 28x28 grayscale image into a 28x28x1 tensor with dec 0.
pub fn quantize_input(pixels: &[u8]) -> QuantTensor {
    assert_eq!(
        pixels.len(),
        IMAGE_SIDE * IMAGE_SIDE,
        "expected a 28x28 image"
    );
    quantize_pixels(pixels, IMAGE_SIDE, IMAGE_SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_quantization() {
        assert_eq!(quantize_pixel(0), 0);
        assert_eq!(quantize_pixel(255), 127);
        assert_eq!(quantize_pixel(128), 64);
        for p in 0..=255u8 {
            let exact = (f64::from(p) / 255.0 * 127.0).round() as i8;
            assert_eq!(quantize_pixel(p), exact, "p={p}");
        }
        assert!((0..255u8).all(|p| quantize_pixel(p) <= quantize_pixel(p + 1)));
    }

    #[test]
    fn one_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
        save_idx(&ip, &lp, 28, 28, std::slice::from_ref(&pixels), &[7]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.images[0], pixels);
        assert_eq!(ds.labels, vec![7]);
        let q = ds.quantized();
        assert_eq!(q[0].image.shape(), &[28, 28, 1]);
        assert_eq!(q[0].image.values()[255], 127);
    }

    #[test]
    fn count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        save_idx(&ip, &lp, 2, 2, &[vec![0; 4], vec![1; 4]], &[1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Idx { .. })));
        // swapped files: magic mismatch
        assert!(matches!(load_idx(&lp, &ip), Err(Error::Idx { .. })));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lp),
            Err(Error::Io { .. })
        ));
    }
}
