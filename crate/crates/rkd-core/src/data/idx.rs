//! IDX image/label codec (the MNIST family format). Big-endian headers:
//! images carry magic 0x00000803 with dims (n, rows, cols), labels carry
//! magic 0x00000801 with dim (n). Pixels are single bytes scaled to [0,1].

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Idx(format!("truncated stream reading {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an images/labels IDX pair into a Dataset. num_classes is inferred
/// as the largest label plus one.
pub fn load_idx(images_bytes: &[u8], labels_bytes: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images_bytes, 0, "images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!(
            "bad images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32(images_bytes, 4, "image count")? as usize;
    let rows = read_u32(images_bytes, 8, "image rows")? as usize;
    let cols = read_u32(images_bytes, 12, "image cols")? as usize;
    let pixels = &images_bytes[16..];
    if pixels.len() != n * rows * cols {
        return Err(Error::Idx(format!(
            "images body holds {} bytes, expected {}",
            pixels.len(),
            n * rows * cols
        )));
    }

    let magic = read_u32(labels_bytes, 0, "labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!(
            "bad labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = read_u32(labels_bytes, 4, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Idx(format!(
            "{n_labels} labels for {n} images"
        )));
    }
    let label_bytes = &labels_bytes[8..];
    if label_bytes.len() != n {
        return Err(Error::Idx(format!(
            "labels body holds {} bytes, expected {n}",
            label_bytes.len()
        )));
    }

    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(n, rows * cols, data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(images, labels, num_classes)
}

/// Serializes a Dataset back to an IDX pair. Pixel bytes are recovered as
/// round(v * 255), which is the exact inverse of the loader's division, so
/// a load/write/load cycle is bitwise stable.
pub fn write_idx(dataset: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let (h, w) = dataset.square_geometry();
    let n = dataset.n();
    let mut images = Vec::with_capacity(16 + n * dataset.dim());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(h as u32).to_be_bytes());
    images.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in dataset.images().data() {
        images.push((v * 255.0).round() as u8);
    }

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    (images, labels)
}
