//! IDX files as distributed for MNIST: a big-endian `u32` magic (2051 for
//! images, 2049 for labels), big-endian `u32` dimensions, then unsigned bytes.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::Matrix;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Decoded image file: one row per image, pixels scaled to `p / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub height: u32,
    pub width: u32,
    pub pixels: Matrix,
}

fn header(bytes: &[u8], magic: u32, fields: usize) -> Result<Vec<u32>> {
    let need = 4 * (fields + 1);
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "stream of {} bytes has no magic number",
            bytes.len()
        )));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(Error::Format(format!("magic {found}, expected {magic}")));
    }
    if bytes.len() < need {
        return Err(Error::Length {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((1..=fields)
        .map(|k| u32::from_be_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()))
        .collect())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let expected = offset + len;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..])
}

pub fn load_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    let h = header(bytes, IMAGE_MAGIC, 3)?;
    let (n, height, width) = (h[0] as usize, h[1], h[2]);
    let d = height as usize * width as usize;
    let raw = payload(bytes, 16, n * d)?;
    let data = raw.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(ImageSet {
        height,
        width,
        pixels: Matrix::from_vec(n, d, data)?,
    })
}

pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = header(bytes, LABEL_MAGIC, 1)?;
    Ok(payload(bytes, 8, h[0] as usize)?.to_vec())
}

/// Inverse of [`load_idx_images`]; pixel values are rounded back to bytes.
pub fn write_idx_images(images: &ImageSet) -> Result<Vec<u8>> {
    let d = images.height as usize * images.width as usize;
    if images.pixels.cols() != d {
        return Err(Error::Shape(format!(
            "{} columns do not match {}x{} images",
            images.pixels.cols(),
            images.height,
            images.width
        )));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.as_slice().len());
    for v in [
        IMAGE_MAGIC,
        images.pixels.rows() as u32,
        images.height,
        images.width,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for &p in images.pixels.as_slice() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("pixel value {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Combines an image file and a label file into a dataset.
pub fn assemble(images: ImageSet, labels: &[u8], num_classes: usize) -> Result<LabeledDataset> {
    let labels = labels.iter().map(|&y| y as usize).collect();
    LabeledDataset::new(images.pixels, labels, num_classes)
}

#[derive(Debug, Clone)]
pub struct MnistSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn with_path<T>(dir: &Path, name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::config(dir.join(name).display().to_string(), other.to_string()),
    })
}

/// Reads the four standard MNIST files from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistSplit> {
    let load = |img: &str, lbl: &str| -> Result<LabeledDataset> {
        let images = with_path(dir, img, load_idx_images(&read(dir, img)?))?;
        let labels = with_path(dir, lbl, load_idx_labels(&read(dir, lbl)?))?;
        if labels.len() != images.pixels.rows() {
            return Err(Error::config(
                dir.join(lbl).display().to_string(),
                format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.pixels.rows()
                ),
            ));
        }
        with_path(dir, lbl, assemble(images, &labels, 10))
    };
    Ok(MnistSplit {
        train: load(TRAIN_IMAGES, TRAIN_LABELS)?,
        test: load(TEST_IMAGES, TEST_LABELS)?,
    })
}
