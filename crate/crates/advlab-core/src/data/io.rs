//! The two on-disk formats: CIFAR-style 3073-byte records and IDX.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::diffcore::{Element, Tensor};
use crate::error::{Error, Result};

const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;
const CIFAR_CLASSES: usize = 10;

/// Read records of 1 label byte + 3072 pixel bytes (three 32x32 planes,
/// row-major), scaling pixels by 1/255.
pub fn load_cifar_binary<T: Element>(path: &Path) -> Result<Dataset<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % CIFAR_RECORD != 0 {
        let full = bytes.len() / CIFAR_RECORD;
        return Err(Error::format(
            "cifar record",
            format!(
                "file {} truncated at byte {} (record {} incomplete)",
                path.display(),
                bytes.len(),
                full
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let scale = 1.0 / 255.0;
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format(
                "cifar label",
                format!("record {i}: label byte {label} is not a class in 0..10"),
            ));
        }
        labels.push(label);
        data.extend(record[1..].iter().map(|&b| T::from_f64(b as f64 * scale)));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, CIFAR_CLASSES)
}

/// Write a dataset of 3x32x32 images back to the record format. Pixels are
/// quantized to bytes by rounding, so a loaded file writes back
/// byte-identical.
pub fn write_cifar_binary<T: Element>(path: &Path, dataset: &Dataset<T>) -> Result<()> {
    if dataset.sample_shape() != [3, 32, 32] {
        return Err(Error::ShapeMismatch {
            context: "cifar writer".into(),
            expected: "[3, 32, 32] samples".into(),
            actual: format!("{:?}", dataset.sample_shape()),
        });
    }
    let mut bytes = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    let pixels = dataset.images.data();
    for i in 0..dataset.len() {
        bytes.push(dataset.labels[i] as u8);
        for &v in &pixels[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS] {
            bytes.push((v.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Payload of an IDX file: labels for 1-dimensional files, images otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxContent<T: Element> {
    Labels(Vec<usize>),
    /// [n, 1, h, w] for 3-dimensional files, [n, c, h, w] for 4-dimensional.
    Images(Tensor<T>),
}

/// Parse an IDX file: magic 0x00 0x00, type code 0x08 (unsigned byte), a
/// dimension-count byte, big-endian u32 sizes, then the raw payload.
/// Image payloads are scaled by 1/255.
pub fn load_idx<T: Element>(path: &Path) -> Result<IdxContent<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::format("idx header", "file shorter than 4 bytes"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(
            "idx magic",
            format!("expected 0x00 0x00, got {:#04x} {:#04x}", bytes[0], bytes[1]),
        ));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(
            "idx type code",
            format!("expected 0x08 (unsigned byte), got {:#04x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if !(1..=4).contains(&ndims) {
        return Err(Error::format(
            "idx dimension count",
            format!("expected 1 to 4 dimensions, got {ndims}"),
        ));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format(
            "idx dimension sizes",
            format!("header needs {header} bytes, file has {}", bytes.len()),
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let at = 4 + 4 * d;
        dims.push(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize);
    }
    let expect: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expect {
        return Err(Error::format(
            "idx payload",
            format!("dimensions {dims:?} need {expect} bytes, found {}", payload.len()),
        ));
    }
    if ndims == 1 {
        return Ok(IdxContent::Labels(
            payload.iter().map(|&b| b as usize).collect(),
        ));
    }
    let scale = 1.0 / 255.0;
    let data: Vec<T> = payload
        .iter()
        .map(|&b| T::from_f64(b as f64 * scale))
        .collect();
    let shape = match ndims {
        2 => vec![dims[0], 1, 1, dims[1]],
        3 => vec![dims[0], 1, dims[1], dims[2]],
        _ => dims,
    };
    Ok(IdxContent::Images(Tensor::new(shape, data)?))
}

/// Write an IDX file from raw dimension sizes and payload bytes.
pub fn write_idx(path: &Path, dims: &[u32], payload: &[u8]) -> Result<()> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::config(format!(
            "idx writer takes 1 to 4 dimensions, got {}",
            dims.len()
        )));
    }
    let expect: usize = dims.iter().map(|&d| d as usize).product();
    if payload.len() != expect {
        return Err(Error::ShapeMismatch {
            context: "idx writer payload".into(),
            expected: format!("{expect} bytes"),
            actual: format!("{} bytes", payload.len()),
        });
    }
    let mut bytes = vec![0u8, 0, 0x08, dims.len() as u8];
    for &d in dims {
        bytes.extend_from_slice(&d.to_be_bytes());
    }
    bytes.extend_from_slice(payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Combine an IDX image file and an IDX label file into a dataset.
pub fn load_idx_dataset<T: Element>(
    images_path: &Path,
    labels_path: &Path,
    classes: usize,
) -> Result<Dataset<T>> {
    let images = match load_idx::<T>(images_path)? {
        IdxContent::Images(t) => t,
        IdxContent::Labels(_) => {
            return Err(Error::format(
                "idx images",
                format!("{} holds labels, not images", images_path.display()),
            ))
        }
    };
    let labels = match load_idx::<T>(labels_path)? {
        IdxContent::Labels(l) => l,
        IdxContent::Images(_) => {
            return Err(Error::format(
                "idx labels",
                format!("{} holds images, not labels", labels_path.display()),
            ))
        }
    };
    Dataset::new(images, labels, classes)
}
