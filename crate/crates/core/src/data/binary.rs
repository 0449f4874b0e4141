//! IDX (MNIST-style) and CIFAR binary parsers. Pixel bytes map to `[0, 1]`
//! by dividing by 255.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

/// Parse a big-endian IDX file holding unsigned bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::parse("idx", format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != IDX_UBYTE || bytes[3] == 0 {
        return Err(Error::parse(
            "idx",
            format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3]),
        ));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::parse("idx", "truncated dimension header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse("idx", "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != count {
        return Err(Error::parse(
            "idx",
            format!("payload is {} bytes, dims {dims:?} need {count}", payload.len()),
        ));
    }
    Ok(IdxArray { dims, data: payload.to_vec() })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Build a dataset from an IDX image file (magic `0x00000803`) and label file
/// (magic `0x00000801`). Images become `[N, 1, rows, cols]`.
pub fn idx_dataset(images: &IdxArray, labels: &IdxArray, classes: Option<usize>, split: Split) -> Result<Dataset> {
    if images.dims.len() != 3 {
        return Err(Error::parse("idx images", format!("expected 3 dims, got {:?}", images.dims)));
    }
    if labels.dims.len() != 1 {
        return Err(Error::parse("idx labels", format!("expected 1 dim, got {:?}", labels.dims)));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::parse("idx", format!("{n} images but {} labels", labels.dims[0])));
    }
    let y: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = classes.unwrap_or_else(|| y.iter().max().map_or(2, |m| (m + 1).max(2)));
    let x = images.data.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Tensor::new(vec![n, 1, images.dims[1], images.dims[2]], x)?;
    Dataset::new(features, y, classes, split)
}

/// Load an IDX image/label file pair, optionally keeping only the first `subset` examples.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: Option<usize>,
    subset: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let img = parse_idx(&read(images.as_ref())?)?;
    let lab = parse_idx(&read(labels.as_ref())?)?;
    let d = idx_dataset(&img, &lab, classes, split)?;
    match subset {
        Some(k) => d.take(k),
        None => Ok(d),
    }
}

/// Record layout of a CIFAR binary batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    /// 1 label byte + 3072 pixel bytes, 10 classes.
    Cifar10,
    /// coarse label byte + fine label byte + 3072 pixel bytes, 100 fine classes.
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Parse CIFAR binary records into `[N, 3, 32, 32]` features.
pub fn parse_cifar_binary(bytes: &[u8], variant: CifarVariant, subset: Option<usize>, split: Split) -> Result<Dataset> {
    let record = variant.label_bytes() + CIFAR_PIXELS;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(Error::parse(
            "cifar",
            format!("{} bytes is not a positive multiple of the {record}-byte record", bytes.len()),
        ));
    }
    let total = bytes.len() / record;
    let n = subset.map_or(total, |k| k.min(total));
    let mut labels = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * CIFAR_PIXELS);
    for rec in bytes.chunks_exact(record).take(n) {
        labels.push(rec[variant.label_bytes() - 1] as usize);
        x.extend(rec[variant.label_bytes()..].iter().map(|&b| b as f64 / 255.0));
    }
    let features = Tensor::new(vec![n, 3, 32, 32], x)?;
    Dataset::new(features, labels, variant.classes(), split)
}

pub fn load_cifar_binary(
    path: impl AsRef<Path>,
    variant: CifarVariant,
    subset: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    parse_cifar_binary(&read(path.as_ref())?, variant, subset, split)
}
