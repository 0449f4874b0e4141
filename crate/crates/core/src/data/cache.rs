//! Native dataset cache.
//!
//! ```text
//! "MTDS"      magic
//! version     u16 LE
//! split       u8
//! classes     u32 LE
//! rank        u8, then rank x u32 LE feature dims (leading dim is N)
//! labels      N x u32 LE
//! features    f64 LE payload
//! ```

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MTDS";
const VERSION: u16 = 1;

pub fn to_bytes(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(d.split().tag());
    out.extend_from_slice(&(d.classes() as u32).to_le_bytes());
    out.push(d.features().shape().len() as u8);
    for &dim in d.features().shape() {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &l in d.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for v in d.features().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let err = |m: &str| Error::parse("dataset cache", m);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| err("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(err("bad magic"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let split = Split::from_tag(take(1)?[0]).ok_or_else(|| err("unknown split tag"))?;
    let classes = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let rank = take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
    }
    let n = *shape.first().ok_or_else(|| err("rank 0 features"))?;
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| err("dimension overflow"))?;
    let labels = take(n.checked_mul(4).ok_or_else(|| err("dimension overflow"))?)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let data = take(count.checked_mul(8).ok_or_else(|| err("dimension overflow"))?)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Dataset::new(Tensor::new(shape, data)?, labels, classes, split)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(d)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
