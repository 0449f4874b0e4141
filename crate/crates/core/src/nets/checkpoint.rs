//! Binary checkpoint format.
//!
//! ```text
//! "MTRD"              4 bytes magic
//! version             u16 LE
//! role tag            u8   (0 student, 1 clean teacher, 2 robust teacher)
//! spec fingerprint    u64 LE
//! layer count         u32 LE
//! per layer, per tensor (weight then bias):
//!   rank              u8
//!   dims              rank x u32 LE
//!   payload           product(dims) x f64 LE
//! ```

use std::fs;
use std::path::Path;

use super::params::{NetworkParams, ParamSet};
use super::spec::{NetworkSpec, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MTRD";
pub const FORMAT_VERSION: u16 = 1;

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(params.role().tag());
    out.extend_from_slice(&params.spec().fingerprint().to_le_bytes());
    out.extend_from_slice(&(params.params().layers.len() as u32).to_le_bytes());
    for layer in &params.params().layers {
        for t in [&layer.weight, &layer.bias] {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Header fields of a checkpoint, readable without knowing the spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u16,
    pub role: Role,
    pub fingerprint: u64,
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an MTRD checkpoint".into()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }
    let tag = r.u8("role")?;
    let role = Role::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown role tag {tag}")))?;
    let fingerprint = r.u64("fingerprint")?;
    Ok(CheckpointHeader { version, role, fingerprint })
}

pub fn peek_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { buf: bytes, pos: 0 })
}

pub fn from_bytes(bytes: &[u8], spec: &NetworkSpec) -> Result<NetworkParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let expected = spec.fingerprint();
    if header.fingerprint != expected {
        return Err(Error::Fingerprint { found: header.fingerprint, expected });
    }
    let count = r.u32("layer count")? as usize;
    if count != spec.layers.len() {
        return Err(Error::Checkpoint(format!(
            "{count} layers in file, spec has {}",
            spec.layers.len()
        )));
    }
    let mut params = ParamSet::zeros_like(spec);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        for t in [&mut layer.weight, &mut layer.bias] {
            let rank = r.u8("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: tensor shape {dims:?} in file, spec expects {:?}",
                    t.shape()
                )));
            }
            let payload = r.take(t.len() * 8, "tensor payload")?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *t = Tensor::new(dims, data)
                .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    NetworkParams::from_parts(spec.clone(), header.role, params)
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<NetworkParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NetworkParams {
        let spec = NetworkSpec::mlp(2, &[8, 8], 3).unwrap();
        NetworkParams::init(&spec, Role::RobustTeacher, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.mtrd");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path, p.spec()).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.role(), Role::RobustTeacher);
        assert_eq!(to_bytes(&p), to_bytes(&q));
    }

    #[test]
    fn header_layout() {
        let p = sample();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"MTRD");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(bytes[6], 2);
        let h = peek_header(&bytes).unwrap();
        assert_eq!(h.fingerprint, p.spec().fingerprint());
    }

    #[test]
    fn wrong_spec_is_fingerprint_error() {
        let p = sample();
        let other = NetworkSpec::mlp(2, &[8, 4], 3).unwrap();
        let err = from_bytes(&to_bytes(&p), &other).unwrap_err();
        assert!(matches!(err, Error::Fingerprint { .. }));
    }

    #[test]
    fn truncation_and_corruption_are_errors() {
        let p = sample();
        let bytes = to_bytes(&p);
        for cut in [0, 3, 7, 20, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut], p.spec()), Err(Error::Checkpoint(_))));
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad, p.spec()), Err(Error::CheckpointVersion { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra, p.spec()).is_err());
    }
}
