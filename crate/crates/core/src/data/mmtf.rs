//! MMTF, a little-endian container of named tensors.
//!
//! ```text
//! "MMTF"            4 bytes
//! version           u32 (= 1)
//! tensor count      u32
//! per tensor:
//!   name length     u16, then that many UTF-8 bytes
//!   dtype           u8  (1 = f64, 2 = f32, widened to f64 on read)
//!   ndim            u8
//!   dims            ndim x u64
//!   payload         product(dims) values, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

pub const MAGIC: [u8; 4] = *b"MMTF";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64 = 1,
    F32 = 2,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

pub fn encode_tensors(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    encode_tensors_as(entries, Dtype::F64)
}

/// Encodes with an explicit storage type; `F32` is lossy.
pub fn encode_tensors_as(entries: &[(String, Tensor)], dtype: Dtype) -> Result<Vec<u8>> {
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Format("too many tensors for one container".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name `{name}` longer than 65535 bytes")))?;
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::Format(format!("tensor `{name}` has more than 255 dimensions")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype as u8);
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.reserve(t.numel() * dtype.width());
        match dtype {
            Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Dtype::F32 => t
                .data()
                .iter()
                .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt {
                offset: self.pos as u64,
                msg: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a whole container; any defect rejects the entire input.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"MMTF\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for idx in 0..count {
        let start = r.pos as u64;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Corrupt {
                offset: start,
                msg: format!("tensor {idx} name is not UTF-8"),
            })?
            .to_string();
        let dtype = match r.u8("dtype")? {
            1 => Dtype::F64,
            2 => Dtype::F32,
            other => return Err(Error::Format(format!("tensor `{name}`: unknown dtype code {other}"))),
        };
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| Error::Corrupt {
                offset: r.pos as u64 - 8,
                msg: format!("dimension {d} does not fit in memory"),
            })?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.width()).map(|_| n))
            .ok_or_else(|| Error::Corrupt {
                offset: start,
                msg: format!("tensor `{name}` shape {shape:?} overflows"),
            })?;
        let payload = r.take(numel * dtype.width(), "payload")?;
        let data: Vec<f64> = match dtype {
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt {
            offset: r.pos as u64,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn write_tensor_file(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_tensors(entries)?)?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("w".into(), Tensor::from_fn(&[2, 3], |i| i as f64 * -0.1 + 1e-300)),
            ("s".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ("ü".into(), Tensor::from_fn(&[1, 1, 2, 2], |i| (i as f64).exp())),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let entries = sample();
        let back = decode_tensors(&encode_tensors(&entries).unwrap()).unwrap();
        assert_eq!(back.len(), entries.len());
        for ((na, a), (nb, b)) in entries.iter().zip(&back) {
            assert_eq!(na, nb);
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn empty_container_is_valid() {
        let bytes = encode_tensors(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode_tensors(&bytes).unwrap().is_empty());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_tensors(&[("ab".into(), Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())]).unwrap();
        assert_eq!(&bytes[..4], b"MMTF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &2u16.to_le_bytes());
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes[17], 1);
        assert_eq!(&bytes[18..26], &2u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 42);
    }

    #[test]
    fn f32_payload_is_widened() {
        let t = Tensor::new(vec![3], vec![0.5, -2.25, 3.0]).unwrap();
        let bytes = encode_tensors_as(&[("x".into(), t.clone())], Dtype::F32).unwrap();
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back[0].1, t);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_tensors(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_tensors(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_tensors(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_tensors(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_tensors(&sample()).unwrap();
        for cut in [3, 10, 13, 20, bytes.len() - 1] {
            match decode_tensors(&bytes[..cut]) {
                Err(Error::Corrupt { offset, .. }) => assert!(offset as usize <= cut),
                Err(Error::Format(_)) if cut < 4 => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            decode_tensors(&extra),
            Err(Error::Corrupt { offset, .. }) if offset as usize == bytes.len()
        ));
    }
}
