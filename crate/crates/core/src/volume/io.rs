//! CAV1 / CAP1 binary formats and 16-bit PGM export.
//!
//! CAV1: `b"CAV1"`, u32 ndim, ndim x u32 dims, then prod(dims) x f64.
//! CAP1: `b"CAP1"`, u32 ndim, ndim x u32 dims, u32 K, then prod(dims) x K x f64
//! with the class index varying fastest. All integers and floats are
//! little-endian.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ProbMap, ScalarImage, LOAD_SUM_TOLERANCE};
use crate::error::{Error, Result};

const VOLUME_MAGIC: [u8; 4] = *b"CAV1";
const PROBMAP_MAGIC: [u8; 4] = *b"CAP1";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn encode_header(magic: [u8; 4], dims: &[usize], buf: &mut Vec<u8>) {
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn encode_f64s(values: &[f64], buf: &mut Vec<u8>) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte slice that reports truncation against the total size
/// the header promised.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let b = self.take(4)?;
        let found = [b[0], b[1], b[2], b[3]];
        if found != expected {
            return Err(Error::MagicMismatch { expected, found });
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u32()? as usize;
        if !(1..=8).contains(&ndim) {
            return Err(Error::Dimension(format!(
                "unsupported ndim {ndim} in header"
            )));
        }
        (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    /// Reads exactly `count` f64 values that must end the buffer.
    fn trailing_f64s(&mut self, count: usize, dims: &[usize]) -> Result<Vec<f64>> {
        let need = count
            .checked_mul(8)
            .ok_or_else(|| Error::Dimension(format!("dims {dims:?} overflow")))?;
        let remaining = self.bytes.len() - self.pos;
        if remaining > need {
            return Err(Error::PayloadMismatch {
                dims: dims.to_vec(),
                payload: remaining / 8,
            });
        }
        let raw = self.take(need)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_volume(img: &ScalarImage, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    encode_header(VOLUME_MAGIC, img.dims(), &mut buf);
    encode_f64s(img.data(), &mut buf);
    write_file(path.as_ref(), &buf)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<ScalarImage> {
    let bytes = read_file(path.as_ref())?;
    decode_volume(&bytes)
}

fn decode_volume(bytes: &[u8]) -> Result<ScalarImage> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(VOLUME_MAGIC)?;
    let dims = r.dims()?;
    let count = dims.iter().product();
    let data = r.trailing_f64s(count, &dims)?;
    ScalarImage::new(dims, data)
}

pub fn save_probmap(p: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    encode_header(PROBMAP_MAGIC, p.dims(), &mut buf);
    buf.extend_from_slice(&(p.num_classes() as u32).to_le_bytes());
    encode_f64s(p.data(), &mut buf);
    write_file(path.as_ref(), &buf)
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    let bytes = read_file(path.as_ref())?;
    decode_probmap(&bytes)
}

fn decode_probmap(bytes: &[u8]) -> Result<ProbMap> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(PROBMAP_MAGIC)?;
    let dims = r.dims()?;
    let k = r.u32()? as usize;
    let count = dims
        .iter()
        .product::<usize>()
        .checked_mul(k)
        .ok_or_else(|| Error::Dimension(format!("dims {dims:?} x {k} overflow")))?;
    let data = r.trailing_f64s(count, &dims)?;
    ProbMap::with_tolerance(dims, k, data, LOAD_SUM_TOLERANCE)
}

/// Maps intensities linearly onto `0..=65535`, rounding half up. A constant
/// image maps to all zeros.
pub(crate) fn rescale_u16(img: &ScalarImage) -> Vec<u16> {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    img.data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 65535.0 + 0.5).floor().min(65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

/// Writes a 2-D image as a binary 16-bit PGM (P5, big-endian samples).
pub fn export_pgm(img: &ScalarImage, path: impl AsRef<Path>) -> Result<()> {
    let &[rows, cols] = img.dims() else {
        return Err(Error::Dimension(format!(
            "PGM export needs a 2-D image, got dims {:?}",
            img.dims()
        )));
    };
    let mut buf = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for s in rescale_u16(img) {
        buf.extend_from_slice(&s.to_be_bytes());
    }
    write_file(path.as_ref(), &buf)
}
