//! Binary dumps.
//!
//! Dense (`LGT1`): magic, `u8` order, `u64` extents, `u8` scalar tag (8 = complex64,
//! 16 = complex128), row-major payload, CRC32 of everything before it.
//! Tucker (`LGK1`): magic, `u8` order, `u64` extents, `u64` ranks, `u8` tag, core,
//! one row-major `N_d x R_d` block per factor, CRC32. All little-endian.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::tensor::{default_labels, TuckerTensor};

pub const DENSE_MAGIC: &[u8; 4] = b"LGT1";
pub const TUCKER_MAGIC: &[u8; 4] = b"LGK1";
const TAG_C64: u8 = 8;
const TAG_C128: u8 = 16;

fn put_c(out: &mut Vec<u8>, z: C64) {
    out.extend_from_slice(&z.re.to_le_bytes());
    out.extend_from_slice(&z.im.to_le_bytes());
}

fn finish(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn encode_dense(t: &ArrayD<C64>) -> Result<Vec<u8>> {
    let nd = u8::try_from(t.ndim()).map_err(|_| Error::Format("too many dimensions".into()))?;
    let mut out = Vec::with_capacity(10 + 8 * t.ndim() + 16 * t.len());
    out.extend_from_slice(DENSE_MAGIC);
    out.push(nd);
    for &n in t.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.push(TAG_C128);
    for &z in t.as_standard_layout().iter() {
        put_c(&mut out, z);
    }
    Ok(finish(out))
}

pub fn encode_tucker(t: &TuckerTensor) -> Result<Vec<u8>> {
    let nd = u8::try_from(t.ndim()).map_err(|_| Error::Format("too many dimensions".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(TUCKER_MAGIC);
    out.push(nd);
    for n in t.dims() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for r in t.ranks() {
        out.extend_from_slice(&(r as u64).to_le_bytes());
    }
    out.push(TAG_C128);
    for &z in t.core.as_standard_layout().iter() {
        put_c(&mut out, z);
    }
    for f in &t.factors {
        for i in 0..f.nrows() {
            for j in 0..f.ncols() {
                put_c(&mut out, f[(i, j)]);
            }
        }
    }
    Ok(finish(out))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format("extent does not fit in memory".into()))
    }

    fn scalar(&mut self, tag: u8) -> Result<C64> {
        Ok(match tag {
            TAG_C128 => {
                let b = self.take(16)?;
                C64::new(f64::from_le_bytes(b[..8].try_into().unwrap()), f64::from_le_bytes(b[8..].try_into().unwrap()))
            }
            _ => {
                let b = self.take(8)?;
                C64::new(
                    f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(b[4..].try_into().unwrap()) as f64,
                )
            }
        })
    }
}

/// Checks the trailing CRC and the magic; returns the body reader.
fn open<'a>(buf: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
    if buf.len() < 9 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("CRC32 mismatch".into()));
    }
    if &body[..4] != magic {
        return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    Ok(Reader { buf: body, pos: 4 })
}

fn check_tag(tag: u8) -> Result<u8> {
    match tag {
        TAG_C64 | TAG_C128 => Ok(tag),
        t => Err(Error::Format(format!("unknown scalar tag {t}"))),
    }
}

fn check_end(r: &Reader) -> Result<()> {
    if r.pos != r.buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(())
}

fn checked_product(v: &[usize]) -> Result<usize> {
    v.iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Error::Format("extents overflow".into()))
}

pub fn decode_dense(buf: &[u8]) -> Result<ArrayD<C64>> {
    let mut r = open(buf, DENSE_MAGIC)?;
    let nd = r.u8()? as usize;
    let shape: Vec<usize> = (0..nd).map(|_| r.u64()).collect::<Result<_>>()?;
    let tag = check_tag(r.u8()?)?;
    let n = checked_product(&shape)?;
    if n.saturating_mul(tag as usize) != r.buf.len() - r.pos {
        return Err(Error::Format("payload size does not match the extents".into()));
    }
    let data: Vec<C64> = (0..n).map(|_| r.scalar(tag)).collect::<Result<_>>()?;
    check_end(&r)?;
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("size checked"))
}

pub fn decode_tucker(buf: &[u8]) -> Result<TuckerTensor> {
    let mut r = open(buf, TUCKER_MAGIC)?;
    let nd = r.u8()? as usize;
    let dims: Vec<usize> = (0..nd).map(|_| r.u64()).collect::<Result<_>>()?;
    let ranks: Vec<usize> = (0..nd).map(|_| r.u64()).collect::<Result<_>>()?;
    let tag = check_tag(r.u8()?)?;
    let nc = checked_product(&ranks)?;
    let nf = dims.iter().zip(&ranks).map(|(a, b)| a.saturating_mul(*b)).fold(0usize, |a, b| a.saturating_add(b));
    if nc.saturating_add(nf).saturating_mul(tag as usize) != r.buf.len() - r.pos {
        return Err(Error::Format("payload size does not match extents and ranks".into()));
    }
    let core: Vec<C64> = (0..nc).map(|_| r.scalar(tag)).collect::<Result<_>>()?;
    let mut factors = Vec::with_capacity(nd);
    for (&n, &k) in dims.iter().zip(&ranks) {
        let vals: Vec<C64> = (0..n * k).map(|_| r.scalar(tag)).collect::<Result<_>>()?;
        factors.push(CMat::from_row_slice(n, k, &vals));
    }
    check_end(&r)?;
    TuckerTensor::new(ArrayD::from_shape_vec(IxDyn(&ranks), core).expect("size checked"), factors, default_labels(nd))
}

pub fn write_dense(path: &Path, t: &ArrayD<C64>) -> Result<()> {
    fs::write(path, encode_dense(t)?)?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<ArrayD<C64>> {
    decode_dense(&fs::read(path)?)
}

pub fn write_tucker(path: &Path, t: &TuckerTensor) -> Result<()> {
    fs::write(path, encode_tucker(t)?)?;
    Ok(())
}

pub fn read_tucker(path: &Path) -> Result<TuckerTensor> {
    decode_tucker(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]).unwrap();
        let b = encode_dense(&t).unwrap();
        assert_eq!(&b[..4], b"LGT1");
        assert_eq!(b[4], 2);
        assert_eq!(u64::from_le_bytes(b[13..21].try_into().unwrap()), 2);
        assert_eq!(b[21], 16);
        assert_eq!(b.len(), 4 + 1 + 16 + 1 + 32 + 4);
        assert_eq!(decode_dense(&b).unwrap(), t);
    }

    #[test]
    fn corrupt_byte_detected() {
        let t = ArrayD::from_shape_vec(IxDyn(&[2]), vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]).unwrap();
        let mut b = encode_dense(&t).unwrap();
        b[20] ^= 1;
        assert!(matches!(decode_dense(&b), Err(Error::Format(_))));
    }
}
