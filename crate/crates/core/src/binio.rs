//! Little-endian primitives shared by the checkpoint and dataset formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

/// Reads a length-prefixed vector, refusing lengths above `limit`.
pub(crate) fn read_f64s(r: &mut impl Read, limit: usize) -> Result<Vec<f64>> {
    let n = read_len(r, limit)?;
    (0..n).map(|_| read_f64(r)).collect()
}

pub(crate) fn read_len(r: &mut impl Read, limit: usize) -> Result<usize> {
    let n = read_u64(r)?;
    if n > limit as u64 {
        return Err(Error::Format(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n as usize)
}

pub(crate) fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_len(r, 1 << 16)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid utf-8 string".into()))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let got = read_array::<8>(r)?;
    if &got != magic {
        return Err(Error::Format("bad magic bytes".into()));
    }
    Ok(())
}
