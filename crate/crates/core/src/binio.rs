//! Fixed-width little-endian primitives for the on-disk index formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Truncated(what.to_string()))
}

pub fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f32<R: Read>(r: &mut R, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::Truncated(format!("{what}: invalid utf-8")))
}

pub fn check_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found, "magic")?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Peek the 4-byte magic of a file without interpreting the rest.
pub fn file_magic<P: AsRef<std::path::Path>>(path: P) -> Result<[u8; 4]> {
    let mut f = std::fs::File::open(path)?;
    let mut found = [0u8; 4];
    read_exact(&mut f, &mut found, "magic")?;
    Ok(found)
}
