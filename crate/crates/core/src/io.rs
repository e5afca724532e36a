//! Shared file I/O: binary PGM images and little-endian binary primitives.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Write an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::input(format!(
            "pgm buffer is {} bytes, expected {}x{}",
            pixels.len(),
            width,
            height
        )));
    }
    let mut file = std::fs::File::create(path)?;
    write!(file, "P5\n{} {}\n255\n", width, height)?;
    file.write_all(pixels)?;
    Ok(())
}

/// Read an 8-bit binary PGM (P5). Returns (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    // Header: magic, width, height, maxval; '#' comments allowed.
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::input(format!("truncated pgm header: {}", path.display())));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::input(format!("not a binary pgm: {}", path.display())));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::input("bad pgm width"))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::input("bad pgm height"))?;
    let maxval: usize = fields[3]
        .parse()
        .map_err(|_| Error::input("bad pgm maxval"))?;
    if maxval != 255 {
        return Err(Error::input(format!("unsupported pgm maxval {}", maxval)));
    }
    pos += 1; // single whitespace byte after maxval
    let need = width * height;
    if data.len() < pos + need {
        return Err(Error::input(format!("pgm pixel data truncated: {}", path.display())));
    }
    Ok((width, height, data[pos..pos + need].to_vec()))
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64_slice(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_f64_vec(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    let mut out = Vec::with_capacity(count);
    for chunk in buf.chunks_exact(8) {
        out.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(out)
}

/// Check a 4-byte magic tag at the current read position.
pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::input(format!(
            "bad magic for {}: expected {:?}, got {:?}",
            what,
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}
