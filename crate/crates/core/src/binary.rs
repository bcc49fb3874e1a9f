//! Little-endian binary containers shared by the catalog, the precomputed
//! question features and the persisted index/checkpoint files.
//!
//! Embedding matrix layout: `b"ELQE"`, `u32` rows, `u32` dim, then
//! `rows * dim` row-major `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{ElqError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ELQE";

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ElqError::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| ElqError::io(path, e))
}

pub(crate) fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4]) -> std::io::Result<()> {
    w.write_all(magic)
}

pub(crate) fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| ElqError::Format(format!("{what}: truncated header")))?;
    if &buf != magic {
        return Err(ElqError::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn truncated(what: &str) -> impl Fn(std::io::Error) -> ElqError + '_ {
    move |e| ElqError::Format(format!("{what}: {e}"))
}

pub(crate) fn checked_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| ElqError::InvalidInput(format!("{what} {value} exceeds u32")))
}

/// Writes one `ELQE` block.
pub fn write_embedding_block<W: Write>(
    w: &mut W,
    rows: usize,
    dim: usize,
    data: &[f32],
) -> Result<()> {
    if data.len() != rows * dim {
        return Err(ElqError::DimensionMismatch(format!(
            "{} values for {rows}x{dim}",
            data.len()
        )));
    }
    let io = |e| ElqError::Format(format!("write embeddings: {e}"));
    write_magic(w, EMBEDDING_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(checked_u32(rows, "row count")?)
        .map_err(io)?;
    w.write_u32::<LittleEndian>(checked_u32(dim, "dim")?)
        .map_err(io)?;
    for &v in data {
        w.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    Ok(())
}

/// Reads one `ELQE` block, returning `(rows, dim, data)`.
pub fn read_embedding_block<R: Read>(r: &mut R) -> Result<(usize, usize, Vec<f32>)> {
    const WHAT: &str = "embedding block";
    read_magic(r, EMBEDDING_MAGIC, WHAT)?;
    let rows = r.read_u32::<LittleEndian>().map_err(truncated(WHAT))? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(truncated(WHAT))? as usize;
    let len = rows
        .checked_mul(dim)
        .ok_or_else(|| ElqError::Format(format!("{WHAT}: {rows}x{dim} overflows")))?;
    let mut data = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| ElqError::Format(format!("{WHAT}: expected {len} values ({rows}x{dim})")))?;
    Ok((rows, dim, data))
}

pub fn write_embedding_file(path: &Path, rows: usize, dim: usize, data: &[f32]) -> Result<()> {
    let mut w = create(path)?;
    write_embedding_block(&mut w, rows, dim, data)?;
    w.flush().map_err(|e| ElqError::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = open(path)?;
    let block = read_embedding_block(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| ElqError::io(path, e))? != 0 {
        return Err(ElqError::Format(format!(
            "{}: trailing bytes after embedding block",
            path.display()
        )));
    }
    Ok(block)
}

pub(crate) fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let len = u32::try_from(s.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "string too long"))?;
    w.write_u32::<LittleEndian>(len)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(truncated(what))? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated(what))?;
    String::from_utf8(buf).map_err(|_| ElqError::Format(format!("{what}: invalid utf-8")))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(values.len() as u32)?;
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, what: &str) -> Result<Vec<f64>> {
    let len = r.read_u32::<LittleEndian>().map_err(truncated(what))? as usize;
    let mut out = vec![0f64; len];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(truncated(what))?;
    Ok(out)
}
