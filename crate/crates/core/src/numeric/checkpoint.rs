//! Binary model checkpoint: versioned magic header, vocabulary fingerprints,
//! then each parameter as (name, shape, row-major float64 payload).
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic     8 bytes  b"NTAGCKPT"
//! version   u32
//! word/char/tag vocabulary hashes   3 x u64
//! n_params  u32
//! per parameter: name_len u32, name utf8, rows u64, cols u64, rows*cols f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NTAGCKPT";
const VERSION: u32 = 1;

/// FNV-1a fingerprint over a sequence of strings, with a separator byte so
/// ["ab","c"] and ["a","bc"] hash differently.
pub fn fnv1a_strings<'a>(items: impl IntoIterator<Item = &'a str>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut step = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for s in items {
        for b in s.as_bytes() {
            step(*b);
        }
        step(0xff);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabHashes {
    pub word: u64,
    pub chars: u64,
    pub tags: u64,
}

pub fn save_checkpoint(path: &Path, params: &ParamSet, hashes: VocabHashes) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params, hashes)
}

pub fn write_checkpoint(w: &mut impl Write, params: &ParamSet, hashes: VocabHashes) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&hashes.word.to_le_bytes())?;
    w.write_all(&hashes.chars.to_le_bytes())?;
    w.write_all(&hashes.tags.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for v in &p.value.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Serialize to an in-memory buffer (used to retain the best-dev snapshot).
pub fn checkpoint_bytes(params: &ParamSet, hashes: VocabHashes) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, hashes)?;
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, VocabHashes)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    read_checkpoint(&mut r)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Vec<(String, Tensor)>, VocabHashes)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hashes = VocabHashes { word: read_u64(r)?, chars: read_u64(r)?, tags: read_u64(r)? };
    let n_params = read_u32(r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut values = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.push((name, Tensor::from_values(rows, cols, values)?));
    }
    Ok((params, hashes))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
