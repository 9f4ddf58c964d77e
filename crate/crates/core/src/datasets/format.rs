//! Single-file dataset container.
//!
//! Layout (little endian): 8-byte magic, 1-byte version, `u32` pixel max
//! (0 when the data has no pixel range), `u32` channels, height, width,
//! `u64` train/validation/test counts, then the raw `f32` values of the three
//! splits in order.

use std::fs;
use std::path::Path;

use super::{DatasetSplit, Samples};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"EQGDATA\0";
pub const DATASET_VERSION: u8 = 1;

pub fn write_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    let (c, h, w) = split.image_shape;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.push(DATASET_VERSION);
    out.extend_from_slice(&split.pixel_max.unwrap_or(0).to_le_bytes());
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in [&split.train, &split.validation, &split.test] {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    }
    for s in [&split.train, &split.validation, &split.test] {
        for v in s.raw() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("dataset file", "truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a container written by [`write_dataset`]. The dataset name is taken
/// from the file stem.
pub fn read_dataset(path: &Path) -> Result<DatasetSplit> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != DATASET_MAGIC {
        return Err(Error::format("dataset file", "bad magic header"));
    }
    let version = cur.take(1)?[0];
    if version != DATASET_VERSION {
        return Err(Error::format("dataset file", format!("unsupported version {version}")));
    }
    let pixel_max = match cur.u32()? {
        0 => None,
        m => Some(m),
    };
    let shape = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    let counts = [cur.u64()?, cur.u64()?, cur.u64()?];
    let dim = shape.0 * shape.1 * shape.2;
    let mut splits = Vec::with_capacity(3);
    for n in counts {
        let raw = cur
            .take(n as usize * dim * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        splits.push(Samples::new(shape, pixel_max, raw)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("dataset file", "trailing bytes after payload"));
    }
    let test = splits.pop().expect("three splits");
    let validation = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(DatasetSplit {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        train,
        validation,
        test,
        image_shape: shape,
        pixel_max,
        train_groups: None,
        linear_gaussian: None,
    })
}
