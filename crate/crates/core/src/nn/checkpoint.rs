//! "EGMW" named-tensor checkpoint files.
//!
//! Layout, all little-endian: magic `EGMW`, version `u32`, tensor count
//! `u32`, then per tensor: name length `u32`, UTF-8 name, rank `u32`,
//! `rank` dims as `u64`, and the raw `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::binio::{write_f32s, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"EGMW";
pub const VERSION: u32 = 1;

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Contract("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f32s(&mut w, t.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors<R: Read>(r: R) -> Result<IndexMap<String, Tensor>> {
    let mut r = Reader::new(r);
    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return r.fail(0, format!("bad magic {:?}", String::from_utf8_lossy(&magic)));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let count = r.u32("tensor count")?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let at = r.offset;
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.bytes(len, "name")?).or_else(|_| r.fail(at + 4, "name is not UTF-8"))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = r.offset;
            let d = r.u64("dimension")?;
            match usize::try_from(d) {
                Ok(d) if d > 0 => shape.push(d),
                _ => return r.fail(at, format!("invalid dimension {d} in {name}")),
            }
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some());
        let Some(numel) = numel else {
            return r.fail(r.offset, format!("shape {shape:?} of {name} overflows"));
        };
        let data = r.f32s(numel, &name)?;
        let t = Tensor::new(shape, data)?;
        if out.insert(name.clone(), t).is_some() {
            return r.fail(at, format!("duplicate tensor {name}"));
        }
    }
    r.expect_end("last tensor")?;
    Ok(out)
}

pub fn save<'a>(path: &Path, tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), tensors)
}

pub fn load(path: &Path) -> Result<IndexMap<String, Tensor>> {
    read_tensors(BufReader::new(File::open(path)?))
}
