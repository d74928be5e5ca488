//! "EEGT" dataset files.
//!
//! Layout, all little-endian: magic `EEGT`, version `u32`, sample count
//! `u64`, channels `u32`, timesteps `u32`, label width `u32` (always 2), a
//! `u8` flag for participant ids, then the EEG `f32` payload
//! (sample-major, then channel, then time), the labels as `f32` pairs, and
//! the participant ids as `u32` when flagged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::binio::{write_f32s, Reader};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EEGT";
pub const VERSION: u32 = 1;
/// Bytes before the EEG payload.
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4 + 1;

const LABEL_DIM: u32 = 2;

pub fn write_to<W: Write>(mut w: W, d: &Dataset) -> Result<()> {
    let dim = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Contract(format!("{what} {v} exceeds u32")));
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.len() as u64).to_le_bytes())?;
    w.write_all(&dim(d.channels(), "channels")?.to_le_bytes())?;
    w.write_all(&dim(d.timesteps(), "timesteps")?.to_le_bytes())?;
    w.write_all(&LABEL_DIM.to_le_bytes())?;
    w.write_all(&[u8::from(d.participants().is_some())])?;
    write_f32s(&mut w, d.eeg())?;
    write_f32s(&mut w, d.labels())?;
    if let Some(ids) = d.participants() {
        let bytes: Vec<u8> = ids.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_from<R: Read>(r: R) -> Result<Dataset> {
    let mut r = Reader::new(r);
    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return r.fail(0, format!("bad magic {:?}", String::from_utf8_lossy(&magic)));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let n = r.u64("sample count")?;
    let channels = r.u32("channels")? as usize;
    let timesteps = r.u32("timesteps")? as usize;
    if channels == 0 || timesteps == 0 {
        return r.fail(16, format!("empty sample shape {channels}x{timesteps}"));
    }
    let label_dim = r.u32("label width")?;
    if label_dim != LABEL_DIM {
        return r.fail(24, format!("label width {label_dim}, expected {LABEL_DIM}"));
    }
    let has_participants = match r.u8("participant flag")? {
        0 => false,
        1 => true,
        other => return r.fail(28, format!("participant flag {other} is not 0 or 1")),
    };
    let numel = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(channels)?.checked_mul(timesteps))
        .filter(|v| v.checked_mul(4).is_some());
    let Some(numel) = numel else {
        return r.fail(8, format!("{n} samples of {channels}x{timesteps} overflow"));
    };
    let n = n as usize;
    let eeg = r.f32s(numel, "eeg payload")?;
    let labels = r.f32s(2 * n, "labels")?;
    let participants = if has_participants {
        let raw = r.bytes(4 * n, "participant ids")?;
        Some(
            raw.chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    } else {
        None
    };
    r.expect_end("dataset payload")?;
    Dataset::new(channels, timesteps, eeg, labels, participants)
}

pub fn write_container(path: &Path, d: &Dataset) -> Result<()> {
    write_to(BufWriter::new(File::create(path)?), d)
}

pub fn read_container(path: &Path) -> Result<Dataset> {
    read_from(BufReader::new(File::open(path)?))
}
