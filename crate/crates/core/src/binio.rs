//! Little-endian binary reading and writing with byte-offset errors.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Reader<R> {
    pub inner: R,
    pub offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                offset: self.offset,
                msg: format!("truncated while reading {what}"),
            },
            _ => Error::Io(e),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    /// Reads `n` little-endian `f32` values.
    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut data = vec![0.0f32; n];
        let mut buf = vec![0u8; n.min(1 << 16) * 4];
        for chunk in data.chunks_mut(1 << 16) {
            let bytes = &mut buf[..chunk.len() * 4];
            self.fill(bytes, what)?;
            for (v, b) in chunk.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        Ok(data)
    }

    /// Errors unless the stream is exhausted.
    pub fn expect_end(&mut self, what: &str) -> Result<()> {
        let mut probe = [0u8; 1];
        if self.inner.read(&mut probe)? != 0 {
            return self.fail(self.offset, format!("trailing bytes after {what}"));
        }
        Ok(())
    }

    pub fn fail<T>(&self, at: u64, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: at,
            msg: msg.into(),
        })
    }
}

/// Writes `f32` values little-endian in bounded chunks.
pub(crate) fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len().min(1 << 16) * 4);
    for chunk in data.chunks(1 << 16) {
        buf.clear();
        buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}
