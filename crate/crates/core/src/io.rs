//! Framed artifact files: one line of compact JSON, then a raw little-endian
//! payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn write_framed<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    out.write_all(payload)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn read_framed<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<u8>)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(format_err(path, "missing header line"));
    }
    let header = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| format_err(path, &format!("bad header: {e}")))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    Ok((header, payload))
}

pub(crate) fn format_err(path: &Path, reason: &str) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.to_string() }
}

pub(crate) struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }

    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take::<4>().map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
