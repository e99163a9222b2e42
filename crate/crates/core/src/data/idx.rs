//! IDX container files (big-endian dimensions after a type/rank magic),
//! optionally gzip-compressed.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn ingest(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

/// Reads a file, transparently inflating gzip input.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| ingest(path, 0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an unsigned-byte IDX buffer. `path` is only used in diagnostics.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(ingest(path, bytes.len() as u64, "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(ingest(path, 0, "magic number must start with two zero bytes"));
    }
    if bytes[2] != UBYTE {
        return Err(ingest(
            path,
            2,
            format!("element type 0x{:02x} is not unsigned byte", bytes[2]),
        ));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(ingest(path, 3, "zero-rank array"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(ingest(path, bytes.len() as u64, "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(ingest(
            path,
            bytes.len() as u64,
            format!("expected {count} data bytes, found {}", body.len()),
        ));
    }
    if body.len() > count {
        return Err(ingest(
            path,
            (header + count) as u64,
            format!("{} trailing bytes", body.len() - count),
        ));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&read_maybe_gzip(path)?, path)
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_idx(array)).map_err(|e| Error::io(path, e))
}
