//! `KGRLPB1` parameter blobs.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KGRLPB1"            7 bytes magic
//! index_len            u32
//! index                index_len bytes of UTF-8 JSON: [{"name", "shape", "offset", "len"}, ...]
//! data                 f32 values, `offset` and `len` count values from the start of data
//! ```
//!
//! Entries are stored back to back in index order and the data section holds
//! exactly the values the index describes.

use kgrl_core::knowledge::BlobEntries;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 7] = b"KGRLPB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Blob(msg.into())
}

pub fn encode(entries: &BlobEntries) -> Vec<u8> {
    let mut offset = 0;
    let index: Vec<IndexEntry> = entries
        .iter()
        .map(|(name, shape, values)| {
            let e = IndexEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: values.len(),
            };
            offset += values.len();
            e
        })
        .collect();
    let index = serde_json::to_vec(&index).expect("index serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + index.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    out.extend_from_slice(&index);
    for (_, _, values) in entries {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<BlobEntries> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| corrupt("missing KGRLPB1 magic"))?;
    if rest.len() < 4 {
        return Err(corrupt("truncated index length"));
    }
    let (len, rest) = rest.split_at(4);
    let index_len = u32::from_le_bytes(len.try_into().expect("4 bytes")) as usize;
    if rest.len() < index_len {
        return Err(corrupt(format!("index of {index_len} bytes overruns the file")));
    }
    let (index, data) = rest.split_at(index_len);
    let index: Vec<IndexEntry> =
        serde_json::from_slice(index).map_err(|e| corrupt(format!("unreadable index: {e}")))?;
    if data.len() % 4 != 0 {
        return Err(corrupt("data section is not a whole number of f32 values"));
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut expected = 0;
    let mut out = Vec::with_capacity(index.len());
    for e in index {
        if e.offset != expected {
            return Err(corrupt(format!(
                "`{}` starts at {}, expected {expected}",
                e.name, e.offset
            )));
        }
        if e.shape.iter().product::<usize>() != e.len {
            return Err(corrupt(format!(
                "`{}` has shape {:?} but {} values",
                e.name, e.shape, e.len
            )));
        }
        let end = e.offset + e.len;
        if end > values.len() {
            return Err(corrupt(format!("`{}` overruns the data section", e.name)));
        }
        out.push((e.name, e.shape, values[e.offset..end].to_vec()));
        expected = end;
    }
    if expected != values.len() {
        return Err(corrupt(format!(
            "{} trailing values after the last entry",
            values.len() - expected
        )));
    }
    Ok(out)
}
