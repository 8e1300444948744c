//! Code files.
//!
//! ```text
//! "HASH"  u32 version  u32 bits  u64 count
//! per item: u64 id, ceil(bits/64) × u64 code word, i32 label
//! ```
//!
//! All integers little-endian. Label `-1` marks an unlabelled item.

use std::path::Path;

use super::{words_for, HashCode, RetrievalIndex};
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};

pub const CODES_MAGIC: &[u8; 4] = b"HASH";
pub const CODES_VERSION: u32 = 1;

pub fn encode_codes(index: &RetrievalIndex) -> Vec<u8> {
    let w = words_for(index.bits());
    let mut out = Vec::with_capacity(20 + index.len() * (12 + 8 * w));
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&CODES_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.bits() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for i in 0..index.len() {
        out.extend_from_slice(&index.ids()[i].to_le_bytes());
        for word in index.words(i) {
            out.extend_from_slice(&word.to_le_bytes());
        }
        out.extend_from_slice(&index.labels()[i].to_le_bytes());
    }
    out
}

pub fn decode_codes(bytes: &[u8]) -> Result<RetrievalIndex> {
    let mut r = Reader::new(bytes, "code file");
    let magic = r.take(4)?;
    if magic != CODES_MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(*CODES_MAGIC),
            actual: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32_le()?;
    if version != CODES_VERSION {
        return Err(Error::Format(format!(
            "unsupported code file version {version}"
        )));
    }
    let bits = r.u32_le()? as usize;
    let count = r.u64_le()? as usize;
    let w = words_for(bits);
    let item = 12 + 8 * w;
    if count.checked_mul(item) != Some(r.remaining()) {
        return Err(Error::Format(format!(
            "code file holds {} bytes of items, header promises {count} items of {item} bytes",
            r.remaining()
        )));
    }
    let mut index = RetrievalIndex::new(bits);
    for _ in 0..count {
        let id = r.u64_le()?;
        let words = (0..w).map(|_| r.u64_le()).collect::<Result<Vec<_>>>()?;
        let label = r.i32_le()?;
        index.push(id, &HashCode::from_words(words, bits)?, label)?;
    }
    Ok(index)
}

pub fn save_codes(path: &Path, index: &RetrievalIndex) -> Result<()> {
    fsutil::atomic_write(path, &encode_codes(index))
}

pub fn load_codes(path: &Path) -> Result<RetrievalIndex> {
    decode_codes(&fsutil::read(path)?)
}
