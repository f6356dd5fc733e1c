//! VRTEMB01 binary embedding store.
//!
//! Layout (all little-endian):
//!   header, 24 bytes: magic `VRTEMB01` (8) | dim u32 (4) | count u64 (8) |
//!                     normalized u8 (1) | zero padding (3)
//!   per record: id length u16 | UTF-8 id bytes | dim × f32 values
//!
//! Values are stored as f32; reading widens them to f64 exactly. The
//! normalized flag applies to every record in the store, so writing rejects
//! lists that mix flagged and unflagged vectors. Record kind is contextual
//! (a store holds one corpus role) and is supplied by the reader.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{CorpusItem, EmbeddingVector, ItemKind, ModelError};

pub const MAGIC: &[u8; 8] = b"VRTEMB01";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a VRTEMB01 store")]
    BadMagic,
    #[error("dimension mismatch: store dim {expected}, item {id} has {got}")]
    DimMismatch {
        expected: usize,
        got: usize,
        id: String,
    },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("truncated file: {0}")]
    TruncatedFile(&'static str),
    #[error("store mixes normalized and unnormalized vectors")]
    MixedNormalization,
    #[error("empty id at record {0}")]
    EmptyId(usize),
    #[error("id exceeds the u16 length field at record {0}")]
    IdTooLong(usize),
    #[error("id is not valid UTF-8 at record {0}")]
    BadId(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serializes items to the VRTEMB01 byte layout.
pub fn encode_store(items: &[CorpusItem]) -> Result<Vec<u8>, StoreError> {
    let dim = items.first().map_or(0, |i| i.embedding.dim());
    let normalized = items.first().is_some_and(|i| i.embedding.is_normalized());
    let mut seen = std::collections::HashSet::new();
    for (rec, item) in items.iter().enumerate() {
        if item.id.is_empty() {
            return Err(StoreError::EmptyId(rec));
        }
        if item.id.len() > usize::from(u16::MAX) {
            return Err(StoreError::IdTooLong(rec));
        }
        if item.embedding.dim() != dim {
            return Err(StoreError::DimMismatch {
                expected: dim,
                got: item.embedding.dim(),
                id: item.id.clone(),
            });
        }
        if item.embedding.is_normalized() != normalized {
            return Err(StoreError::MixedNormalization);
        }
        if !seen.insert(item.id.as_str()) {
            return Err(StoreError::DuplicateId(item.id.clone()));
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + items.len() * (2 + 16 + dim * 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    out.push(u8::from(normalized));
    out.extend_from_slice(&[0u8; 3]);
    for item in items {
        let id_bytes = item.id.as_bytes();
        out.extend_from_slice(&(id_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(id_bytes);
        for v in item.embedding.to_f32() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses VRTEMB01 bytes, assigning `kind` to every record.
pub fn decode_store(bytes: &[u8], kind: ItemKind) -> Result<Vec<CorpusItem>, StoreError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        return Err(StoreError::TruncatedFile("header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let normalized = bytes[20] != 0;

    let mut items = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    let mut pos = HEADER_LEN;
    for rec in 0..count {
        if bytes.len() < pos + 2 {
            return Err(StoreError::TruncatedFile("record id length"));
        }
        let id_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if id_len == 0 {
            return Err(StoreError::EmptyId(rec));
        }
        if bytes.len() < pos + id_len {
            return Err(StoreError::TruncatedFile("record id"));
        }
        let id = std::str::from_utf8(&bytes[pos..pos + id_len])
            .map_err(|_| StoreError::BadId(rec))?
            .to_string();
        pos += id_len;
        if bytes.len() < pos + dim * 4 {
            return Err(StoreError::TruncatedFile("record values"));
        }
        let mut values = Vec::with_capacity(dim);
        for c in bytes[pos..pos + dim * 4].chunks_exact(4) {
            values.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        pos += dim * 4;
        if !seen.insert(id.clone()) {
            return Err(StoreError::DuplicateId(id));
        }
        let embedding = EmbeddingVector::from_f32(&values, normalized)?;
        items.push(CorpusItem::new(id, kind, embedding));
    }
    Ok(items)
}

/// Writes items to a VRTEMB01 file.
pub fn write_store(path: impl AsRef<Path>, items: &[CorpusItem]) -> Result<(), StoreError> {
    let bytes = encode_store(items)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a VRTEMB01 file; records come back as video items.
pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<CorpusItem>, StoreError> {
    read_store_as(path, ItemKind::Video)
}

/// Reads a VRTEMB01 file with an explicit record kind.
pub fn read_store_as(path: impl AsRef<Path>, kind: ItemKind) -> Result<Vec<CorpusItem>, StoreError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_store(&bytes, kind)
}
