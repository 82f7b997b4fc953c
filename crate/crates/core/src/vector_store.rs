//! Exact flat vector index with cosine top-k retrieval and persistence.
//!
//! Index file layout (all integers little-endian):
//!
//! ```text
//! "LRAG" | version: u32 | dim: u32 | count: u64 |
//!   count x ( id_len: u32 | id: UTF-8 bytes | dim x f32 ) |
//! crc32 of everything above: u32
//! ```
//!
//! Chunk texts and index metadata live in a JSON sidecar next to the vector
//! file (`<file>.meta.json`) which records the vector file's CRC so the two
//! cannot drift apart.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{doc_id_of, Chunk};
use crate::embedding::{EmbedderInfo, EmbeddingVector};

pub const MAGIC: [u8; 4] = *b"LRAG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("{0} chunks but {1} vectors")]
    LengthMismatch(usize, usize),
    #[error("expected dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector for {0} is not unit-norm")]
    NotNormalized(String),
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("invalid retriever config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported index format (expected version {expected}, found {found:?})")]
    FormatVersionMismatch { expected: u32, found: Option<u32> },
    #[error("index checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed index: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub k: usize,
    pub threshold: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            k: 10,
            threshold: 0.6,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.k == 0 {
            return Err(IndexError::InvalidConfig("k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(IndexError::InvalidConfig(format!(
                "threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
    pub chunk_text: String,
}

impl RetrievalHit {
    pub fn doc_id(&self) -> &str {
        doc_id_of(&self.chunk_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub embedder: EmbedderInfo,
    /// RFC 3339 build time.
    pub created_at: String,
    /// SHA-256 over chunk ids and texts in index order.
    pub corpus_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Immutable flat index. Rebuilds produce a new value; share it behind an
/// `Arc` and swap.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    entries: Vec<IndexEntry>,
    by_id: HashMap<String, usize>,
    metadata: IndexMetadata,
}

pub fn fingerprint<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut hasher = Sha256::new();
    for (id, text) in entries {
        hasher.update((id.len() as u64).to_le_bytes());
        hasher.update(id.as_bytes());
        hasher.update((text.len() as u64).to_le_bytes());
        hasher.update(text.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Pairs chunks with their vectors, preserving order.
pub fn build_index(
    chunks: &[Chunk],
    vectors: Vec<EmbeddingVector>,
    embedder: EmbedderInfo,
) -> Result<Index, IndexError> {
    if chunks.len() != vectors.len() {
        return Err(IndexError::LengthMismatch(chunks.len(), vectors.len()));
    }
    let entries = chunks
        .iter()
        .zip(vectors)
        .map(|(chunk, vector)| IndexEntry {
            chunk_id: chunk.id(),
            text: chunk.text.clone(),
            vector,
        })
        .collect::<Vec<_>>();
    let metadata = IndexMetadata {
        corpus_fingerprint: fingerprint(entries.iter().map(|e| (e.chunk_id.as_str(), e.text.as_str()))),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        embedder,
    };
    Index::from_entries(metadata.embedder.dim, entries, metadata)
}

impl Index {
    pub fn from_entries(
        dim: usize,
        entries: Vec<IndexEntry>,
        metadata: IndexMetadata,
    ) -> Result<Self, IndexError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (pos, entry) in entries.iter().enumerate() {
            if entry.vector.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    actual: entry.vector.dim(),
                });
            }
            if (entry.vector.dot(&entry.vector) - 1.0).abs() > 2.0 * UNIT_TOLERANCE {
                return Err(IndexError::NotNormalized(entry.chunk_id.clone()));
            }
            if by_id.insert(entry.chunk_id.clone(), pos).is_some() {
                return Err(IndexError::DuplicateId(entry.chunk_id.clone()));
            }
        }
        Ok(Self {
            dim,
            entries,
            by_id,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.metadata
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.by_id.get(chunk_id).map(|&i| &self.entries[i])
    }

    /// Exact scan: every entry scoring at least `threshold` is a candidate;
    /// candidates are ordered by score (descending) then chunk id and the
    /// first `k` are returned.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        cfg: &RetrieverConfig,
    ) -> Result<Vec<RetrievalHit>, IndexError> {
        cfg.validate()?;
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (e.vector.dot(query), e))
            .filter(|(score, _)| *score >= cfg.threshold)
            .collect();
        let by_rank = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.chunk_id.cmp(&b.1.chunk_id))
        };
        if scored.len() > cfg.k {
            scored.select_nth_unstable_by(cfg.k - 1, by_rank);
            scored.truncate(cfg.k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(score, e)| RetrievalHit {
                chunk_id: e.chunk_id.clone(),
                score,
                chunk_text: e.text.clone(),
            })
            .collect())
    }

    /// Serializes the vector payload in the binary index format.
    pub fn encode_vectors(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(
            HEADER_LEN + 4 + self.entries.len() * (8 + self.dim * 4 + 16),
        );
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.chunk_id.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.chunk_id.as_bytes());
            for v in e.vector.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Writes the vector file and its sidecar. Both are written to temporary
    /// files first and renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let bytes = self.encode_vectors();
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let sidecar = Sidecar {
            format_version: FORMAT_VERSION,
            vectors_crc32: crc,
            metadata: self.metadata.clone(),
            chunks: self
                .entries
                .iter()
                .map(|e| SidecarChunk {
                    chunk_id: e.chunk_id.clone(),
                    text: e.text.clone(),
                })
                .collect(),
        };
        let meta = serde_json::to_vec(&sidecar).expect("sidecar always serializes");
        write_atomic(&sidecar_path(path), &meta)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let decoded = decode_vectors(&bytes)?;
        let meta_path = sidecar_path(path);
        let meta = fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let sidecar: Sidecar = serde_json::from_slice(&meta)
            .map_err(|e| IndexError::Malformed(format!("sidecar: {e}")))?;
        if sidecar.format_version != FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch {
                expected: FORMAT_VERSION,
                found: Some(sidecar.format_version),
            });
        }
        if sidecar.vectors_crc32 != decoded.crc {
            return Err(IndexError::ChecksumMismatch);
        }
        if sidecar.chunks.len() != decoded.entries.len() {
            return Err(IndexError::Malformed("sidecar entry count differs".into()));
        }
        let entries = decoded
            .entries
            .into_iter()
            .zip(sidecar.chunks)
            .map(|((id, values), chunk)| {
                if id != chunk.chunk_id {
                    return Err(IndexError::Malformed(format!(
                        "sidecar chunk {} does not match vector entry {id}",
                        chunk.chunk_id
                    )));
                }
                let vector = EmbeddingVector::from_unit(values)
                    .map_err(|e| IndexError::Malformed(format!("entry {id}: {e}")))?;
                if vector.as_slice().len() != decoded.dim {
                    return Err(IndexError::Malformed(format!("entry {id} changed length")));
                }
                Ok(IndexEntry {
                    chunk_id: id,
                    text: chunk.text,
                    vector,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(decoded.dim, entries, sidecar.metadata)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    vectors_crc32: u32,
    metadata: IndexMetadata,
    chunks: Vec<SidecarChunk>,
}

#[derive(Serialize, Deserialize)]
struct SidecarChunk {
    chunk_id: String,
    text: String,
}

/// Parsed vector file.
#[derive(Debug)]
pub struct DecodedVectors {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f32>)>,
    pub crc: u32,
}

/// Parses and verifies a vector file. Never panics on arbitrary input.
pub fn decode_vectors(bytes: &[u8]) -> Result<DecodedVectors, IndexError> {
    let unreadable = IndexError::FormatVersionMismatch {
        expected: FORMAT_VERSION,
        found: None,
    };
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err(unreadable);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IndexError::FormatVersionMismatch {
            expected: FORMAT_VERSION,
            found: Some(version),
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(IndexError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let crc = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return Err(IndexError::ChecksumMismatch);
    }

    let mut reader = Reader {
        buf: body,
        pos: 8,
    };
    let dim = reader.u32()? as usize;
    let count = reader.u64()?;
    let entry_min = 4 + dim * 4;
    if count > (body.len() / entry_min.max(1)) as u64 {
        return Err(IndexError::Malformed(format!("entry count {count} exceeds file size")));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = reader.u32()? as usize;
        let id = std::str::from_utf8(reader.take(id_len)?)
            .map_err(|_| IndexError::Malformed("chunk id is not UTF-8".into()))?
            .to_string();
        let raw = reader.take(dim * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push((id, values));
    }
    if reader.pos != body.len() {
        return Err(IndexError::Malformed("trailing bytes after entries".into()));
    }
    Ok(DecodedVectors { dim, entries, crc })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.buf.len())
            .ok_or_else(|| IndexError::Malformed("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
