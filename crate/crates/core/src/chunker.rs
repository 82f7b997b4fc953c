//! Recursive character splitting of abstracts into overlapping chunks.
//!
//! Text is cut at the highest-priority separator that occurs in it (the
//! separator stays attached to the preceding piece), pieces that are still
//! too long are cut again with the next separator, and the empty separator
//! finally cuts at fixed character counts. Pieces are then merged greedily
//! into chunks, and every chunk after the first is prefixed with the tail of
//! its predecessor. The length bound covers the prefix.
//!
//! All offsets and lengths are in Unicode scalar values (`char`s).

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub max_chars: usize,
    pub overlap_chars: usize,
    pub separators: Vec<String>,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_chars: 1024,
            overlap_chars: 200,
            separators: vec!["\n\n".into(), ". ".into(), String::new()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkConfigError {
    #[error("overlap ({overlap}) must be smaller than max_chars ({max})")]
    OverlapTooLarge { overlap: usize, max: usize },
    #[error("separator list must end with the empty-string fallback")]
    MissingFallback,
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), ChunkConfigError> {
        if self.overlap_chars >= self.max_chars {
            return Err(ChunkConfigError::OverlapTooLarge {
                overlap: self.overlap_chars,
                max: self.max_chars,
            });
        }
        if self.separators.last().is_none_or(|s| !s.is_empty()) {
            return Err(ChunkConfigError::MissingFallback);
        }
        Ok(())
    }

    /// Longest piece that always fits in a chunk next to a full overlap prefix.
    fn piece_budget(&self) -> usize {
        self.max_chars - self.overlap_chars
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    /// `[start, end)` char offsets of the non-overlap part in the source text.
    pub core_span: (usize, usize),
}

impl Chunk {
    pub fn id(&self) -> String {
        chunk_id(&self.doc_id, self.chunk_index)
    }
}

pub fn chunk_id(doc_id: &str, chunk_index: usize) -> String {
    format!("{doc_id}#{chunk_index}")
}

/// Document id part of a chunk id produced by [`chunk_id`].
pub fn doc_id_of(chunk_id: &str) -> &str {
    chunk_id.rsplit_once('#').map_or(chunk_id, |(doc, _)| doc)
}

/// Splits a document's abstract. The config is assumed valid
/// (see [`ChunkConfig::validate`]).
pub fn split(doc: &Document, cfg: &ChunkConfig) -> Vec<Chunk> {
    split_text(&doc.id, &doc.abstract_text, cfg)
}

pub fn split_text(doc_id: &str, text: &str, cfg: &ChunkConfig) -> Vec<Chunk> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    let separators: Vec<Vec<char>> = cfg.separators.iter().map(|s| s.chars().collect()).collect();
    let mut pieces = Vec::new();
    segment(&chars, 0..chars.len(), &separators, cfg.piece_budget(), &mut pieces);

    let mut chunks: Vec<Chunk> = Vec::new();
    let mut prefix: Vec<char> = Vec::new();
    let mut core: Option<Range<usize>> = None;
    for piece in pieces {
        if let Some(c) = &core {
            if prefix.len() + c.len() + piece.len() > cfg.max_chars {
                prefix = close_chunk(doc_id, &chars, &prefix, c.clone(), cfg, &mut chunks);
                core = None;
            }
        }
        core = Some(match core {
            Some(c) => c.start..piece.end,
            None => piece,
        });
    }
    if let Some(c) = core {
        close_chunk(doc_id, &chars, &prefix, c, cfg, &mut chunks);
    }
    chunks
}

/// Emits a chunk and returns the overlap prefix for the next one.
fn close_chunk(
    doc_id: &str,
    chars: &[char],
    prefix: &[char],
    core: Range<usize>,
    cfg: &ChunkConfig,
    chunks: &mut Vec<Chunk>,
) -> Vec<char> {
    let mut text: Vec<char> = prefix.to_vec();
    text.extend_from_slice(&chars[core.clone()]);
    let tail = cfg.overlap_chars.min(text.len());
    let next_prefix = text[text.len() - tail..].to_vec();
    chunks.push(Chunk {
        doc_id: doc_id.to_string(),
        chunk_index: chunks.len(),
        text: text.into_iter().collect(),
        core_span: (core.start, core.end),
    });
    next_prefix
}

fn segment(
    chars: &[char],
    range: Range<usize>,
    separators: &[Vec<char>],
    budget: usize,
    out: &mut Vec<Range<usize>>,
) {
    let slice = &chars[range.clone()];
    let Some((idx, sep)) = separators
        .iter()
        .enumerate()
        .find(|(_, s)| s.is_empty() || contains(slice, s))
    else {
        out.push(range);
        return;
    };
    if sep.is_empty() {
        let mut start = range.start;
        while start < range.end {
            let end = (start + budget).min(range.end);
            out.push(start..end);
            start = end;
        }
        return;
    }
    for piece in split_inclusive(chars, range, sep) {
        if piece.len() > budget {
            segment(chars, piece, &separators[idx + 1..], budget, out);
        } else {
            out.push(piece);
        }
    }
}

fn contains(haystack: &[char], needle: &[char]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn split_inclusive(chars: &[char], range: Range<usize>, sep: &[char]) -> Vec<Range<usize>> {
    let mut pieces = Vec::new();
    let mut start = range.start;
    let mut i = range.start;
    while i + sep.len() <= range.end {
        if &chars[i..i + sep.len()] == sep {
            i += sep.len();
            pieces.push(start..i);
            start = i;
        } else {
            i += 1;
        }
    }
    if start < range.end {
        pieces.push(start..range.end);
    }
    pieces
}
