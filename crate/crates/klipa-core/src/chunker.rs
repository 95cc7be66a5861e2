//! Recursive, overlap-aware text segmentation.
//!
//! Separators are regular expressions tried in order. A piece that is still
//! longer than `chunk_size` is re-split with the next separator, and a piece
//! that survives every separator is cut at `chunk_size` characters. Separator
//! text stays attached to the end of the piece it follows, so pieces tile the
//! document with no gaps. Pieces are then packed greedily into chunks.
//!
//! Consecutive chunks share a tail of at most `chunk_overlap` characters.
//! The shared region always starts right after a separator match, so it
//! never begins mid-word. The overlap counts toward `chunk_size`.
//!
//! All sizes and spans are in characters, not bytes.

use std::collections::BTreeMap;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SourceDocument;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("invalid split config: {0}")]
    InvalidConfig(String),
}

/// Sentence end, paragraph break, closing brace, newline, space, then
/// single characters.
pub const DEFAULT_SEPARATORS: [&str; 6] = [r"(?<=\.)\s*", r"\n\s*\n", r"(?<=\})\s*", r"\n", r" ", ""];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default = "default_separators")]
    pub separators: Vec<String>,
}

fn default_chunk_size() -> usize {
    200
}
fn default_chunk_overlap() -> usize {
    30
}
fn default_separators() -> Vec<String> {
    DEFAULT_SEPARATORS.iter().map(|s| s.to_string()).collect()
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            chunk_size: default_chunk_size(),
            chunk_overlap: default_chunk_overlap(),
            separators: default_separators(),
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::InvalidConfig("chunk_size must be positive".into()));
        }
        if self.chunk_overlap >= self.chunk_size {
            return Err(ChunkError::InvalidConfig(format!(
                "chunk_overlap ({}) must be smaller than chunk_size ({})",
                self.chunk_overlap, self.chunk_size
            )));
        }
        if self.separators.is_empty() {
            return Err(ChunkError::InvalidConfig("separators must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkId {
    pub doc_id: String,
    pub seq_id: usize,
}

impl ChunkId {
    /// `doc_id#seq_id`, the form used in indexes and evidence lists.
    pub fn render(&self) -> String {
        format!("{}#{}", self.doc_id, self.seq_id)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (doc, seq) = s.rsplit_once('#')?;
        Some(ChunkId {
            doc_id: doc.to_string(),
            seq_id: seq.parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq_id: usize,
    pub text: String,
    /// Character offsets `[start, end)` into the parent text.
    pub span: (usize, usize),
    pub metadata: BTreeMap<String, String>,
}

impl Chunk {
    pub fn id(&self) -> ChunkId {
        ChunkId {
            doc_id: self.doc_id.clone(),
            seq_id: self.seq_id,
        }
    }
}

/// A validated config with compiled separators.
#[derive(Debug)]
pub struct Splitter {
    cfg: SplitConfig,
    patterns: Vec<Regex>,
}

impl Splitter {
    pub fn new(cfg: SplitConfig) -> Result<Self, ChunkError> {
        cfg.validate()?;
        let patterns = cfg
            .separators
            .iter()
            .map(|s| {
                Regex::new(s).map_err(|e| ChunkError::InvalidConfig(format!("separator {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cfg, patterns })
    }

    pub fn config(&self) -> &SplitConfig {
        &self.cfg
    }

    pub fn split(&self, doc: &SourceDocument) -> Vec<Chunk> {
        self.split_spans(&doc.text)
            .into_iter()
            .enumerate()
            .map(|(seq_id, (span, text))| {
                let mut metadata = doc.metadata.clone();
                metadata.insert("seq_id".to_string(), seq_id.to_string());
                Chunk {
                    doc_id: doc.id.clone(),
                    seq_id,
                    text,
                    span,
                    metadata,
                }
            })
            .collect()
    }

    /// Split raw text into `(char span, text)` pairs.
    pub fn split_spans(&self, text: &str) -> Vec<((usize, usize), String)> {
        if text.is_empty() {
            return Vec::new();
        }
        let map = CharMap::new(text);
        let matches: Vec<Vec<(usize, usize)>> = self
            .patterns
            .iter()
            .map(|re| separator_matches(re, text, &map))
            .collect();

        let mut pieces = Vec::new();
        self.split_range(0, map.len(), 0, &matches, &mut pieces);

        // Overlap may only start right after a non-empty separator match.
        let mut boundaries: Vec<usize> = matches
            .iter()
            .flatten()
            .filter(|(s, e)| e > s)
            .map(|&(_, e)| e)
            .collect();
        boundaries.sort_unstable();
        boundaries.dedup();

        self.pack(&pieces, &boundaries)
            .into_iter()
            .map(|(s, e)| ((s, e), map.slice(text, s, e).to_string()))
            .collect()
    }

    fn split_range(
        &self,
        start: usize,
        end: usize,
        level: usize,
        matches: &[Vec<(usize, usize)>],
        out: &mut Vec<(usize, usize)>,
    ) {
        let size = self.cfg.chunk_size;
        if end - start <= size {
            out.push((start, end));
            return;
        }
        if level >= matches.len() {
            let mut s = start;
            while s < end {
                let e = (s + size).min(end);
                out.push((s, e));
                s = e;
            }
            return;
        }
        let mut cuts: Vec<usize> = matches[level]
            .iter()
            .map(|&(_, e)| e)
            .filter(|&e| e > start && e < end)
            .collect();
        cuts.dedup();
        if cuts.is_empty() {
            self.split_range(start, end, level + 1, matches, out);
            return;
        }
        let mut s = start;
        for cut in cuts.into_iter().chain(std::iter::once(end)) {
            if cut > s {
                self.split_range(s, cut, level + 1, matches, out);
                s = cut;
            }
        }
    }

    fn pack(&self, pieces: &[(usize, usize)], boundaries: &[usize]) -> Vec<(usize, usize)> {
        let size = self.cfg.chunk_size;
        let overlap = self.cfg.chunk_overlap;
        let mut chunks = Vec::new();
        let mut i = 0;
        let mut start = match pieces.first() {
            Some(p) => p.0,
            None => return chunks,
        };
        while i < pieces.len() {
            let mut end = pieces[i].1;
            let mut j = i + 1;
            while j < pieces.len() && pieces[j].1 - start <= size {
                end = pieces[j].1;
                j += 1;
            }
            chunks.push((start, end));
            if j == pieces.len() {
                break;
            }
            let next_end = pieces[j].1;
            let lo = end.saturating_sub(overlap).max(start + 1);
            let from = boundaries.partition_point(|&b| b < lo);
            start = boundaries[from..]
                .iter()
                .take_while(|&&b| b < end)
                .copied()
                .find(|&b| next_end - b <= size)
                .unwrap_or(end);
            i = j;
        }
        chunks
    }
}

/// Convenience wrapper building a [`Splitter`] per call.
pub fn split(doc: &SourceDocument, cfg: &SplitConfig) -> Result<Vec<Chunk>, ChunkError> {
    Ok(Splitter::new(cfg.clone())?.split(doc))
}

/// Byte offset of every character, plus the end of the text.
struct CharMap {
    offsets: Vec<usize>,
}

impl CharMap {
    fn new(text: &str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Self { offsets }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn char_at_byte(&self, byte: usize) -> usize {
        self.offsets.partition_point(|&b| b < byte)
    }

    fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> &'a str {
        &text[self.offsets[start]..self.offsets[end]]
    }
}

/// All matches of `re` over the whole text, in character offsets. Empty
/// matches are kept: they mark split points without consuming anything.
fn separator_matches(re: &Regex, text: &str, map: &CharMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos <= text.len() {
        let m = match re.find_from_pos(text, pos) {
            Ok(Some(m)) => m,
            _ => break,
        };
        out.push((map.char_at_byte(m.start()), map.char_at_byte(m.end())));
        pos = if m.end() > m.start() {
            m.end()
        } else {
            // Step one character past an empty match.
            match text[m.end()..].chars().next() {
                Some(c) => m.end() + c.len_utf8(),
                None => break,
            }
        };
    }
    out
}
