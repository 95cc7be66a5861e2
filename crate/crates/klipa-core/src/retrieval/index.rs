use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tokenize, Level, RetrievalError};
use crate::chunker::Chunk;
use crate::gateway::{EmbeddingVector, Gateway};
use crate::ingest::SourceDocument;

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexedItem {
    pub id: String,
    pub level: Level,
    pub vector: EmbeddingVector,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexHeader {
    pub version: u32,
    pub level: Level,
    pub dim: usize,
    pub embed_model: String,
}

/// What to embed: id, text, metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexInput {
    pub id: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    pub message: String,
}

/// Immutable exhaustive index with precomputed keyword statistics.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    header: IndexHeader,
    items: Vec<IndexedItem>,
    by_id: HashMap<String, usize>,
    pub(super) terms: Vec<HashMap<String, usize>>,
    pub(super) lengths: Vec<usize>,
    pub(super) df: HashMap<String, usize>,
}

impl VectorIndex {
    /// Checks uniform dimension, level, non-zero vectors and unique ids.
    pub fn new(header: IndexHeader, items: Vec<IndexedItem>) -> Result<Self, RetrievalError> {
        if items.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut by_id = HashMap::with_capacity(items.len());
        let mut terms = Vec::with_capacity(items.len());
        let mut lengths = Vec::with_capacity(items.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for (i, it) in items.iter().enumerate() {
            if it.vector.dim() != header.dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: header.dim,
                    got: it.vector.dim(),
                });
            }
            if it.level != header.level {
                return Err(RetrievalError::Corrupt(format!("item {} has level {:?}", it.id, it.level)));
            }
            if it.vector.norm() == 0.0 {
                return Err(RetrievalError::ZeroVector);
            }
            if by_id.insert(it.id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId(it.id.clone()));
            }
            let toks = tokenize(&it.text);
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &toks {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            lengths.push(toks.len());
            terms.push(counts);
        }
        Ok(Self {
            header,
            items,
            by_id,
            terms,
            lengths,
            df,
        })
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn level(&self) -> Level {
        self.header.level
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[IndexedItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&IndexedItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for it in &self.items {
            out.push_str(&serde_json::to_string(it).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, RetrievalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(RetrievalError::EmptyIndex)?;
        let header: IndexHeader =
            serde_json::from_str(first).map_err(|e| RetrievalError::Corrupt(format!("line 1: {e}")))?;
        if header.version != INDEX_VERSION {
            return Err(RetrievalError::Corrupt(format!("unsupported version {}", header.version)));
        }
        let items = lines
            .map(|(i, l)| {
                serde_json::from_str::<IndexedItem>(l).map_err(|e| RetrievalError::Corrupt(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(header, items)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }
}

/// One input per chunk, id `doc_id#seq_id`.
pub fn chunk_inputs(chunks: &[Chunk]) -> Vec<IndexInput> {
    chunks
        .iter()
        .map(|c| IndexInput {
            id: c.id().render(),
            text: c.text.clone(),
            metadata: c.metadata.clone(),
        })
        .collect()
}

/// One input per document: its chunk texts joined by newlines, cut to
/// `budget` characters.
pub fn document_inputs(docs: &[SourceDocument], chunks: &[Chunk], budget: usize) -> Vec<IndexInput> {
    let mut by_doc: BTreeMap<&str, Vec<&Chunk>> = BTreeMap::new();
    for c in chunks {
        by_doc.entry(c.doc_id.as_str()).or_default().push(c);
    }
    docs.iter()
        .map(|d| {
            let mut parts = by_doc.remove(d.id.as_str()).unwrap_or_default();
            parts.sort_by_key(|c| c.seq_id);
            let joined = if parts.is_empty() {
                d.text.clone()
            } else {
                parts.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n")
            };
            IndexInput {
                id: d.id.clone(),
                text: joined.chars().take(budget).collect(),
                metadata: d.metadata.clone(),
            }
        })
        .collect()
}

/// Embed every input. Items whose embedding fails are reported and left
/// out; an index with no surviving items is an error.
pub fn build_index(
    inputs: &[IndexInput],
    level: Level,
    gateway: &Gateway,
) -> Result<(VectorIndex, Vec<ItemFailure>), RetrievalError> {
    let mut seen = HashSet::new();
    if let Some(dup) = inputs.iter().find(|i| !seen.insert(i.id.as_str())) {
        return Err(RetrievalError::DuplicateId(dup.id.clone()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(gateway.parallelism().max(1))
        .build()
        .map_err(|e| RetrievalError::Io(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| inputs.par_iter().map(|i| (i, gateway.embed(&i.text))).collect());
    let mut items = Vec::with_capacity(inputs.len());
    let mut failures = Vec::new();
    for (input, r) in results {
        match r {
            Ok(vector) => items.push(IndexedItem {
                id: input.id.clone(),
                level,
                vector,
                text: input.text.clone(),
                metadata: input.metadata.clone(),
            }),
            Err(e) => {
                log::warn!("embedding {} failed: {e}", input.id);
                failures.push(ItemFailure {
                    id: input.id.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    let dim = items.first().map(|i| i.vector.dim()).ok_or(RetrievalError::EmptyIndex)?;
    let header = IndexHeader {
        version: INDEX_VERSION,
        level,
        dim,
        embed_model: gateway.embed_model().to_string(),
    };
    Ok((VectorIndex::new(header, items)?, failures))
}
