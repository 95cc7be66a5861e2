//! Exhaustive vector search, TF-IDF keyword search and their min-max
//! normalized weighted fusion. Every ranking is ordered by score
//! descending, then id ascending, so results are total and deterministic.

mod index;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{
    build_index, chunk_inputs, document_inputs, IndexHeader, IndexInput, IndexedItem, ItemFailure, VectorIndex,
    INDEX_VERSION,
};

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("{0} index is missing")]
    IndexMissing(Level),
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("index file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Chunk,
    Document,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Chunk => "chunk",
            Level::Document => "document",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chunk" => Ok(Level::Chunk),
            "document" | "doc" => Ok(Level::Document),
            other => Err(format!("level must be chunk or document, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitSource {
    Vector,
    Keyword,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub id: String,
    pub score: f64,
    pub source: HitSource,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub tau: f64,
    pub top_k: usize,
    pub w_vector: f64,
    pub w_keyword: f64,
    pub doc_aggregation: DocAggregation,
    /// Characters of concatenated chunk text embedded per document.
    pub doc_text_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            tau: 0.30,
            top_k: 5,
            w_vector: 0.7,
            w_keyword: 0.3,
            doc_aggregation: DocAggregation::Max,
            doc_text_budget: 2000,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: String| Err(RetrievalError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if self.w_vector < 0.0 || self.w_keyword < 0.0 || !self.w_vector.is_finite() || !self.w_keyword.is_finite() {
            return bad("weights must be non-negative".into());
        }
        if (self.w_vector + self.w_keyword - 1.0).abs() > 1e-9 {
            return bad(format!("weights must sum to 1, got {}", self.w_vector + self.w_keyword));
        }
        if self.doc_text_budget == 0 {
            return bad("doc_text_budget must be positive".into());
        }
        Ok(())
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Lowercase, split on non-alphanumerics, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn rank(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Up to `top_k` items with cosine at least `tau`.
pub fn vector_search(
    index: &VectorIndex,
    query: &EmbeddingVector,
    top_k: usize,
    tau: f64,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if query.dim() != index.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim(),
            got: query.dim(),
        });
    }
    let mut hits = Vec::new();
    for it in index.items() {
        let score = cosine(query.values(), it.vector.values())?;
        if score >= tau {
            hits.push(ScoredHit {
                id: it.id.clone(),
                score,
                source: HitSource::Vector,
                level: index.level(),
            });
        }
    }
    hits.sort_by(rank);
    hits.truncate(top_k);
    Ok(hits)
}

/// Sum over distinct query terms of `tf × idf`, with
/// `tf = count / item length` and `idf = ln(1 + N / df)`. Items sharing no
/// term with the query are excluded.
pub fn keyword_search(index: &VectorIndex, query: &str, top_k: usize) -> Vec<ScoredHit> {
    let q: BTreeSet<String> = tokenize(query).into_iter().collect();
    let n = index.len() as f64;
    let mut hits = Vec::new();
    for (i, it) in index.items().iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for t in &q {
            if let Some(&c) = index.terms[i].get(t) {
                let df = index.df[t] as f64;
                score += (c as f64 / index.lengths[i] as f64) * (1.0 + n / df).ln();
                matched = true;
            }
        }
        if matched {
            hits.push(ScoredHit {
                id: it.id.clone(),
                score,
                source: HitSource::Keyword,
                level: index.level(),
            });
        }
    }
    hits.sort_by(rank);
    hits.truncate(top_k);
    hits
}

/// Min-max scaling to `[0, 1]`; a list whose scores are all equal maps to 1.
pub fn min_max(hits: &[ScoredHit]) -> BTreeMap<String, f64> {
    let lo = hits.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
    let hi = hits.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
    hits.iter()
        .map(|h| {
            let s = if hi > lo { (h.score - lo) / (hi - lo) } else { 1.0 };
            (h.id.clone(), s)
        })
        .collect()
}

/// Weighted sum of the normalized lists; a missing source counts as 0.
/// A source with weight 0 contributes no candidates.
pub fn fuse(
    vector: &[ScoredHit],
    keyword: &[ScoredHit],
    w_vector: f64,
    w_keyword: f64,
    top_k: usize,
    level: Level,
) -> Vec<ScoredHit> {
    let nv = if w_vector > 0.0 { min_max(vector) } else { BTreeMap::new() };
    let nk = if w_keyword > 0.0 { min_max(keyword) } else { BTreeMap::new() };
    let ids: BTreeSet<&String> = nv.keys().chain(nk.keys()).collect();
    let mut hits: Vec<ScoredHit> = ids
        .into_iter()
        .map(|id| ScoredHit {
            id: id.clone(),
            score: (w_vector * nv.get(id).copied().unwrap_or(0.0) + w_keyword * nk.get(id).copied().unwrap_or(0.0))
                .clamp(0.0, 1.0),
            source: HitSource::Fused,
            level,
        })
        .collect();
    hits.sort_by(rank);
    hits.truncate(top_k);
    hits
}

pub fn hybrid_retrieve(
    index: &VectorIndex,
    query: &str,
    gateway: &Gateway,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if tokenize(query).is_empty() && query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let vector = if cfg.w_vector > 0.0 {
        let q = gateway.embed(query)?;
        vector_search(index, &q, cfg.top_k, cfg.tau)?
    } else {
        Vec::new()
    };
    let keyword = if cfg.w_keyword > 0.0 {
        keyword_search(index, query, cfg.top_k)
    } else {
        Vec::new()
    };
    Ok(fuse(&vector, &keyword, cfg.w_vector, cfg.w_keyword, cfg.top_k, index.level()))
}

/// Chunk- and document-level indexes behind one dispatch point.
#[derive(Debug, Clone, Default)]
pub struct Retriever {
    pub chunk: Option<Arc<VectorIndex>>,
    pub document: Option<Arc<VectorIndex>>,
}

impl Retriever {
    pub fn index(&self, level: Level) -> Result<&VectorIndex, RetrievalError> {
        match level {
            Level::Chunk => self.chunk.as_deref(),
            Level::Document => self.document.as_deref(),
        }
        .ok_or(RetrievalError::IndexMissing(level))
    }

    pub fn retrieve(
        &self,
        level: Level,
        query: &str,
        gateway: &Gateway,
        cfg: &RetrievalConfig,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        hybrid_retrieve(self.index(level)?, query, gateway, cfg)
    }
}
