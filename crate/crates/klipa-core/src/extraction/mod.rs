//! Chunk to triple extraction: prompt, model call, parse with repair, schema
//! validation. Per-chunk failures are recorded in the report and never abort
//! a corpus run.

mod cache;
mod prompt;
mod repair;
mod schema;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, ExtractionCache, CACHE_FILE};
pub use prompt::{build_prompt, PROMPT_TEXT_LIMIT};
pub use repair::{parse_response, repair_json, ParseStage, ParsedResponse, RawTriple, Unrepairable};
pub use schema::{RelationSpec, SchemaConfig};
pub use validate::{validate_triples, EntityRef, Provenance, RejectReason, Rejected, Triple, Validation};

use crate::chunker::{Chunk, ChunkError, Splitter};
use crate::gateway::{ChatRequest, Gateway};
use crate::ingest::SourceDocument;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("extraction cache line {line} unreadable: {message}")]
    CacheCorrupt { line: usize, message: String },
    #[error("chunking failed: {0}")]
    Chunk(#[from] ChunkError),
    #[error("io: {0}")]
    Io(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Unrepairable,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub doc_id: String,
    pub seq_id: usize,
    pub kind: FailureKind,
    pub message: String,
}

/// Everything learned from one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutcome {
    pub doc_id: String,
    pub seq_id: usize,
    pub triples: Vec<Triple>,
    pub rejected: Vec<Rejected>,
    pub failure: Option<ChunkFailure>,
    pub stage: Option<ParseStage>,
    pub cache_hit: bool,
    pub seconds: f64,
}

fn outcome(chunk: &Chunk) -> ChunkOutcome {
    ChunkOutcome {
        doc_id: chunk.doc_id.clone(),
        seq_id: chunk.seq_id,
        triples: Vec::new(),
        rejected: Vec::new(),
        failure: None,
        stage: None,
        cache_hit: false,
        seconds: 0.0,
    }
}

/// Prompt, call (or cache hit), parse, validate.
pub fn extract_chunk(
    chunk: &Chunk,
    schema: &SchemaConfig,
    gateway: &Gateway,
    cache: Option<&ExtractionCache>,
) -> ChunkOutcome {
    let started = Instant::now();
    let mut out = outcome(chunk);
    let prompt = build_prompt(chunk, schema);
    let key = cache_key(&chunk.text, &prompt, &schema.fingerprint(), gateway.chat_model());
    let cached = cache.and_then(|c| c.get(&key));
    out.cache_hit = cached.is_some();
    let reply = match cached {
        Some(r) => r,
        None => match gateway.chat(&ChatRequest::prompt(prompt)) {
            Ok(resp) => resp.text,
            Err(e) => {
                log::warn!("{}#{}: gateway error: {e}", chunk.doc_id, chunk.seq_id);
                out.failure = Some(ChunkFailure {
                    doc_id: chunk.doc_id.clone(),
                    seq_id: chunk.seq_id,
                    kind: FailureKind::Gateway,
                    message: e.to_string(),
                });
                out.seconds = started.elapsed().as_secs_f64();
                return out;
            }
        },
    };
    match parse_response(&reply) {
        Ok(parsed) => {
            out.stage = Some(parsed.stage);
            let prov = Provenance {
                doc_id: chunk.doc_id.clone(),
                seq_id: chunk.seq_id,
            };
            let v = validate_triples(&parsed.triples, schema, &prov);
            out.triples = v.valid;
            out.rejected = v.rejected;
            if !out.cache_hit {
                if let Some(c) = cache {
                    if let Err(e) = c.put(&key, &reply) {
                        log::warn!("cache write failed: {e}");
                    }
                }
            }
        }
        Err(Unrepairable { text }) => {
            log::warn!("{}#{}: unrepairable reply: {:?}", chunk.doc_id, chunk.seq_id, excerpt(&text));
            out.failure = Some(ChunkFailure {
                doc_id: chunk.doc_id.clone(),
                seq_id: chunk.seq_id,
                kind: FailureKind::Unrepairable,
                message: excerpt(&text),
            });
        }
    }
    out.seconds = started.elapsed().as_secs_f64();
    out
}

fn excerpt(text: &str) -> String {
    text.chars().take(200).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocReport {
    pub doc_id: String,
    pub chunks: usize,
    pub triples: usize,
    pub rejected: usize,
    pub cache_hits: usize,
    pub failures: Vec<ChunkFailure>,
    /// Sum of per-chunk extraction times.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub model: String,
    pub schema_fingerprint: String,
    pub documents: Vec<DocReport>,
    pub total_chunks: usize,
    pub total_triples: usize,
    pub total_rejected: usize,
    pub total_failures: usize,
    pub cache_hits: usize,
    pub cache_corrupt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutput {
    /// In `(doc_id, seq_id)` order, reply order within a chunk.
    pub triples: Vec<Triple>,
    pub chunks: Vec<Chunk>,
    pub report: ExtractionReport,
}

/// Chunk every document and extract all chunks on a pool of `parallelism`
/// workers. Output order does not depend on completion order.
pub fn extract_corpus(
    docs: &[SourceDocument],
    splitter: &Splitter,
    schema: &SchemaConfig,
    gateway: &Gateway,
    cache: Option<&ExtractionCache>,
    parallelism: usize,
) -> Result<ExtractionOutput, ExtractionError> {
    let mut chunks = Vec::new();
    for d in docs {
        chunks.extend(splitter.split(d));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ExtractionError::Pool(e.to_string()))?;
    let mut outcomes: Vec<ChunkOutcome> =
        pool.install(|| chunks.par_iter().map(|c| extract_chunk(c, schema, gateway, cache)).collect());
    outcomes.sort_by(|a, b| (&a.doc_id, a.seq_id).cmp(&(&b.doc_id, b.seq_id)));

    let mut per_doc: BTreeMap<&str, DocReport> = docs
        .iter()
        .map(|d| {
            (
                d.id.as_str(),
                DocReport {
                    doc_id: d.id.clone(),
                    chunks: 0,
                    triples: 0,
                    rejected: 0,
                    cache_hits: 0,
                    failures: Vec::new(),
                    seconds: 0.0,
                },
            )
        })
        .collect();
    let mut triples = Vec::new();
    for o in &outcomes {
        let r = per_doc.get_mut(o.doc_id.as_str()).expect("chunk of a known document");
        r.chunks += 1;
        r.triples += o.triples.len();
        r.rejected += o.rejected.len();
        r.cache_hits += usize::from(o.cache_hit);
        r.seconds += o.seconds;
        r.failures.extend(o.failure.clone());
        triples.extend(o.triples.iter().cloned());
    }
    let documents: Vec<DocReport> = per_doc.into_values().collect();
    let report = ExtractionReport {
        model: gateway.chat_model().to_string(),
        schema_fingerprint: schema.fingerprint(),
        total_chunks: outcomes.len(),
        total_triples: triples.len(),
        total_rejected: documents.iter().map(|d| d.rejected).sum(),
        total_failures: documents.iter().map(|d| d.failures.len()).sum(),
        cache_hits: documents.iter().map(|d| d.cache_hits).sum(),
        cache_corrupt: cache.map_or(0, |c| c.corrupt_entries().len()),
        documents,
    };
    Ok(ExtractionOutput {
        triples,
        chunks,
        report,
    })
}

/// Entities mentioned per document: the union of heads and tails of that
/// document's triples, as `(type, key)`.
pub fn entities_by_doc(triples: &[Triple]) -> BTreeMap<String, BTreeSet<(String, String)>> {
    let mut out: BTreeMap<String, BTreeSet<(String, String)>> = BTreeMap::new();
    for t in triples {
        let set = out.entry(t.provenance.doc_id.clone()).or_default();
        set.insert((t.head.entity_type.clone(), t.head.key.clone()));
        set.insert((t.tail.entity_type.clone(), t.tail.key.clone()));
    }
    out
}
