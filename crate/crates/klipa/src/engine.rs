//! Artifact plumbing between the core pipeline stages.
//!
//! `build` writes the graph snapshot, the validated triples, the chunked
//! corpus and the extraction report; `index` embeds the chunked corpus into
//! chunk- and document-level indexes; everything else reads those files.

use std::collections::BTreeMap;
use std::fs::{self, File, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use klipa_core::agent::{AgentAnswer, AgentContext, EvidenceKind};
use klipa_core::chunker::{Chunk, Splitter};
use klipa_core::extraction::{extract_corpus, ExtractionCache, ExtractionReport, FailureKind, SchemaConfig};
use klipa_core::gateway::{Gateway, MockBackend, MockFixture};
use klipa_core::graph::{read_snapshot, write_snapshot, GraphSnapshot, GraphStore};
use klipa_core::ingest::{load_corpus, IngestError, LoadFailure, SourceDocument};
use klipa_core::metrics::{evaluate, load_gold, EvalReport};
use klipa_core::retrieval::{
    build_index, chunk_inputs, document_inputs, IndexInput, Level, RetrievalError, Retriever, VectorIndex,
};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    EngineConfig, CHUNKS_FILE, CHUNK_INDEX_FILE, DOCUMENTS_FILE, DOC_INDEX_FILE, LOCK_FILE, REPORT_FILE, TRIPLES_FILE,
};
use crate::error::EngineError;

/// Exclusive hold on an artifact directory, released on drop.
#[derive(Debug)]
pub struct ArtifactLock {
    _file: File,
    path: PathBuf,
}

impl ArtifactLock {
    pub fn acquire(dir: &Path) -> Result<Self, EngineError> {
        fs::create_dir_all(dir).map_err(|e| EngineError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| EngineError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file, path }),
            Err(TryLockError::WouldBlock) => Err(EngineError::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(EngineError::io(&path, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub documents: usize,
    pub load_failures: Vec<LoadFailure>,
    pub chunks: usize,
    pub triples: usize,
    pub rejected: usize,
    pub chunk_failures: usize,
    pub cache_hits: usize,
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    pub seconds: f64,
}

impl BuildSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "built graph: {} documents, {} chunks, {} triples ({} rejected), {} nodes, {} edges, {} components in {:.2}s\n",
            self.documents,
            self.chunks,
            self.triples,
            self.rejected,
            self.nodes,
            self.edges,
            self.components,
            self.seconds
        );
        if self.cache_hits > 0 {
            out.push_str(&format!("extraction cache hits: {}\n", self.cache_hits));
        }
        if self.chunk_failures > 0 {
            out.push_str(&format!(
                "chunk failures: {} (see {REPORT_FILE})\n",
                self.chunk_failures
            ));
        }
        for f in &self.load_failures {
            match f.line {
                Some(l) => out.push_str(&format!("failed: {} line {l}: {}\n", f.source, f.message)),
                None => out.push_str(&format!("failed: {}: {}\n", f.source, f.message)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    pub chunk_items: usize,
    pub document_items: usize,
    pub failures: usize,
}

/// Configuration plus the gateway every stage talks through.
#[derive(Debug, Clone)]
pub struct Engine {
    pub cfg: EngineConfig,
    pub gateway: Arc<Gateway>,
}

impl Engine {
    /// Validate the config and connect the gateway: the mock when a fixture
    /// is configured, otherwise the live endpoint.
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let gateway = match &cfg.mock_fixture {
            Some(path) => {
                let fixture = MockFixture::load(path).map_err(|e| EngineError::Config(e.to_string()))?;
                let backend = MockBackend::try_new(fixture).map_err(|e| EngineError::Config(e.to_string()))?;
                Gateway::new(Arc::new(backend), 0, Duration::ZERO, cfg.gateway.parallelism)
            }
            None => Gateway::http(&cfg.gateway),
        };
        Ok(Self {
            cfg,
            gateway: Arc::new(gateway),
        })
    }

    /// A caller-supplied gateway, e.g. a mock whose requests a test inspects.
    pub fn with_gateway(cfg: EngineConfig, gateway: Arc<Gateway>) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Self { cfg, gateway })
    }

    pub fn schema(&self) -> Result<SchemaConfig, EngineError> {
        match &self.cfg.schema {
            Some(p) => Ok(SchemaConfig::load(p)?),
            None => Ok(SchemaConfig::default()),
        }
    }

    /// Ingest, chunk, extract and merge. Per-document and per-chunk failures
    /// are recorded, not fatal; a run in which every chunk failed at the
    /// gateway is reported as an unreachable gateway.
    pub fn build(&self) -> Result<BuildSummary, EngineError> {
        let started = Instant::now();
        let corpus_path = self
            .cfg
            .corpus
            .clone()
            .ok_or_else(|| EngineError::Config("no corpus path configured".into()))?;
        if !corpus_path.exists() {
            return Err(EngineError::Config(format!("corpus {} does not exist", corpus_path.display())));
        }
        let schema = self.schema()?;
        let splitter = Splitter::new(self.cfg.split.clone()).map_err(|e| EngineError::Config(e.to_string()))?;
        let _lock = ArtifactLock::acquire(&self.cfg.artifacts)?;

        let corpus = match load_corpus(&corpus_path) {
            Ok(c) => c,
            Err(IngestError::EmptyCorpus(p)) => return Err(EngineError::EmptyCorpus(p)),
            Err(e) => return Err(e.into()),
        };
        for w in &corpus.warnings {
            log::warn!("{w}");
        }
        if corpus.documents.is_empty() {
            return Err(EngineError::EmptyCorpus(corpus_path));
        }
        let cache = ExtractionCache::open(&self.cfg.cache_path())?;
        for e in cache.corrupt_entries() {
            log::warn!("{e}");
        }
        let out = extract_corpus(
            &corpus.documents,
            &splitter,
            &schema,
            &self.gateway,
            Some(&cache),
            self.cfg.gateway.parallelism,
        )?;
        let report = &out.report;
        let gateway_failures = report
            .documents
            .iter()
            .flat_map(|d| &d.failures)
            .filter(|f| f.kind == FailureKind::Gateway)
            .collect::<Vec<_>>();
        if report.total_chunks > 0 && gateway_failures.len() == report.total_chunks {
            return Err(EngineError::GatewayUnreachable(gateway_failures[0].message.clone()));
        }

        let graph = GraphStore::new(schema.fingerprint());
        let mut writer = graph.batch_writer(self.cfg.batch_size)?;
        for t in &out.triples {
            writer.add(t.clone())?;
        }
        let flushed = writer.close()?;
        for r in &flushed.rejected {
            log::warn!("graph merge skipped: {r}");
        }

        write_snapshot(&self.cfg.graph_path(), &graph.snapshot())?;
        write_jsonl(&self.cfg.artifact(TRIPLES_FILE), &out.triples)?;
        write_jsonl(&self.cfg.artifact(CHUNKS_FILE), &out.chunks)?;
        write_jsonl(&self.cfg.artifact(DOCUMENTS_FILE), &corpus.documents)?;
        write_atomic(
            &self.cfg.artifact(REPORT_FILE),
            &serde_json::to_string_pretty(report).expect("report serializes"),
        )?;

        Ok(BuildSummary {
            documents: corpus.documents.len(),
            load_failures: corpus.failures.clone(),
            chunks: report.total_chunks,
            triples: out.triples.len(),
            rejected: report.total_rejected,
            chunk_failures: report.total_failures,
            cache_hits: report.cache_hits,
            nodes: graph.node_count(),
            edges: graph.edge_count(),
            components: graph.connected_components().len(),
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Embed the chunked corpus from the last build into both indexes.
    pub fn index(&self) -> Result<IndexSummary, EngineError> {
        let _lock = ArtifactLock::acquire(&self.cfg.artifacts)?;
        let chunks: Vec<Chunk> = read_jsonl(&self.cfg.artifact(CHUNKS_FILE))?;
        let docs: Vec<SourceDocument> = read_jsonl(&self.cfg.artifact(DOCUMENTS_FILE))?;
        let (chunk_index, f1) = self.embed(&chunk_inputs(&chunks), Level::Chunk)?;
        let (doc_index, f2) = self.embed(
            &document_inputs(&docs, &chunks, self.cfg.retrieval.doc_text_budget),
            Level::Document,
        )?;
        chunk_index.save(&self.cfg.index_path(CHUNK_INDEX_FILE))?;
        doc_index.save(&self.cfg.index_path(DOC_INDEX_FILE))?;
        Ok(IndexSummary {
            chunk_items: chunk_index.len(),
            document_items: doc_index.len(),
            failures: f1 + f2,
        })
    }

    fn embed(&self, inputs: &[IndexInput], level: Level) -> Result<(VectorIndex, usize), EngineError> {
        match build_index(inputs, level, &self.gateway) {
            Ok((index, failures)) => Ok((index, failures.len())),
            Err(RetrievalError::EmptyIndex) if !inputs.is_empty() => {
                // Every embedding failed; surface why.
                match self.gateway.embed(&inputs[0].text) {
                    Err(e) if e.is_unreachable() => Err(EngineError::GatewayUnreachable(e.to_string())),
                    Err(e) => Err(e.into()),
                    Ok(_) => Err(RetrievalError::EmptyIndex.into()),
                }
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn load_graph(&self) -> Result<GraphStore, EngineError> {
        let path = require(self.cfg.graph_path())?;
        Ok(GraphStore::from_snapshot(&read_snapshot(&path)?)?)
    }

    pub fn load_retriever(&self) -> Result<Retriever, EngineError> {
        let chunk = VectorIndex::load(&require(self.cfg.index_path(CHUNK_INDEX_FILE))?)?;
        let document = VectorIndex::load(&require(self.cfg.index_path(DOC_INDEX_FILE))?)?;
        Ok(Retriever {
            chunk: Some(Arc::new(chunk)),
            document: Some(Arc::new(document)),
        })
    }

    /// Everything the agent reads: graph, both indexes, prompt templates.
    pub fn load_context(&self) -> Result<AgentContext, EngineError> {
        let graph = self.load_graph()?;
        let retriever = self.load_retriever()?;
        Ok(AgentContext::new(
            self.gateway.clone(),
            retriever,
            Arc::new(graph),
            self.cfg.retrieval.clone(),
            self.cfg.agent.clone(),
        )?)
    }

    /// The extraction report from the last build, if present.
    pub fn load_report(&self) -> Result<Option<ExtractionReport>, EngineError> {
        let path = self.cfg.artifact(REPORT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| EngineError::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| EngineError::io(&path, e))
    }

    /// Score a snapshot against gold records. Uses the build's extraction
    /// report for timings and coverage when it exists.
    pub fn evaluate(&self, label: &str, gold: &Path, graph: Option<&Path>) -> Result<EvalReport, EngineError> {
        let gold = load_gold(&require(gold.to_path_buf())?)?;
        let graph = match graph {
            Some(p) => GraphStore::from_snapshot(&read_snapshot(&require(p.to_path_buf())?)?)?,
            None => self.load_graph()?,
        };
        let report = self.load_report()?;
        Ok(evaluate(label, &gold, &graph, report.as_ref())?)
    }

    pub fn export_graph(&self) -> Result<GraphSnapshot, EngineError> {
        let path = require(self.cfg.graph_path())?;
        Ok(read_snapshot(&path)?)
    }

    /// Validate a snapshot file and install it as the graph artifact.
    pub fn import_graph(&self, input: &Path) -> Result<GraphSnapshot, EngineError> {
        let snap = read_snapshot(&require(input.to_path_buf())?)?;
        let fingerprint = self.schema()?.fingerprint();
        if snap.header.schema_fingerprint != fingerprint {
            log::warn!(
                "imported snapshot schema fingerprint {} differs from the configured schema {}",
                snap.header.schema_fingerprint,
                fingerprint
            );
        }
        let _lock = ArtifactLock::acquire(&self.cfg.artifacts)?;
        write_snapshot(&self.cfg.graph_path(), &snap)?;
        Ok(snap)
    }

    /// SHA-256 of each artifact the service reads, by role.
    pub fn fingerprints(&self) -> Result<BTreeMap<String, String>, EngineError> {
        let mut out = BTreeMap::new();
        for (name, path) in [
            ("graph", self.cfg.graph_path()),
            ("chunk_index", self.cfg.index_path(CHUNK_INDEX_FILE)),
            ("doc_index", self.cfg.index_path(DOC_INDEX_FILE)),
        ] {
            out.insert(name.to_string(), file_sha256(&path)?);
        }
        Ok(out)
    }
}

fn require(path: PathBuf) -> Result<PathBuf, EngineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(EngineError::MissingArtifact(path))
    }
}

pub fn file_sha256(path: &Path) -> Result<String, EngineError> {
    let bytes = fs::read(require(path.to_path_buf())?).map_err(|e| EngineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_atomic(path: &Path, text: &str) -> Result<(), EngineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EngineError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| EngineError::io(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| EngineError::io(&tmp, e))?;
    f.sync_all().map_err(|e| EngineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| EngineError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EngineError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("rows serialize"));
        text.push('\n');
    }
    write_atomic(path, &text)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EngineError> {
    let path = require(path.to_path_buf())?;
    let text = fs::read_to_string(&path).map_err(|e| EngineError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EngineError::io(&path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Step trace and evidence list, for the stream next to the answer.
pub fn render_trace(answer: &AgentAnswer) -> String {
    let mut out = String::new();
    for (i, s) in answer.steps.iter().enumerate() {
        out.push_str(&format!("Step {}\nThought: {}\n", i + 1, s.thought));
        if let Some(a) = &s.action {
            out.push_str(&format!("Action: {}\nAction Input: {}\n", a.tool, a.input));
        }
        if let Some(o) = &s.observation {
            out.push_str(&format!("Observation: {o}\n"));
        }
    }
    if answer.evidence.is_empty() {
        out.push_str("Evidence: none\n");
    } else {
        out.push_str("Evidence:\n");
        for e in &answer.evidence {
            let kind = match e.kind {
                EvidenceKind::Chunk => "chunk",
                EvidenceKind::Document => "document",
                EvidenceKind::Entity => e.entity_type.as_deref().unwrap_or("entity"),
            };
            out.push_str(&format!("- [{}] {kind}: {}\n", e.id, e.snippet));
        }
    }
    if answer.degraded {
        out.push_str("(answered without evidence)\n");
    }
    out
}
