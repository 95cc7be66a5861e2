//! Patent knowledge-graph construction and question answering.
//!
//! Documents are parsed ([`ingest`]), split ([`chunker`]), turned into typed
//! triples by a language model ([`extraction`]) and merged into an embedded
//! property graph ([`graph`]). Chunk and document embeddings feed a hybrid
//! retriever ([`retrieval`]) that a ReAct loop ([`agent`]) uses together with
//! graph queries. [`metrics`] scores a built graph against gold annotations.
//! All model traffic goes through [`gateway`], which also has a deterministic
//! in-process mock.

pub mod agent;
pub mod canon;
pub mod chunker;
pub mod extraction;
pub mod gateway;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod retrieval;
