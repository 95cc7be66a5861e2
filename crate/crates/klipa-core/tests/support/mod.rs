#![allow(dead_code)]

pub mod chunk_oracle;
pub mod repair_corpus;
pub mod graph_oracle;
pub mod retrieval_oracle;
pub mod agent_oracle;
pub mod metrics_oracle;
