//! Engine configuration: one strict JSON document, then `KLIPA_*`
//! environment overrides, then command-line overrides.

use std::path::{Path, PathBuf};

use klipa_core::agent::AgentConfig;
use klipa_core::chunker::SplitConfig;
use klipa_core::gateway::GatewayConfig;
use klipa_core::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;

pub const ENV_PREFIX: &str = "KLIPA_";

pub const GRAPH_FILE: &str = "graph.jsonl";
pub const TRIPLES_FILE: &str = "triples.jsonl";
pub const REPORT_FILE: &str = "extraction_report.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const CHUNK_INDEX_FILE: &str = "chunk_index.jsonl";
pub const DOC_INDEX_FILE: &str = "doc_index.jsonl";
pub const LOCK_FILE: &str = ".klipa.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Append-only JSON-lines transcript of session events.
    pub session_log: Option<PathBuf>,
    /// Static files served under `/` (the web UI build).
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            session_log: None,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Corpus directory or JSON-lines manifest.
    pub corpus: Option<PathBuf>,
    /// Schema file; the built-in patent schema when unset.
    pub schema: Option<PathBuf>,
    /// Extraction cache directory; `<artifacts>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    /// Directory holding every build and index artifact.
    pub artifacts: PathBuf,
    /// Snapshot path; `<artifacts>/graph.jsonl` when unset.
    pub graph: Option<PathBuf>,
    /// Index directory; `artifacts` when unset.
    pub index_dir: Option<PathBuf>,
    /// Replaces the live gateway with the offline mock.
    pub mock_fixture: Option<PathBuf>,
    pub batch_size: usize,
    pub split: SplitConfig,
    pub retrieval: RetrievalConfig,
    pub agent: AgentConfig,
    pub gateway: GatewayConfig,
    pub service: ServiceConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            schema: None,
            cache_dir: None,
            artifacts: PathBuf::from("klipa-data"),
            graph: None,
            index_dir: None,
            mock_fixture: None,
            batch_size: 64,
            split: SplitConfig::default(),
            retrieval: RetrievalConfig::default(),
            agent: AgentConfig::default(),
            gateway: GatewayConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Environment keys understood after the prefix. Any other `KLIPA_*`
/// variable is a startup error, like an unknown key in the file.
const ENV_KEYS: &[&str] = &[
    "CONFIG",
    "CORPUS",
    "SCHEMA",
    "CACHE_DIR",
    "ARTIFACTS",
    "GRAPH",
    "INDEX_DIR",
    "MOCK_FIXTURE",
    "BATCH_SIZE",
    "BIND",
    "PORT",
    "SESSION_LOG",
    "STATIC_DIR",
    "CHUNK_SIZE",
    "CHUNK_OVERLAP",
    "TOP_K",
    "TAU",
    "W_VECTOR",
    "W_KEYWORD",
    "MAX_STEPS",
    "HISTORY_WINDOW",
    "LLM_BASE_URL",
    "LLM_MODEL",
    "LLM_API_KEY",
    "EMBED_BASE_URL",
    "EMBED_MODEL",
    "GATEWAY_TIMEOUT_MS",
    "GATEWAY_MAX_RETRIES",
    "GATEWAY_PARALLELISM",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, EngineError> {
    v.parse()
        .map_err(|_| EngineError::Config(format!("{ENV_PREFIX}{key}: not a valid value: {v:?}")))
}

impl EngineConfig {
    /// Parse a config document. Relative paths inside it are taken
    /// relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, EngineError> {
        let mut cfg: EngineConfig =
            serde_json::from_str(text).map_err(|e| EngineError::Config(format!("config: {e}")))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base).map_err(|e| match e {
            EngineError::Config(m) => EngineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.schema,
            &mut self.cache_dir,
            &mut self.graph,
            &mut self.index_dir,
            &mut self.mock_fixture,
            &mut self.service.session_log,
            &mut self.service.static_dir,
            &mut self.agent.prompts_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.artifacts);
    }

    /// Apply `KLIPA_*` overrides from `vars` (name, value pairs, usually
    /// `std::env::vars()`). Unknown `KLIPA_*` names are rejected.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), EngineError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let vars: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|s| (s.to_string(), v)))
            .collect();
        if let Some((k, _)) = vars.iter().find(|(k, _)| !ENV_KEYS.contains(&k.as_str())) {
            return Err(EngineError::Config(format!("unknown environment variable {ENV_PREFIX}{k}")));
        }
        for (k, v) in &vars {
            let v = v.as_str();
            match k.as_str() {
                "CORPUS" => self.corpus = Some(v.into()),
                "SCHEMA" => self.schema = Some(v.into()),
                "CACHE_DIR" => self.cache_dir = Some(v.into()),
                "ARTIFACTS" => self.artifacts = v.into(),
                "GRAPH" => self.graph = Some(v.into()),
                "INDEX_DIR" => self.index_dir = Some(v.into()),
                "MOCK_FIXTURE" => self.mock_fixture = Some(v.into()),
                "BATCH_SIZE" => self.batch_size = parse_num(k, v)?,
                "BIND" => self.service.bind = v.into(),
                "PORT" => self.service.port = parse_num(k, v)?,
                "SESSION_LOG" => self.service.session_log = Some(v.into()),
                "STATIC_DIR" => self.service.static_dir = Some(v.into()),
                "CHUNK_SIZE" => self.split.chunk_size = parse_num(k, v)?,
                "CHUNK_OVERLAP" => self.split.chunk_overlap = parse_num(k, v)?,
                "TOP_K" => self.retrieval.top_k = parse_num(k, v)?,
                "TAU" => self.retrieval.tau = parse_num(k, v)?,
                "W_VECTOR" => self.retrieval.w_vector = parse_num(k, v)?,
                "W_KEYWORD" => self.retrieval.w_keyword = parse_num(k, v)?,
                "MAX_STEPS" => self.agent.max_steps = parse_num(k, v)?,
                "HISTORY_WINDOW" => self.agent.history_window = parse_num(k, v)?,
                // CONFIG is consumed before the file is read; gateway keys below.
                _ => {}
            }
        }
        let lookup = |key: &str| vars.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        self.gateway
            .apply_env(lookup)
            .map_err(|m| EngineError::Config(format!("{ENV_PREFIX}{m}")))
    }

    /// Check everything that can be checked before touching the corpus or
    /// the model.
    pub fn validate(&self) -> Result<(), EngineError> {
        let cfg = |m: String| EngineError::Config(m);
        self.split.validate().map_err(|e| cfg(e.to_string()))?;
        self.retrieval.validate().map_err(|e| cfg(e.to_string()))?;
        self.agent.validate().map_err(|e| cfg(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(cfg("batch_size must be at least 1".into()));
        }
        if self.gateway.parallelism == 0 {
            return Err(cfg("gateway.parallelism must be at least 1".into()));
        }
        for (what, p) in [
            ("schema file", &self.schema),
            ("mock fixture", &self.mock_fixture),
            ("prompts directory", &self.agent.prompts_dir),
            ("static directory", &self.service.static_dir),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(cfg(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.artifacts.join(name)
    }

    pub fn graph_path(&self) -> PathBuf {
        self.graph.clone().unwrap_or_else(|| self.artifact(GRAPH_FILE))
    }

    pub fn index_path(&self, name: &str) -> PathBuf {
        self.index_dir.as_ref().unwrap_or(&self.artifacts).join(name)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.artifact("cache"))
    }
}
