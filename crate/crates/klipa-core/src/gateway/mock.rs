use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, Completion, GatewayError, Usage};

/// A scripted reply, either a bare string or a string with usage counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Full {
        reply: String,
        #[serde(default)]
        usage: Option<Usage>,
    },
}

impl MockReply {
    fn text(&self) -> &str {
        match self {
            MockReply::Text(t) => t,
            MockReply::Full { reply, .. } => reply,
        }
    }

    fn usage(&self) -> Option<Usage> {
        match self {
            MockReply::Text(_) => None,
            MockReply::Full { usage, .. } => *usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Regex searched in the request transcript.
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub usage: Option<Usage>,
}

/// Replies keyed by turn ordinal (`script`) or by request content (`rules`).
/// Rules are consulted first, in order; the script supplies the next reply
/// when no rule matches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default)]
    pub script: Vec<MockReply>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub chat_model: Option<String>,
    #[serde(default)]
    pub embed_model: Option<String>,
}

impl MockFixture {
    pub const DEFAULT_DIM: usize = 64;

    pub fn scripted<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: replies.into_iter().map(|r| MockReply::Text(r.into())).collect(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::FixtureParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::FixtureParse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Deterministic in-process backend. Chat replies come from the fixture;
/// embeddings are hashed bag-of-words projections, so texts sharing words
/// have positively correlated vectors.
pub struct MockBackend {
    fixture: MockFixture,
    rules: Vec<Regex>,
    dim: usize,
    chat_model: String,
    embed_model: String,
    state: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    next: usize,
    requests: Vec<ChatRequest>,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self::try_new(fixture).expect("mock fixture rules must be valid regexes")
    }

    pub fn try_new(fixture: MockFixture) -> Result<Self, GatewayError> {
        let rules = fixture
            .rules
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map_err(|e| GatewayError::FixtureParse(format!("rule {:?}: {e}", r.pattern)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dim = fixture.embedding_dim.unwrap_or(MockFixture::DEFAULT_DIM);
        if dim == 0 {
            return Err(GatewayError::FixtureParse("embedding_dim must be positive".into()));
        }
        Ok(Self {
            chat_model: fixture.chat_model.clone().unwrap_or_else(|| "mock-chat".into()),
            embed_model: fixture.embed_model.clone().unwrap_or_else(|| "mock-embed".into()),
            fixture,
            rules,
            dim,
            state: Mutex::new(MockState::default()),
        })
    }

    /// Every chat request received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn chat_count(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Backend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        let transcript = req.transcript();
        let mut state = self.state.lock().unwrap();
        state.requests.push(req.clone());
        let (text, usage) = if let Some(i) = self.rules.iter().position(|r| r.is_match(&transcript)) {
            let rule = &self.fixture.rules[i];
            (rule.reply.clone(), rule.usage)
        } else {
            let Some(reply) = self.fixture.script.get(state.next) else {
                return Err(GatewayError::FixtureExhausted(self.fixture.script.len()));
            };
            state.next += 1;
            (reply.text().to_string(), reply.usage())
        };
        let usage = usage.unwrap_or(Usage {
            prompt_tokens: approx_tokens(&transcript),
            completion_tokens: approx_tokens(&text),
        });
        Ok(Completion { text, usage })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(hashed_embedding(text, self.dim))
    }

    fn chat_model(&self) -> &str {
        &self.chat_model
    }

    fn embed_model(&self) -> &str {
        &self.embed_model
    }

    fn embed_dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

/// Sum of per-token pseudo-random vectors in `[-1, 1)^dim`, each derived
/// from SHA-256 of the lowercased token in counter mode. Text without any
/// alphanumeric token is hashed as a whole.
pub(crate) fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut out = vec![0.0; dim];
    if tokens.is_empty() {
        add_token_vector(&mut out, text);
    } else {
        for t in tokens {
            add_token_vector(&mut out, t);
        }
    }
    out
}

fn add_token_vector(out: &mut [f64], token: &str) {
    let dim = out.len();
    let mut i = 0;
    let mut block = 0u32;
    while i < dim {
        let digest = Sha256::new()
            .chain_update(b"klipa-mock-embed\0")
            .chain_update(token.as_bytes())
            .chain_update(block.to_le_bytes())
            .finalize();
        for word in digest.chunks_exact(4) {
            if i == dim {
                break;
            }
            let v = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
            out[i] += v as f64 / 2_147_483_648.0 - 1.0;
            i += 1;
        }
        block += 1;
    }
}
