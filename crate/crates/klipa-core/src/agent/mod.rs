//! ReAct-style question answering over the indexes and the graph.
//!
//! Each turn renders the agent prompt, asks the model for one step, and
//! either runs the requested tool or stops at a final answer. The loop makes
//! at most `max_steps` step calls plus one synthesis call.

mod parse;
mod prompts;
mod session;
mod tools;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_step, StepIntent};
pub use prompts::{fill, PromptTemplates, AGENT_TEMPLATE, NO_EVIDENCE, SYNTHESIZE_TEMPLATE};
pub use session::{ChatSession, ChatTurn, SessionStore};
pub use tools::{
    execute_tool, render_roster, resolve_entity, tool_specs, ToolOutput, ToolSpec, CHUNK_RETRIEVER, DOCUMENT_RETRIEVER,
    GRAPH_NEIGHBORHOOD, GRAPH_SUBGRAPH,
};

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::graph::{GraphStore, NodeRef};
use crate::retrieval::{Level, RetrievalConfig, Retriever};

/// Evidence snippets are cut to this many characters.
pub const SNIPPET_LIMIT: usize = 400;

pub const STOP_SEQUENCE: &str = "\nObservation:";

const FORMAT_HINT: &str = "\nYour previous reply did not follow the format. Reply with a Thought followed by either an Action and an Action Input, or a Final Answer.\n";
const FORCED_THOUGHT: &str = "Step budget spent or replies unusable; answering from the observations gathered.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("gateway failure after {} steps: {error}", steps.len())]
    Gateway {
        error: GatewayError,
        steps: Vec<ReasoningStep>,
    },
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("session {0} is busy")]
    SessionBusy(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub max_steps: usize,
    /// Prior turns shown to the model.
    pub history_window: usize,
    /// Character budget for rendered history; oldest turns go first.
    pub history_chars: usize,
    pub prompts_dir: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: 6,
            history_window: 5,
            history_chars: 4000,
            prompts_dir: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates, AgentError> {
        match &self.prompts_dir {
            Some(d) => PromptTemplates::load(d),
            None => Ok(PromptTemplates::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub tool: String,
    pub input: String,
}

/// Either an action with its observation, or the final step with neither.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceKind {
    Chunk,
    Document,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Chunk id, document id, or entity key.
    pub id: String,
    pub kind: EvidenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub text: String,
    pub steps: Vec<ReasoningStep>,
    pub evidence: Vec<Evidence>,
    /// Evidence ids cited in `text` as `[id]`.
    pub citations: Vec<String>,
    /// No evidence was gathered.
    pub degraded: bool,
}

/// Everything a run reads. Shared across sessions.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub gateway: Arc<Gateway>,
    pub retriever: Retriever,
    pub graph: Arc<GraphStore>,
    pub retrieval: RetrievalConfig,
    pub config: AgentConfig,
    pub templates: PromptTemplates,
    pub tools: Vec<ToolSpec>,
}

impl AgentContext {
    pub fn new(
        gateway: Arc<Gateway>,
        retriever: Retriever,
        graph: Arc<GraphStore>,
        retrieval: RetrievalConfig,
        config: AgentConfig,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let templates = config.templates()?;
        Ok(Self {
            gateway,
            retriever,
            graph,
            retrieval,
            config,
            templates,
            tools: tool_specs(),
        })
    }

    /// Whether an evidence id names something present right now.
    pub fn resolves(&self, e: &Evidence) -> bool {
        match e.kind {
            EvidenceKind::Chunk => self.retriever.index(Level::Chunk).is_ok_and(|i| i.get(&e.id).is_some()),
            EvidenceKind::Document => self.retriever.index(Level::Document).is_ok_and(|i| i.get(&e.id).is_some()),
            EvidenceKind::Entity => match &e.entity_type {
                Some(t) => self.graph.node(&NodeRef::new(t.clone(), e.id.clone())).is_some(),
                None => !self.graph.nodes_with_key(&e.id).is_empty(),
            },
        }
    }
}

/// Whitespace collapsed, cut to [`SNIPPET_LIMIT`] characters.
pub fn snippet(text: &str) -> String {
    let flat = crate::canon::display_form(text);
    flat.chars().take(SNIPPET_LIMIT).collect()
}

/// The last `window` turns, dropping oldest first until within `budget`.
pub fn render_history(history: &[ChatTurn], window: usize, budget: usize) -> String {
    let start = history.len().saturating_sub(window);
    let mut blocks: Vec<String> = history[start..]
        .iter()
        .map(|t| format!("User: {}\nAssistant: {}", t.user_text, t.answer.text))
        .collect();
    let total = |b: &[String]| b.iter().map(|s| s.chars().count() + 1).sum::<usize>();
    while !blocks.is_empty() && total(&blocks) > budget {
        blocks.remove(0);
    }
    if blocks.is_empty() {
        "(none)".to_string()
    } else {
        blocks.join("\n")
    }
}

pub fn render_scratchpad(steps: &[ReasoningStep]) -> String {
    let mut out = String::new();
    for s in steps {
        let Some(a) = &s.action else { continue };
        out.push_str(&format!(
            "Thought: {}\nAction: {}\nAction Input: {}\nObservation: {}\n",
            s.thought,
            a.tool,
            a.input,
            s.observation.as_deref().unwrap_or("")
        ));
    }
    out
}

pub fn render_agent_prompt(
    query: &str,
    history: &[ChatTurn],
    scratchpad: &[ReasoningStep],
    ctx: &AgentContext,
    format_hint: bool,
) -> String {
    let history = render_history(history, ctx.config.history_window, ctx.config.history_chars);
    let roster = render_roster(&ctx.tools);
    let pad = render_scratchpad(scratchpad);
    fill(
        &ctx.templates.agent,
        &[
            ("tools", &roster),
            ("history", &history),
            ("query", query),
            ("scratchpad", &pad),
            ("format_hint", if format_hint { FORMAT_HINT } else { "" }),
        ],
    )
}

/// One chat call over the accumulated observations; the reply is the
/// answer text.
pub fn synthesize(
    steps: &[ReasoningStep],
    query: &str,
    history: &[ChatTurn],
    ctx: &AgentContext,
) -> Result<String, GatewayError> {
    let observations: Vec<String> = steps
        .iter()
        .filter_map(|s| {
            let a = s.action.as_ref()?;
            Some(format!("[{}: {}]\n{}", a.tool, a.input, s.observation.as_deref()?))
        })
        .collect();
    let observations = if observations.is_empty() {
        NO_EVIDENCE.to_string()
    } else {
        observations.join("\n\n")
    };
    let thoughts = steps
        .iter()
        .map(|s| format!("- {}", s.thought))
        .collect::<Vec<_>>()
        .join("\n");
    let history = render_history(history, ctx.config.history_window, ctx.config.history_chars);
    let prompt = fill(
        &ctx.templates.synthesize,
        &[
            ("history", &history),
            ("query", query),
            ("steps", if thoughts.is_empty() { "(none)" } else { &thoughts }),
            ("observations", &observations),
        ],
    );
    Ok(ctx.gateway.chat(&ChatRequest::prompt(prompt))?.text.trim().to_string())
}

fn add_evidence(all: &mut Vec<Evidence>, new: Vec<Evidence>) {
    for e in new {
        if !all
            .iter()
            .any(|x| x.id == e.id && x.kind == e.kind && x.entity_type == e.entity_type)
        {
            all.push(e);
        }
    }
}

fn finish(text: String, steps: Vec<ReasoningStep>, evidence: Vec<Evidence>) -> AgentAnswer {
    let mut citations: Vec<String> = Vec::new();
    for e in &evidence {
        if text.contains(&format!("[{}]", e.id)) && !citations.contains(&e.id) {
            citations.push(e.id.clone());
        }
    }
    AgentAnswer {
        degraded: evidence.is_empty(),
        text,
        steps,
        evidence,
        citations,
    }
}

/// Answer `query` given prior turns. Does not touch any session.
pub fn run(query: &str, history: &[ChatTurn], ctx: &AgentContext) -> Result<AgentAnswer, AgentError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(AgentError::EmptyQuery);
    }
    let mut steps: Vec<ReasoningStep> = Vec::new();
    let mut evidence = Vec::new();
    let mut malformed = 0;
    for _ in 0..ctx.config.max_steps {
        let prompt = render_agent_prompt(query, history, &steps, ctx, malformed > 0);
        let req = ChatRequest::prompt(prompt).with_stop(vec![STOP_SEQUENCE.to_string()]);
        let reply = match ctx.gateway.chat(&req) {
            Ok(r) => r.text,
            Err(error) => return Err(AgentError::Gateway { error, steps }),
        };
        match parse_step(&reply) {
            StepIntent::Action { thought, tool, input } => {
                let out = execute_tool(&tool, &input, ctx);
                add_evidence(&mut evidence, out.evidence);
                steps.push(ReasoningStep {
                    thought,
                    action: Some(Action { tool, input }),
                    observation: Some(out.observation),
                });
                malformed = 0;
            }
            StepIntent::Final { thought, answer } => {
                steps.push(ReasoningStep {
                    thought,
                    action: None,
                    observation: None,
                });
                return Ok(finish(answer, steps, evidence));
            }
            StepIntent::Malformed { raw } => {
                log::debug!("malformed step: {raw:?}");
                malformed += 1;
                if malformed >= 2 {
                    break;
                }
            }
        }
    }
    let text = match synthesize(&steps, query, history, ctx) {
        Ok(t) => t,
        Err(error) => return Err(AgentError::Gateway { error, steps }),
    };
    steps.push(ReasoningStep {
        thought: FORCED_THOUGHT.to_string(),
        action: None,
        observation: None,
    });
    Ok(finish(text, steps, evidence))
}
