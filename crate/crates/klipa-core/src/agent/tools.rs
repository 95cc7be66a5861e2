use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{snippet, AgentContext, Evidence, EvidenceKind};
use crate::canon::canonical_key;
use crate::graph::{Direction, EntityNode, GraphStore, NodeRef};
use crate::retrieval::Level;

/// Edges listed per node before the rest are summarized.
const MAX_EDGES_SHOWN: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: String,
}

pub const CHUNK_RETRIEVER: &str = "chunk_retriever";
pub const DOCUMENT_RETRIEVER: &str = "document_retriever";
pub const GRAPH_NEIGHBORHOOD: &str = "graph_neighborhood";
pub const GRAPH_SUBGRAPH: &str = "graph_subgraph";

pub fn tool_specs() -> Vec<ToolSpec> {
    let spec = |name: &str, description: &str, input_schema: &str| ToolSpec {
        name: name.into(),
        description: description.into(),
        input_schema: input_schema.into(),
    };
    vec![
        spec(
            CHUNK_RETRIEVER,
            "Searches short passages of patent text. Best for a specific detail.",
            "free-text search query",
        ),
        spec(
            DOCUMENT_RETRIEVER,
            "Searches whole patent documents. Best for questions spanning several patents.",
            "free-text search query",
        ),
        spec(
            GRAPH_NEIGHBORHOOD,
            "Lists the entities directly linked to one entity in the knowledge graph, grouped by relation.",
            "one entity name or key, e.g. a patent number or a company name",
        ),
        spec(
            GRAPH_SUBGRAPH,
            "Lists every relation among a set of entities in the knowledge graph.",
            "comma-separated entity names or keys",
        ),
    ]
}

/// One line per tool: name, description and input shape.
pub fn render_roster(tools: &[ToolSpec]) -> String {
    tools
        .iter()
        .map(|t| format!("- {}: {} Input: {}.", t.name, t.description, t.input_schema))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub observation: String,
    pub evidence: Vec<Evidence>,
}

impl ToolOutput {
    fn error(message: String) -> Self {
        Self {
            observation: format!("ERROR: {message}"),
            evidence: Vec::new(),
        }
    }
}

/// Dispatch by name. Failures come back as `ERROR: ...` observations.
pub fn execute_tool(tool: &str, input: &str, ctx: &AgentContext) -> ToolOutput {
    match tool {
        CHUNK_RETRIEVER => retrieve(Level::Chunk, input, ctx),
        DOCUMENT_RETRIEVER => retrieve(Level::Document, input, ctx),
        GRAPH_NEIGHBORHOOD => neighborhood(input, ctx),
        GRAPH_SUBGRAPH => subgraph(input, ctx),
        other => {
            let names: Vec<String> = ctx.tools.iter().map(|t| t.name.clone()).collect();
            ToolOutput::error(format!("unknown tool {other}; available: {}", names.join(", ")))
        }
    }
}

fn retrieve(level: Level, input: &str, ctx: &AgentContext) -> ToolOutput {
    if input.trim().is_empty() {
        return ToolOutput::error("empty query".into());
    }
    let index = match ctx.retriever.index(level) {
        Ok(i) => i,
        Err(e) => return ToolOutput::error(e.to_string()),
    };
    let hits = match ctx.retriever.retrieve(level, input, &ctx.gateway, &ctx.retrieval) {
        Ok(h) => h,
        Err(e) => return ToolOutput::error(e.to_string()),
    };
    if hits.is_empty() {
        return ToolOutput {
            observation: format!("No {level} results for \"{}\".", input.trim()),
            evidence: Vec::new(),
        };
    }
    let kind = match level {
        Level::Chunk => EvidenceKind::Chunk,
        Level::Document => EvidenceKind::Document,
    };
    let mut observation = String::new();
    let mut evidence = Vec::new();
    for (i, h) in hits.iter().enumerate() {
        let text = index.get(&h.id).map(|it| snippet(&it.text)).unwrap_or_default();
        let _ = writeln!(observation, "[{}] {} (score {:.4}): {}", i + 1, h.id, h.score, text);
        evidence.push(Evidence {
            id: h.id.clone(),
            kind,
            entity_type: None,
            snippet: text,
        });
    }
    ToolOutput {
        observation: observation.trim_end().to_string(),
        evidence,
    }
}

/// Nodes named by `input`: every type sharing the canonical key, else a
/// `Type:key` reference.
pub fn resolve_entity(input: &str, graph: &GraphStore) -> Vec<EntityNode> {
    let key = canonical_key(input.trim());
    if key.is_empty() {
        return Vec::new();
    }
    let found = graph.nodes_with_key(&key);
    if !found.is_empty() {
        return found;
    }
    if let Some((ty, k)) = input.split_once(':') {
        let r = NodeRef::new(ty.trim(), canonical_key(k));
        if let Some(n) = graph.node(&r) {
            return vec![n];
        }
    }
    Vec::new()
}

fn entity_evidence(n: &EntityNode) -> Evidence {
    Evidence {
        id: n.key.clone(),
        kind: EvidenceKind::Entity,
        entity_type: Some(n.entity_type.clone()),
        snippet: snippet(&format!("{}: {}", n.entity_type, n.display_name)),
    }
}

fn label(ctx: &AgentContext, r: &NodeRef) -> String {
    match ctx.graph.node(r) {
        Some(n) => format!("{r} ({})", n.display_name),
        None => r.to_string(),
    }
}

fn neighborhood(input: &str, ctx: &AgentContext) -> ToolOutput {
    let nodes = resolve_entity(input, &ctx.graph);
    if nodes.is_empty() {
        return ToolOutput::error(format!("unknown entity {}", input.trim()));
    }
    let mut observation = String::new();
    let mut evidence = Vec::new();
    for n in &nodes {
        let r = n.node_ref();
        evidence.push(entity_evidence(n));
        let _ = writeln!(observation, "{}", label(ctx, &r));
        let mut lines: Vec<(String, bool, NodeRef)> = ctx
            .graph
            .incident_edges(&r, Direction::Both)
            .unwrap_or_default()
            .into_iter()
            .map(|e| {
                if e.src == r {
                    (e.rel_type, true, e.dst)
                } else {
                    (e.rel_type, false, e.src)
                }
            })
            .collect();
        lines.sort();
        if lines.is_empty() {
            observation.push_str("  (no relations)\n");
        }
        for (rel, out, other) in lines.iter().take(MAX_EDGES_SHOWN) {
            let arrow = if *out { "->" } else { "<-" };
            let _ = writeln!(observation, "  {rel} {arrow} {}", label(ctx, other));
            if let Some(m) = ctx.graph.node(other) {
                evidence.push(entity_evidence(&m));
            }
        }
        if lines.len() > MAX_EDGES_SHOWN {
            let _ = writeln!(observation, "  ... {} more", lines.len() - MAX_EDGES_SHOWN);
        }
    }
    ToolOutput {
        observation: observation.trim_end().to_string(),
        evidence,
    }
}

fn subgraph(input: &str, ctx: &AgentContext) -> ToolOutput {
    let names: Vec<&str> = input.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return ToolOutput::error("expected comma-separated entity keys".into());
    }
    let mut set = BTreeSet::new();
    let mut unknown = Vec::new();
    for name in &names {
        let found = resolve_entity(name, &ctx.graph);
        if found.is_empty() {
            unknown.push(*name);
        }
        set.extend(found.iter().map(EntityNode::node_ref));
    }
    if !unknown.is_empty() {
        return ToolOutput::error(format!("unknown entity {}", unknown.join(", ")));
    }
    let sub = match ctx.graph.induced_subgraph(&set) {
        Ok(s) => s,
        Err(e) => return ToolOutput::error(e.to_string()),
    };
    let evidence = sub.nodes.iter().map(entity_evidence).collect();
    let mut observation = String::new();
    if sub.edges.is_empty() {
        let _ = write!(observation, "No relations among {}.", names.join(", "));
    }
    for e in &sub.edges {
        let _ = writeln!(observation, "{} -[{}]-> {}", label(ctx, &e.src), e.rel_type, label(ctx, &e.dst));
    }
    ToolOutput {
        observation: observation.trim_end().to_string(),
        evidence,
    }
}
