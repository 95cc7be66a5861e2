use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EntityNode, GraphError, NodeRef, RelationEdge};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub version: u32,
    pub schema_fingerprint: String,
    /// RFC 3339, UTC. Taken from `SOURCE_DATE_EPOCH` when set.
    pub created_at: String,
}

/// Nodes sorted by `(type, key)`, edges by `(src, rel_type, dst)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub header: SnapshotHeader,
    pub nodes: Vec<EntityNode>,
    pub edges: Vec<RelationEdge>,
}

pub(crate) fn now_rfc3339() -> String {
    let t = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .map(|s| UNIX_EPOCH + Duration::from_secs(s))
        .unwrap_or_else(SystemTime::now);
    humantime::format_rfc3339_seconds(t).to_string()
}

fn edge_key(e: &RelationEdge) -> (&NodeRef, &str, &NodeRef) {
    (&e.src, e.rel_type.as_str(), &e.dst)
}

impl GraphSnapshot {
    pub fn new(schema_fingerprint: String, mut nodes: Vec<EntityNode>, mut edges: Vec<RelationEdge>) -> Self {
        nodes.sort_by(|a, b| (&a.entity_type, &a.key).cmp(&(&b.entity_type, &b.key)));
        edges.sort_by(|a, b| edge_key(a).cmp(&edge_key(b)));
        Self {
            header: SnapshotHeader {
                version: SNAPSHOT_VERSION,
                schema_fingerprint,
                created_at: now_rfc3339(),
            },
            nodes,
            edges,
        }
    }

    /// Equality of nodes and edges, ignoring the header.
    pub fn same_content(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }

    /// Sort order (which implies uniqueness) and referential integrity.
    pub fn validate(&self) -> Result<(), GraphError> {
        for w in self.nodes.windows(2) {
            if w[0].node_ref() >= w[1].node_ref() {
                return Err(GraphError::IntegrityViolation(format!(
                    "nodes out of order or duplicated at {}",
                    w[1].node_ref()
                )));
            }
        }
        for w in self.edges.windows(2) {
            if edge_key(&w[0]) >= edge_key(&w[1]) {
                return Err(GraphError::IntegrityViolation(format!(
                    "edges out of order or duplicated at {} -[{}]-> {}",
                    w[1].src, w[1].rel_type, w[1].dst
                )));
            }
        }
        let refs: BTreeSet<NodeRef> = self.nodes.iter().map(EntityNode::node_ref).collect();
        for e in &self.edges {
            for end in [&e.src, &e.dst] {
                if !refs.contains(end) {
                    return Err(GraphError::IntegrityViolation(format!(
                        "edge {} -[{}]-> {} has missing endpoint {end}",
                        e.src, e.rel_type, e.dst
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for n in &self.nodes {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "node": n })).expect("node serializes"));
            out.push('\n');
        }
        for e in &self.edges {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "edge": e })).expect("edge serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse the JSON-lines form. Lines may be in any order after the header
    /// as long as nodes precede edges; the result is re-sorted and validated.
    pub fn parse_jsonl(text: &str) -> Result<Self, GraphError> {
        let parse_err = |line: usize, message: String| GraphError::SnapshotParse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty snapshot".into()))?;
        let header: SnapshotHeader = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.version != SNAPSHOT_VERSION {
            return Err(parse_err(1, format!("unsupported version {}", header.version)));
        }
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let v: Value = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
            let Value::Object(mut map) = v else {
                return Err(parse_err(n, "expected an object".into()));
            };
            if map.len() != 1 {
                return Err(parse_err(n, "expected exactly one of \"node\" or \"edge\"".into()));
            }
            if let Some(node) = map.remove("node") {
                if !edges.is_empty() {
                    return Err(parse_err(n, "node line after edge lines".into()));
                }
                nodes.push(serde_json::from_value::<EntityNode>(node).map_err(|e| parse_err(n, e.to_string()))?);
            } else if let Some(edge) = map.remove("edge") {
                edges.push(serde_json::from_value::<RelationEdge>(edge).map_err(|e| parse_err(n, e.to_string()))?);
            } else {
                return Err(parse_err(n, "expected \"node\" or \"edge\"".into()));
            }
        }
        let mut snap = GraphSnapshot::new(header.schema_fingerprint.clone(), nodes, edges);
        snap.header = header;
        snap.validate()?;
        Ok(snap)
    }
}

/// Write via a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_snapshot(path: &Path, snap: &GraphSnapshot) -> Result<(), GraphError> {
    let io = |e: std::io::Error| GraphError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(snap.to_jsonl().as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read_snapshot(path: &Path) -> Result<GraphSnapshot, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
    GraphSnapshot::parse_jsonl(&text)
}
