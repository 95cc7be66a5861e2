//! Embedded property graph with merge semantics.
//!
//! Nodes are unique per `(type, key)`, edges per `(src, rel_type, dst)`.
//! Re-merging an edge unions its provenance. Node properties are set on
//! creation only. A node's display name is the surface form from its
//! smallest provenance (smallest name on ties), so the final graph does not
//! depend on write order.

mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use snapshot::{read_snapshot, write_snapshot, GraphSnapshot, SnapshotHeader, SNAPSHOT_VERSION};

use crate::extraction::{EntityRef, Provenance, Triple};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("self-loop on {0} rejected")]
    SelfLoopRejected(String),
    #[error("batch writer is closed")]
    WriterClosed,
    #[error("another batch writer is open")]
    WriterBusy,
    #[error("unknown node {0}")]
    UnknownNode(NodeRef),
    #[error("empty key or type")]
    EmptyKey,
    #[error("snapshot line {line}: {message}")]
    SnapshotParse { line: usize, message: String },
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("io: {0}")]
    Io(String),
}

/// Node identity, ordered by `(type, key)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRef {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub key: String,
}

impl NodeRef {
    pub fn new(entity_type: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            entity_type: entity_type.into(),
            key: key.into(),
        }
    }
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.entity_type, self.key)
    }
}

impl From<&EntityRef> for NodeRef {
    fn from(e: &EntityRef) -> Self {
        NodeRef::new(e.entity_type.clone(), e.key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityNode {
    pub key: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub display_name: String,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

impl EntityNode {
    pub fn node_ref(&self) -> NodeRef {
        NodeRef::new(self.entity_type.clone(), self.key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationEdge {
    pub src: NodeRef,
    pub rel_type: String,
    pub dst: NodeRef,
    pub provenance: BTreeSet<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    #[default]
    Both,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "out" => Ok(Direction::Out),
            "in" => Ok(Direction::In),
            "both" => Ok(Direction::Both),
            other => Err(format!("direction must be out, in or both, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub created_nodes: usize,
    pub created_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeState {
    node: EntityNode,
    /// Provenance the display name was taken from; `None` for bare merges.
    name_origin: Option<Provenance>,
}

type EdgeKey = (NodeRef, String, NodeRef);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct GraphState {
    nodes: BTreeMap<NodeRef, NodeState>,
    edges: BTreeMap<EdgeKey, BTreeSet<Provenance>>,
    out_adj: BTreeMap<NodeRef, BTreeSet<NodeRef>>,
    in_adj: BTreeMap<NodeRef, BTreeSet<NodeRef>>,
}

impl GraphState {
    fn merge_node(
        &mut self,
        r: &NodeRef,
        name: &str,
        props: &BTreeMap<String, String>,
        origin: Option<&Provenance>,
    ) -> bool {
        if let Some(st) = self.nodes.get_mut(r) {
            for (k, v) in props {
                st.node.properties.entry(k.clone()).or_insert_with(|| v.clone());
            }
            if let Some(o) = origin {
                let better = match st.name_origin.as_ref() {
                    None => true,
                    Some(cur) => o < cur || (o == cur && name < st.node.display_name.as_str()),
                };
                if better {
                    st.node.display_name = name.to_string();
                    st.name_origin = Some(o.clone());
                }
            }
            return false;
        }
        self.nodes.insert(
            r.clone(),
            NodeState {
                node: EntityNode {
                    key: r.key.clone(),
                    entity_type: r.entity_type.clone(),
                    display_name: name.to_string(),
                    properties: props.clone(),
                },
                name_origin: origin.cloned(),
            },
        );
        true
    }

    fn merge_triple(&mut self, t: &Triple, self_loops: &BTreeSet<String>) -> Result<MergeOutcome, GraphError> {
        let h = NodeRef::from(&t.head);
        let d = NodeRef::from(&t.tail);
        if h.key.is_empty() || d.key.is_empty() || h.entity_type.is_empty() || d.entity_type.is_empty() {
            return Err(GraphError::EmptyKey);
        }
        if h == d && !self_loops.contains(&t.relation) {
            return Err(GraphError::SelfLoopRejected(format!("{h} {}", t.relation)));
        }
        let none = BTreeMap::new();
        let mut created_nodes = usize::from(self.merge_node(&h, &t.head.name, &none, Some(&t.provenance)));
        created_nodes += usize::from(self.merge_node(&d, &t.tail.name, &none, Some(&t.provenance)));
        let key = (h.clone(), t.relation.clone(), d.clone());
        let created_edge = !self.edges.contains_key(&key);
        self.edges.entry(key).or_default().insert(t.provenance.clone());
        if created_edge {
            self.out_adj.entry(h.clone()).or_default().insert(d.clone());
            self.in_adj.entry(d).or_default().insert(h);
        }
        Ok(MergeOutcome {
            created_nodes,
            created_edge,
        })
    }

    fn check(&self) -> Result<(), GraphError> {
        for (s, _, d) in self.edges.keys() {
            for end in [s, d] {
                if !self.nodes.contains_key(end) {
                    return Err(GraphError::IntegrityViolation(format!("edge endpoint {end} missing")));
                }
            }
        }
        Ok(())
    }
}

/// Counts from one flush.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushReport {
    pub applied: usize,
    pub created_nodes: usize,
    pub created_edges: usize,
    pub rejected: Vec<String>,
}

/// In-process graph. Single writer, many readers; a flush is applied under
/// the write lock so readers never observe part of a batch.
#[derive(Debug)]
pub struct GraphStore {
    state: RwLock<GraphState>,
    writer_open: AtomicBool,
    allow_self_loops: BTreeSet<String>,
    schema_fingerprint: String,
}

impl GraphStore {
    pub fn new(schema_fingerprint: impl Into<String>) -> Self {
        Self {
            state: RwLock::new(GraphState::default()),
            writer_open: AtomicBool::new(false),
            allow_self_loops: BTreeSet::new(),
            schema_fingerprint: schema_fingerprint.into(),
        }
    }

    /// Relation types for which `head == tail` is accepted.
    pub fn with_self_loops(mut self, relations: impl IntoIterator<Item = String>) -> Self {
        self.allow_self_loops = relations.into_iter().collect();
        self
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    fn read(&self) -> RwLockReadGuard<'_, GraphState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, GraphState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn merge_entity(
        &self,
        key: &str,
        entity_type: &str,
        display_name: &str,
        properties: &BTreeMap<String, String>,
    ) -> Result<NodeRef, GraphError> {
        if key.is_empty() || entity_type.is_empty() {
            return Err(GraphError::EmptyKey);
        }
        let r = NodeRef::new(entity_type, key);
        self.write().merge_node(&r, display_name, properties, None);
        Ok(r)
    }

    pub fn merge_triple(&self, t: &Triple) -> Result<MergeOutcome, GraphError> {
        let mut st = self.write();
        let out = st.merge_triple(t, &self.allow_self_loops)?;
        debug_assert!(st.check().is_ok());
        Ok(out)
    }

    /// Open the single batch writer.
    pub fn batch_writer(&self, batch_size: usize) -> Result<BatchWriter<'_>, GraphError> {
        if self.writer_open.swap(true, Ordering::AcqRel) {
            return Err(GraphError::WriterBusy);
        }
        Ok(BatchWriter {
            store: self,
            batch_size: batch_size.max(1),
            buffer: Vec::new(),
            flushes: 0,
            totals: FlushReport::default(),
            closed: false,
        })
    }

    fn apply(&self, batch: &[Triple]) -> FlushReport {
        let mut st = self.write();
        let mut report = FlushReport::default();
        for t in batch {
            match st.merge_triple(t, &self.allow_self_loops) {
                Ok(o) => {
                    report.applied += 1;
                    report.created_nodes += o.created_nodes;
                    report.created_edges += usize::from(o.created_edge);
                }
                Err(e) => report.rejected.push(e.to_string()),
            }
        }
        debug_assert!(st.check().is_ok());
        report
    }

    pub fn node_count(&self) -> usize {
        self.read().nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.read().edges.len()
    }

    pub fn node(&self, r: &NodeRef) -> Option<EntityNode> {
        self.read().nodes.get(r).map(|s| s.node.clone())
    }

    /// Nodes with this canonical key, any type.
    pub fn nodes_with_key(&self, key: &str) -> Vec<EntityNode> {
        self.read()
            .nodes
            .values()
            .filter(|s| s.node.key == key)
            .map(|s| s.node.clone())
            .collect()
    }

    /// Nodes whose key contains every term of `query` (already canonical).
    pub fn find_nodes(&self, query: &str, limit: usize) -> Vec<EntityNode> {
        let key = crate::canon::canonical_key(query);
        if key.is_empty() {
            return Vec::new();
        }
        let st = self.read();
        let exact = st.nodes.values().filter(|s| s.node.key == key);
        let partial = st.nodes.values().filter(|s| s.node.key != key && s.node.key.contains(&key));
        exact.chain(partial).take(limit).map(|s| s.node.clone()).collect()
    }

    pub fn neighborhood(&self, r: &NodeRef, dir: Direction) -> Result<BTreeSet<NodeRef>, GraphError> {
        let st = self.read();
        if !st.nodes.contains_key(r) {
            return Err(GraphError::UnknownNode(r.clone()));
        }
        let mut out = BTreeSet::new();
        if matches!(dir, Direction::Out | Direction::Both) {
            out.extend(st.out_adj.get(r).into_iter().flatten().cloned());
        }
        if matches!(dir, Direction::In | Direction::Both) {
            out.extend(st.in_adj.get(r).into_iter().flatten().cloned());
        }
        Ok(out)
    }

    /// Edges touching `r` in the given direction, in snapshot order.
    pub fn incident_edges(&self, r: &NodeRef, dir: Direction) -> Result<Vec<RelationEdge>, GraphError> {
        let st = self.read();
        if !st.nodes.contains_key(r) {
            return Err(GraphError::UnknownNode(r.clone()));
        }
        Ok(st
            .edges
            .iter()
            .filter(|((s, _, d), _)| match dir {
                Direction::Out => s == r,
                Direction::In => d == r,
                Direction::Both => s == r || d == r,
            })
            .map(|((s, rel, d), p)| RelationEdge {
                src: s.clone(),
                rel_type: rel.clone(),
                dst: d.clone(),
                provenance: p.clone(),
            })
            .collect())
    }

    /// Exactly the nodes of `s` and every edge with both endpoints in `s`.
    pub fn induced_subgraph(&self, s: &BTreeSet<NodeRef>) -> Result<GraphSnapshot, GraphError> {
        let st = self.read();
        if let Some(missing) = s.iter().find(|r| !st.nodes.contains_key(*r)) {
            return Err(GraphError::UnknownNode(missing.clone()));
        }
        let nodes = s.iter().map(|r| st.nodes[r].node.clone()).collect();
        let edges = st
            .edges
            .iter()
            .filter(|((a, _, b), _)| s.contains(a) && s.contains(b))
            .map(|((a, rel, b), p)| RelationEdge {
                src: a.clone(),
                rel_type: rel.clone(),
                dst: b.clone(),
                provenance: p.clone(),
            })
            .collect();
        Ok(GraphSnapshot::new(self.schema_fingerprint.clone(), nodes, edges))
    }

    /// Partition of the nodes by undirected connectivity. Members are sorted;
    /// components are ordered by their smallest member.
    pub fn connected_components(&self) -> Vec<Vec<NodeRef>> {
        let st = self.read();
        let mut seen: BTreeSet<&NodeRef> = BTreeSet::new();
        let mut out = Vec::new();
        for start in st.nodes.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = vec![start.clone()];
            let mut stack = vec![start];
            while let Some(n) = stack.pop() {
                let adj = st.out_adj.get(n).into_iter().chain(st.in_adj.get(n)).flatten();
                for m in adj {
                    if seen.insert(m) {
                        comp.push(m.clone());
                        stack.push(m);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }

    /// Component containing `r`, sorted.
    pub fn component_of(&self, r: &NodeRef) -> Result<Vec<NodeRef>, GraphError> {
        if self.node(r).is_none() {
            return Err(GraphError::UnknownNode(r.clone()));
        }
        Ok(self
            .connected_components()
            .into_iter()
            .find(|c| c.binary_search(r).is_ok())
            .expect("every node lies in a component"))
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        let st = self.read();
        let nodes = st.nodes.values().map(|s| s.node.clone()).collect();
        let edges = st
            .edges
            .iter()
            .map(|((s, rel, d), p)| RelationEdge {
                src: s.clone(),
                rel_type: rel.clone(),
                dst: d.clone(),
                provenance: p.clone(),
            })
            .collect();
        GraphSnapshot::new(self.schema_fingerprint.clone(), nodes, edges)
    }

    /// Build a store from a snapshot after checking uniqueness and
    /// referential integrity. Nothing is committed on failure.
    pub fn from_snapshot(snap: &GraphSnapshot) -> Result<Self, GraphError> {
        let mut st = GraphState::default();
        for n in &snap.nodes {
            if n.key.is_empty() || n.entity_type.is_empty() {
                return Err(GraphError::IntegrityViolation(format!("node {:?} has an empty key or type", n.key)));
            }
            if st
                .nodes
                .insert(
                    n.node_ref(),
                    NodeState {
                        node: n.clone(),
                        name_origin: None,
                    },
                )
                .is_some()
            {
                return Err(GraphError::IntegrityViolation(format!("duplicate node {}", n.node_ref())));
            }
        }
        for e in &snap.edges {
            for end in [&e.src, &e.dst] {
                if !st.nodes.contains_key(end) {
                    return Err(GraphError::IntegrityViolation(format!(
                        "edge {} -[{}]-> {} has missing endpoint {end}",
                        e.src, e.rel_type, e.dst
                    )));
                }
            }
            let key = (e.src.clone(), e.rel_type.clone(), e.dst.clone());
            if st.edges.insert(key, e.provenance.clone()).is_some() {
                return Err(GraphError::IntegrityViolation(format!(
                    "duplicate edge {} -[{}]-> {}",
                    e.src, e.rel_type, e.dst
                )));
            }
            st.out_adj.entry(e.src.clone()).or_default().insert(e.dst.clone());
            st.in_adj.entry(e.dst.clone()).or_default().insert(e.src.clone());
        }
        // Display names from imported nodes keep their origin as the smallest
        // provenance of any incident edge, so later merges stay order-free.
        for ((s, _, d), prov) in &st.edges.clone() {
            if let Some(min) = prov.iter().next() {
                for end in [s, d] {
                    let ns = st.nodes.get_mut(end).expect("checked above");
                    if ns.name_origin.as_ref().is_none_or(|cur| min < cur) {
                        ns.name_origin = Some(min.clone());
                    }
                }
            }
        }
        Ok(Self {
            state: RwLock::new(st),
            writer_open: AtomicBool::new(false),
            allow_self_loops: BTreeSet::new(),
            schema_fingerprint: snap.header.schema_fingerprint.clone(),
        })
    }
}

/// Buffered writer. Reaching `batch_size` flushes automatically; closing
/// or dropping flushes the remainder.
#[derive(Debug)]
pub struct BatchWriter<'a> {
    store: &'a GraphStore,
    batch_size: usize,
    buffer: Vec<Triple>,
    flushes: usize,
    totals: FlushReport,
    closed: bool,
}

impl BatchWriter<'_> {
    pub fn add(&mut self, t: Triple) -> Result<(), GraphError> {
        if self.closed {
            return Err(GraphError::WriterClosed);
        }
        self.buffer.push(t);
        if self.buffer.len() >= self.batch_size {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<FlushReport, GraphError> {
        if self.closed {
            return Err(GraphError::WriterClosed);
        }
        if self.buffer.is_empty() {
            return Ok(FlushReport::default());
        }
        let batch = std::mem::take(&mut self.buffer);
        let r = self.store.apply(&batch);
        self.flushes += 1;
        self.totals.applied += r.applied;
        self.totals.created_nodes += r.created_nodes;
        self.totals.created_edges += r.created_edges;
        self.totals.rejected.extend(r.rejected.iter().cloned());
        Ok(r)
    }

    /// Number of non-empty flushes so far.
    pub fn flushes(&self) -> usize {
        self.flushes
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn close(mut self) -> Result<FlushReport, GraphError> {
        self.finish()
    }

    fn finish(&mut self) -> Result<FlushReport, GraphError> {
        if self.closed {
            return Err(GraphError::WriterClosed);
        }
        self.flush()?;
        self.closed = true;
        self.store.writer_open.store(false, Ordering::Release);
        Ok(std::mem::take(&mut self.totals))
    }
}

impl Drop for BatchWriter<'_> {
    fn drop(&mut self) {
        if !self.closed {
            let _ = self.finish();
        }
    }
}
