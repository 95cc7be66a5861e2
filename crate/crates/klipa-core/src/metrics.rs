//! Evaluation against gold cover-page annotations.
//!
//! RAE is the share of gold entity strings whose canonical key appears as a
//! triple endpoint extracted from the same document. RIC is the share of
//! gold patents whose node is absent or lies outside the connected component
//! of the organization node. Spurious extractions are counted per document
//! but do not affect RAE.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::canonical_key;
use crate::extraction::ExtractionReport;
use crate::graph::{GraphSnapshot, GraphStore, NodeRef};

/// Gold field holding the patent number; its first value is the patent key.
pub const PATENT_FIELD: &str = "patent_number";
pub const PATENT_TYPE: &str = "Patent";
pub const ORG_TYPE: &str = "Company";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no extraction output for gold document {0}")]
    MissingExtraction(String),
    #[error("organization {0} is not in the graph")]
    UnknownOrg(String),
    #[error("gold record {0} has no {field}", field = PATENT_FIELD)]
    MissingPatentKey(String),
    #[error("extraction report has no documents")]
    EmptyReport,
    #[error("gold file line {line}: {message}")]
    GoldParse { line: usize, message: String },
    #[error("gold set is empty")]
    EmptyGold,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub doc_id: String,
    /// Field name to gold strings; every string is one entity.
    pub entities: BTreeMap<String, Vec<String>>,
    pub org_key: String,
}

impl GoldRecord {
    pub fn n_entities(&self) -> usize {
        self.entities.values().map(Vec::len).sum()
    }

    pub fn patent_key(&self) -> Option<String> {
        self.entities
            .get(PATENT_FIELD)
            .and_then(|v| v.first())
            .map(|s| canonical_key(s))
    }
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MetricsError::GoldParse { line: i + 1, message };
        let rec: GoldRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.n_entities() == 0 {
            return Err(err(format!("record {} has no gold entities", rec.doc_id)));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    Ok(out)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    parse_gold(&text)
}

/// Canonical keys of triple endpoints per document, read back from edge
/// provenance.
pub fn extracted_entities(snapshot: &GraphSnapshot) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &snapshot.edges {
        for p in &e.provenance {
            let set = out.entry(p.doc_id.clone()).or_default();
            set.insert(e.src.key.clone());
            set.insert(e.dst.key.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaeDoc {
    pub doc_id: String,
    pub n_accurate: usize,
    pub n_total: usize,
    pub spurious: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaeResult {
    pub rae_percent: f64,
    pub n_accurate: usize,
    pub n_total: usize,
    pub per_doc: Vec<RaeDoc>,
}

pub fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        (part * 100) as f64 / whole as f64
    }
}

/// `extracted` maps every processed document to its extracted keys.
pub fn rae(extracted: &BTreeMap<String, BTreeSet<String>>, gold: &[GoldRecord]) -> Result<RaeResult, MetricsError> {
    let mut per_doc = Vec::with_capacity(gold.len());
    for g in gold {
        let keys = extracted
            .get(&g.doc_id)
            .ok_or_else(|| MetricsError::MissingExtraction(g.doc_id.clone()))?;
        let gold_keys: Vec<String> = g.entities.values().flatten().map(|s| canonical_key(s)).collect();
        let n_accurate = gold_keys.iter().filter(|k| keys.contains(*k)).count();
        let gold_set: BTreeSet<&String> = gold_keys.iter().collect();
        let spurious = keys.iter().filter(|k| !gold_set.contains(k)).count();
        per_doc.push(RaeDoc {
            doc_id: g.doc_id.clone(),
            n_accurate,
            n_total: gold_keys.len(),
            spurious,
        });
    }
    let n_accurate = per_doc.iter().map(|d| d.n_accurate).sum();
    let n_total = per_doc.iter().map(|d| d.n_total).sum();
    Ok(RaeResult {
        rae_percent: percent(n_accurate, n_total),
        n_accurate,
        n_total,
        per_doc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicResult {
    pub ric_percent: f64,
    pub in_cluster_percent: f64,
    pub misclassified: usize,
    pub total: usize,
    /// `(doc_id, in main cluster)`.
    pub per_doc: Vec<(String, bool)>,
}

/// The org node: a Company with this key, else any node with it.
fn org_node(graph: &GraphStore, org_key: &str) -> Option<NodeRef> {
    let key = canonical_key(org_key);
    let company = NodeRef::new(ORG_TYPE, key.clone());
    if graph.node(&company).is_some() {
        return Some(company);
    }
    graph.nodes_with_key(&key).first().map(|n| n.node_ref())
}

/// `patents` maps doc ids to canonical patent keys.
pub fn ric(graph: &GraphStore, org_key: &str, patents: &[(String, String)]) -> Result<RicResult, MetricsError> {
    let org = org_node(graph, org_key).ok_or_else(|| MetricsError::UnknownOrg(org_key.to_string()))?;
    let cluster: BTreeSet<NodeRef> = graph
        .component_of(&org)
        .expect("org node exists")
        .into_iter()
        .collect();
    let per_doc: Vec<(String, bool)> = patents
        .iter()
        .map(|(doc, key)| (doc.clone(), cluster.contains(&NodeRef::new(PATENT_TYPE, key.clone()))))
        .collect();
    let total = per_doc.len();
    let misclassified = per_doc.iter().filter(|(_, inside)| !inside).count();
    Ok(RicResult {
        ric_percent: percent(misclassified, total),
        in_cluster_percent: percent(total - misclassified, total),
        misclassified,
        total,
        per_doc,
    })
}

/// Mean of per-document extraction times.
pub fn timing(report: &ExtractionReport) -> Result<f64, MetricsError> {
    mean_time(&report.documents.iter().map(|d| d.seconds).collect::<Vec<_>>())
}

pub fn mean_time(times: &[f64]) -> Result<f64, MetricsError> {
    if times.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub doc_id: String,
    pub n_accurate: usize,
    pub n_total: usize,
    pub spurious: usize,
    pub time_s: f64,
    pub in_main_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub rae_percent: f64,
    pub ric_percent: f64,
    pub in_cluster_percent: f64,
    pub mean_time_s: f64,
    pub per_doc: Vec<DocEval>,
}

impl EvalReport {
    /// RAE recomputed from the per-document rows.
    pub fn rae_from_rows(&self) -> f64 {
        percent(
            self.per_doc.iter().map(|d| d.n_accurate).sum(),
            self.per_doc.iter().map(|d| d.n_total).sum(),
        )
    }

    pub fn ric_from_rows(&self) -> f64 {
        percent(self.per_doc.iter().filter(|d| !d.in_main_cluster).count(), self.per_doc.len())
    }
}

/// Full evaluation. Groups gold records by organization. With a report,
/// every gold document must have been processed and times come from it;
/// without one, documents absent from the graph count as extracting
/// nothing and times are zero.
pub fn evaluate(
    label: &str,
    gold: &[GoldRecord],
    graph: &GraphStore,
    report: Option<&ExtractionReport>,
) -> Result<EvalReport, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let snapshot = graph.snapshot();
    let mut extracted = extracted_entities(&snapshot);
    let times: BTreeMap<&str, f64> = match report {
        Some(r) => {
            for d in &r.documents {
                extracted.entry(d.doc_id.clone()).or_default();
            }
            r.documents.iter().map(|d| (d.doc_id.as_str(), d.seconds)).collect()
        }
        None => {
            for g in gold {
                extracted.entry(g.doc_id.clone()).or_default();
            }
            BTreeMap::new()
        }
    };
    let rae_result = rae(&extracted, gold)?;

    let mut by_org: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for g in gold {
        let key = g.patent_key().ok_or_else(|| MetricsError::MissingPatentKey(g.doc_id.clone()))?;
        by_org
            .entry(canonical_key(&g.org_key))
            .or_default()
            .push((g.doc_id.clone(), key));
    }
    let mut inside: BTreeMap<String, bool> = BTreeMap::new();
    for (org, patents) in &by_org {
        for (doc, ok) in ric(graph, org, patents)?.per_doc {
            inside.insert(doc, ok);
        }
    }

    let per_doc: Vec<DocEval> = rae_result
        .per_doc
        .iter()
        .map(|d| DocEval {
            doc_id: d.doc_id.clone(),
            n_accurate: d.n_accurate,
            n_total: d.n_total,
            spurious: d.spurious,
            time_s: times.get(d.doc_id.as_str()).copied().unwrap_or(0.0),
            in_main_cluster: inside[&d.doc_id],
        })
        .collect();
    let mean_time_s = match report {
        Some(r) if !r.documents.is_empty() => timing(r)?,
        _ => 0.0,
    };
    let total = per_doc.len();
    let mis = per_doc.iter().filter(|d| !d.in_main_cluster).count();
    Ok(EvalReport {
        label: label.to_string(),
        rae_percent: rae_result.rae_percent,
        ric_percent: percent(mis, total),
        in_cluster_percent: percent(total - mis, total),
        mean_time_s,
        per_doc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("format must be table or json, got {other:?}")),
        }
    }
}

/// The summary row alone: `label | time | RAE | RIC`.
pub fn table_row(r: &EvalReport) -> String {
    format!(
        "{} | {:.2} | {:.2}% | {:.2}%",
        r.label, r.mean_time_s, r.rae_percent, r.ric_percent
    )
}

pub fn render_report(r: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(r).expect("report serializes"),
        ReportFormat::Table => {
            let mut out = String::from("Model | Time (s) | RAE | RIC\n");
            out.push_str(&table_row(r));
            out.push('\n');
            out
        }
    }
}
