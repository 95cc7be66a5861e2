//! Hand-computed metric values and an independent RAE/RIC recomputation.

use std::collections::{BTreeMap, BTreeSet};

use klipa_core::extraction::{DocReport, EntityRef, ExtractionReport, Provenance, Triple};
use klipa_core::graph::{GraphStore, NodeRef};
use klipa_core::metrics::{mean_time, rae, ric, timing, GoldRecord};
use proptest::prelude::*;

pub const RAE_GOLDEN: f64 = 71.43;
pub const RIC_GOLDEN: f64 = 7.5;
pub const TIME_GOLDEN: f64 = 3.0;

/// Lowercased, whitespace-collapsed; written out again here on purpose.
fn key(s: &str) -> String {
    let mut out = String::new();
    for w in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&w.to_lowercase());
    }
    out
}

fn gold(doc: &str, fields: &[(&str, &[&str])], org: &str) -> GoldRecord {
    GoldRecord {
        doc_id: doc.into(),
        entities: fields
            .iter()
            .map(|(f, v)| (f.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect(),
        org_key: org.into(),
    }
}

/// Seven gold strings, five found in differing case and spacing.
pub fn rae_golden() -> Result<f64, String> {
    let g = gold(
        "d1",
        &[
            ("patent_number", &["US 7,000,001 B2"]),
            ("assignee", &["Acme Battery Corp"]),
            ("inventor", &["Ada Lovelace", "Alan Turing", "Grace Hopper"]),
            ("title", &["Solid electrolyte"]),
            ("cited_patent", &["US 6,000,002"]),
        ],
        "Acme Battery Corp",
    );
    let found: BTreeSet<String> = ["us 7,000,001  b2", "ACME battery corp", "ada lovelace", "Alan\tTuring", "solid ELECTROLYTE", "unrelated thing"]
        .iter()
        .map(|s| key(s))
        .collect();
    let r = rae(&BTreeMap::from([("d1".to_string(), found)]), &[g]).map_err(|e| e.to_string())?;
    if (r.n_accurate, r.n_total) != (5, 7) {
        return Err(format!("{} of {}", r.n_accurate, r.n_total));
    }
    Ok(r.rae_percent)
}

fn ent(ty: &str, name: &str) -> EntityRef {
    EntityRef {
        key: key(name),
        entity_type: ty.into(),
        name: name.into(),
    }
}

fn owned(graph: &GraphStore, patent: &str, org: &str) {
    graph
        .merge_triple(&Triple {
            head: ent("Patent", patent),
            relation: "OWNED_BY".into(),
            tail: ent("Company", org),
            provenance: Provenance {
                doc_id: format!("{patent}.txt"),
                seq_id: 0,
            },
        })
        .unwrap();
}

/// 40 patents; 37 owned by the org, 3 by an unrelated company.
/// Returns `(ric, in_cluster)`.
pub fn ric_golden() -> Result<(f64, f64), String> {
    let graph = GraphStore::new("metrics");
    let mut patents = Vec::new();
    for i in 0..40 {
        let p = format!("US {}", 1000 + i);
        owned(&graph, &p, if i % 13 == 5 { "Other Labs" } else { "Acme Corp" });
        patents.push((format!("{p}.txt"), key(&p)));
    }
    let r = ric(&graph, "acme  CORP", &patents).map_err(|e| e.to_string())?;
    if (r.misclassified, r.total) != (3, 40) {
        return Err(format!("{} of {}", r.misclassified, r.total));
    }
    Ok((r.ric_percent, r.in_cluster_percent))
}

fn doc(id: &str, seconds: f64) -> DocReport {
    DocReport {
        doc_id: id.into(),
        chunks: 1,
        triples: 0,
        rejected: 0,
        cache_hits: 0,
        failures: Vec::new(),
        seconds,
    }
}

pub fn timing_golden() -> Result<(f64, f64), String> {
    let report = ExtractionReport {
        model: "mock".into(),
        schema_fingerprint: "fp".into(),
        documents: vec![doc("a", 2.0), doc("b", 4.0)],
        total_chunks: 2,
        total_triples: 0,
        total_rejected: 0,
        total_failures: 0,
        cache_hits: 0,
        cache_corrupt: 0,
    };
    let two = timing(&report).map_err(|e| e.to_string())?;
    let one = mean_time(&[5.0]).map_err(|e| e.to_string())?;
    Ok((two, one))
}

const SURFACES: [&str; 8] = [
    "Acme Corp",
    "Ada Lovelace",
    "US 1",
    "US 2",
    "Solid Electrolyte",
    "Grace Hopper",
    "Northfield Institute",
    "lithium niobate",
];

/// Random case and spacing of one surface.
fn variant(s: &str, mask: u32) -> String {
    let mut out = String::new();
    for (i, w) in s.split(' ').enumerate() {
        if i > 0 {
            out.push_str(if mask & (1 << i) == 0 { " " } else { " \t " });
        }
        if mask & 1 == 1 {
            out.push_str(&w.to_uppercase());
        } else {
            out.push_str(w);
        }
    }
    if mask & 16 != 0 {
        format!("  {out}\n")
    } else {
        out
    }
}

/// Gold records with surface masks, and per-document extracted surfaces.
#[derive(Debug, Clone)]
pub struct RaeCase {
    pub gold: Vec<Vec<(usize, u32)>>,
    pub extracted: Vec<Vec<(usize, u32)>>,
}

pub fn rae_case_strategy() -> impl Strategy<Value = RaeCase> {
    let pick = || (0..SURFACES.len(), any::<u32>());
    (1usize..6).prop_flat_map(move |docs| {
        (
            prop::collection::vec(prop::collection::vec(pick(), 1..6), docs),
            prop::collection::vec(prop::collection::vec(pick(), 0..6), docs),
        )
            .prop_map(|(gold, extracted)| RaeCase { gold, extracted })
    })
}

impl RaeCase {
    fn records(&self, remask: u32) -> Vec<GoldRecord> {
        self.gold
            .iter()
            .enumerate()
            .map(|(d, ents)| GoldRecord {
                doc_id: format!("d{d}"),
                entities: BTreeMap::from([(
                    "entity".to_string(),
                    ents.iter().map(|&(i, m)| variant(SURFACES[i], m ^ remask)).collect(),
                )]),
                org_key: "acme corp".into(),
            })
            .collect()
    }

    fn extracted(&self, remask: u32) -> BTreeMap<String, BTreeSet<String>> {
        self.extracted
            .iter()
            .enumerate()
            .map(|(d, ents)| {
                let keys = ents
                    .iter()
                    .map(|&(i, m)| klipa_core::canon::canonical_key(&variant(SURFACES[i], m ^ remask)))
                    .collect();
                (format!("d{d}"), keys)
            })
            .collect()
    }
}

/// Bounds, oracle agreement, row consistency, canonicalization symmetry,
/// the empty case and monotonicity for one random case.
pub fn check_rae_case(c: &RaeCase) -> Result<(), String> {
    let gold = c.records(0);
    let extracted = c.extracted(0);
    let r = rae(&extracted, &gold).map_err(|e| e.to_string())?;
    if !(0.0..=100.0).contains(&r.rae_percent) {
        return Err(format!("out of bounds {}", r.rae_percent));
    }

    let mut hit = 0usize;
    let mut total = 0usize;
    for g in &gold {
        let keys: BTreeSet<String> = extracted[&g.doc_id].iter().map(|k| key(k)).collect();
        for s in g.entities.values().flatten() {
            total += 1;
            hit += keys.contains(&key(s)) as usize;
        }
    }
    let expect = if total == 0 { 0.0 } else { hit as f64 * 100.0 / total as f64 };
    if (r.rae_percent - expect).abs() > 1e-9 {
        return Err(format!("rae {} vs oracle {expect}", r.rae_percent));
    }
    let rows_acc: usize = r.per_doc.iter().map(|d| d.n_accurate).sum();
    let rows_tot: usize = r.per_doc.iter().map(|d| d.n_total).sum();
    let from_rows = if rows_tot == 0 { 0.0 } else { rows_acc as f64 * 100.0 / rows_tot as f64 };
    if (from_rows - r.rae_percent).abs() > 1e-9 {
        return Err(format!("rows give {from_rows}, aggregate {}", r.rae_percent));
    }

    for remask in [1u32, 2, 17, 31] {
        let gold_only = rae(&extracted, &c.records(remask)).map_err(|e| e.to_string())?;
        let extracted_only = rae(&c.extracted(remask), &gold).map_err(|e| e.to_string())?;
        if gold_only.rae_percent != r.rae_percent || extracted_only.rae_percent != r.rae_percent {
            return Err(format!("case or spacing changed rae under mask {remask}"));
        }
    }

    let empty: BTreeMap<String, BTreeSet<String>> = gold.iter().map(|g| (g.doc_id.clone(), BTreeSet::new())).collect();
    let zero = rae(&empty, &gold).map_err(|e| e.to_string())?.rae_percent;
    if zero != 0.0 {
        return Err(format!("empty extraction gives {zero}"));
    }

    for g in &gold {
        for s in g.entities.values().flatten() {
            let mut more = extracted.clone();
            more.get_mut(&g.doc_id).unwrap().insert(key(s));
            let after = rae(&more, &gold).map_err(|e| e.to_string())?.rae_percent;
            if after < r.rae_percent {
                return Err(format!("adding {s:?} lowered rae {} to {after}", r.rae_percent));
            }
        }
    }
    Ok(())
}

/// Random OWNED_BY and REFERENCES edges among up to 40 patents and 3 companies.
#[derive(Debug, Clone)]
pub struct RicCase {
    pub patents: usize,
    pub edges: Vec<(usize, usize, bool)>,
}

pub fn ric_case_strategy() -> impl Strategy<Value = RicCase> {
    (1usize..40).prop_flat_map(|patents| {
        prop::collection::vec((0..patents, 0..patents.max(3), any::<bool>()), 0..80)
            .prop_map(move |edges| RicCase { patents, edges })
    })
}

/// RIC equals a union-find count and complements in-cluster% exactly.
pub fn check_ric_case(c: &RicCase) -> Result<(), String> {
    let graph = GraphStore::new("metrics");
    let companies = ["Acme Corp", "Other Labs", "Third Co"];
    let patent = |i: usize| format!("US {i}");
    let mut parent: BTreeMap<(String, String), (String, String)> = BTreeMap::new();
    fn find(p: &mut BTreeMap<(String, String), (String, String)>, x: (String, String)) -> (String, String) {
        let up = p.entry(x.clone()).or_insert_with(|| x.clone()).clone();
        if up == x {
            return x;
        }
        let root = find(p, up);
        p.insert(x, root.clone());
        root
    }
    let node = |ty: &str, name: &str| (ty.to_string(), key(name));
    owned(&graph, &patent(0), companies[0]);
    let mut unions = vec![(node("Patent", &patent(0)), node("Company", companies[0]))];
    for &(a, b, own) in &c.edges {
        if own {
            owned(&graph, &patent(a), companies[b % 3]);
            unions.push((node("Patent", &patent(a)), node("Company", companies[b % 3])));
        } else {
            let b = b % c.patents;
            if a == b {
                continue;
            }
            graph
                .merge_triple(&Triple {
                    head: ent("Patent", &patent(a)),
                    relation: "REFERENCES".into(),
                    tail: ent("Patent", &patent(b)),
                    provenance: Provenance {
                        doc_id: "x.txt".into(),
                        seq_id: 0,
                    },
                })
                .unwrap();
            unions.push((node("Patent", &patent(a)), node("Patent", &patent(b))));
        }
    }
    for (a, b) in unions {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra, rb);
        }
    }
    let org_root = find(&mut parent, node("Company", companies[0]));
    let list: Vec<(String, String)> = (0..c.patents).map(|i| (format!("d{i}"), key(&patent(i)))).collect();
    let mut outside = 0;
    for (_, k) in &list {
        let n = ("Patent".to_string(), k.clone());
        let present = parent.contains_key(&n);
        if !present || find(&mut parent, n) != org_root {
            outside += 1;
        }
    }
    let r = ric(&graph, "ACME corp", &list).map_err(|e| e.to_string())?;
    if r.misclassified != outside {
        return Err(format!("{} misclassified, union-find says {outside}", r.misclassified));
    }
    if r.ric_percent + r.in_cluster_percent != 100.0 {
        return Err(format!("{} + {} != 100", r.ric_percent, r.in_cluster_percent));
    }
    if graph.node(&NodeRef::new("Company", key(companies[0]))).is_none() {
        return Err("org node missing".into());
    }
    Ok(())
}
