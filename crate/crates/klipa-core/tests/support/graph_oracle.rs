//! Random triple multisets and independent checks of graph invariants.

use std::collections::{BTreeMap, BTreeSet};

use klipa_core::canon::canonical_key;
use klipa_core::extraction::{EntityRef, Provenance, Triple};
use klipa_core::graph::{GraphSnapshot, GraphStore, NodeRef};
use proptest::prelude::*;

const RELATIONS: [(&str, &str, &str, usize); 5] = [
    ("INVENTED_BY", "Patent", "Inventor", 8),
    ("OWNED_BY", "Patent", "Company", 3),
    ("REFERENCES", "Patent", "Patent", 12),
    ("CLASSIFIED_AS", "Patent", "Classification", 4),
    ("USES", "Patent", "Technology", 5),
];
const PATENTS: usize = 12;

/// A surface form whose canonical key is `base` lowercased.
fn surface(base: String, variant: u8) -> String {
    match variant % 4 {
        0 => base,
        1 => base.to_uppercase(),
        2 => format!("  {}", base.replace(' ', "   ")),
        _ => base.to_lowercase(),
    }
}

fn entity(entity_type: &str, idx: usize, variant: u8) -> EntityRef {
    let name = surface(format!("{entity_type} {idx}"), variant);
    EntityRef {
        key: canonical_key(&name),
        entity_type: entity_type.to_string(),
        name: klipa_core::canon::display_form(&name),
    }
}

pub fn triple_strategy() -> impl Strategy<Value = Triple> {
    (0..RELATIONS.len(), 0..PATENTS, 0usize..12, any::<u8>(), any::<u8>(), 0usize..5, 0usize..6).prop_map(
        |(r, h, t, hv, tv, doc, seq)| {
            let (rel, ht, tt, pool) = RELATIONS[r];
            Triple {
                head: entity(ht, h, hv),
                relation: rel.to_string(),
                tail: entity(tt, t % pool, tv),
                provenance: Provenance {
                    doc_id: format!("doc-{doc}"),
                    seq_id: seq,
                },
            }
        },
    )
}

/// Up to 500 triples, duplicates likely.
pub fn multiset_strategy() -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec(triple_strategy(), 0..=500)
}

pub fn single_writes(triples: &[Triple]) -> GraphStore {
    let g = GraphStore::new("fp");
    for t in triples {
        let _ = g.merge_triple(t);
    }
    g
}

/// At most one node per (type, key), one edge per (src, rel, dst), every
/// edge endpoint present, and every accepted triple represented.
pub fn check_invariants(snap: &GraphSnapshot) -> Result<(), String> {
    let mut nodes = BTreeSet::new();
    for n in &snap.nodes {
        if !nodes.insert((n.entity_type.clone(), n.key.clone())) {
            return Err(format!("duplicate node {}:{}", n.entity_type, n.key));
        }
    }
    let mut edges = BTreeSet::new();
    for e in &snap.edges {
        if !edges.insert((e.src.clone(), e.rel_type.clone(), e.dst.clone())) {
            return Err(format!("duplicate edge {} {} {}", e.src, e.rel_type, e.dst));
        }
        for end in [&e.src, &e.dst] {
            if !nodes.contains(&(end.entity_type.clone(), end.key.clone())) {
                return Err(format!("dangling endpoint {end}"));
            }
        }
        if e.provenance.is_empty() {
            return Err(format!("edge {} {} {} has no provenance", e.src, e.rel_type, e.dst));
        }
    }
    Ok(())
}

pub type ExpectedEdges = BTreeMap<(NodeRef, String, NodeRef), BTreeSet<Provenance>>;

/// The snapshot a set of triples must produce, computed without the store.
pub fn expected_snapshot(triples: &[Triple]) -> (BTreeMap<NodeRef, String>, ExpectedEdges) {
    let mut names: BTreeMap<NodeRef, (Provenance, String)> = BTreeMap::new();
    let mut edges: ExpectedEdges = BTreeMap::new();
    for t in triples {
        let (h, d) = (NodeRef::from(&t.head), NodeRef::from(&t.tail));
        if h == d {
            continue;
        }
        for (r, name) in [(&h, &t.head.name), (&d, &t.tail.name)] {
            let cand = (t.provenance.clone(), name.clone());
            names
                .entry(r.clone())
                .and_modify(|cur| {
                    if cand < *cur {
                        *cur = cand.clone();
                    }
                })
                .or_insert(cand);
        }
        edges.entry((h, t.relation.clone(), d)).or_default().insert(t.provenance.clone());
    }
    (names.into_iter().map(|(k, (_, n))| (k, n)).collect(), edges)
}

pub fn matches_expected(snap: &GraphSnapshot, triples: &[Triple]) -> Result<(), String> {
    let (names, edges) = expected_snapshot(triples);
    let got_names: BTreeMap<NodeRef, String> =
        snap.nodes.iter().map(|n| (n.node_ref(), n.display_name.clone())).collect();
    if got_names != names {
        return Err("node set or display names differ from the model".into());
    }
    let got_edges: BTreeMap<_, _> = snap
        .edges
        .iter()
        .map(|e| ((e.src.clone(), e.rel_type.clone(), e.dst.clone()), e.provenance.clone()))
        .collect();
    if got_edges != edges {
        return Err("edge set or provenance differs from the model".into());
    }
    Ok(())
}

/// Union-find over snapshot edges; components as sorted sets.
pub fn union_find_components(snap: &GraphSnapshot) -> BTreeSet<Vec<NodeRef>> {
    let refs: Vec<NodeRef> = snap.nodes.iter().map(|n| n.node_ref()).collect();
    let index: BTreeMap<&NodeRef, usize> = refs.iter().enumerate().map(|(i, r)| (r, i)).collect();
    let mut parent: Vec<usize> = (0..refs.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in &snap.edges {
        let (a, b) = (find(&mut parent, index[&e.src]), find(&mut parent, index[&e.dst]));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeRef>> = BTreeMap::new();
    for (i, r) in refs.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(r.clone());
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect()
}

/// The four graph properties for one multiset, with a given permutation and
/// batch size.
pub fn check_all(triples: &[Triple], permutation: &[usize], batch_size: usize) -> Result<(), String> {
    let reference = single_writes(triples).snapshot();
    check_invariants(&reference)?;
    matches_expected(&reference, triples)?;

    let shuffled: Vec<Triple> = permutation.iter().map(|&i| triples[i].clone()).collect();
    if !single_writes(&shuffled).snapshot().same_content(&reference) {
        return Err("permuted input gives a different snapshot".into());
    }

    let g = GraphStore::new("fp");
    {
        let mut w = g.batch_writer(batch_size).map_err(|e| e.to_string())?;
        for t in &shuffled {
            let before = w.flushes();
            w.add(t.clone()).map_err(|e| e.to_string())?;
            if w.flushes() != before {
                check_invariants(&g.snapshot()).map_err(|e| format!("after flush {}: {e}", w.flushes()))?;
            }
        }
        w.close().map_err(|e| e.to_string())?;
    }
    let batched = g.snapshot();
    check_invariants(&batched)?;
    if !batched.same_content(&reference) {
        return Err(format!("batch size {batch_size} differs from single writes"));
    }

    let got: BTreeSet<Vec<NodeRef>> = g.connected_components().into_iter().collect();
    if got != union_find_components(&batched) {
        return Err("connected_components disagrees with union-find".into());
    }
    Ok(())
}

/// A multiset with a permutation of it and a batch size.
pub fn case_strategy() -> impl Strategy<Value = (Vec<Triple>, Vec<usize>, usize)> {
    multiset_strategy().prop_flat_map(|ts| {
        let n = ts.len();
        (Just(ts), Just((0..n).collect::<Vec<_>>()).prop_shuffle(), 1usize..64)
    })
}
