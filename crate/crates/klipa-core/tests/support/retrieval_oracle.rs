//! Random vector corpora and a brute-force ranking oracle.

use std::collections::BTreeMap;

use klipa_core::gateway::EmbeddingVector;
use klipa_core::retrieval::{
    fuse, keyword_search, vector_search, IndexHeader, IndexedItem, Level, ScoredHit, VectorIndex, INDEX_VERSION,
};
use proptest::prelude::*;

const WORDS: [&str; 12] = [
    "lithium", "electrolyte", "anode", "cathode", "solid", "sulfide", "polymer", "coating", "solar", "cell",
    "membrane", "hydrogen",
];

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dim: usize,
    pub items: Vec<(String, Vec<f64>, String)>,
    pub query: Vec<f64>,
    pub query_text: String,
}

fn nonzero(v: Vec<f64>) -> Vec<f64> {
    if v.iter().all(|x| *x == 0.0) {
        let mut v = v;
        v[0] = 1.0;
        v
    } else {
        v
    }
}

/// Up to 1000 items, dimension 8 to 64. Some items copy an earlier vector
/// so id tie-breaks are exercised.
pub fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (8usize..=64, 1usize..=1000).prop_flat_map(|(dim, n)| {
        let vec = prop::collection::vec(-1.0f64..1.0, dim).prop_map(nonzero);
        let text = prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..8).prop_map(|w| w.join(" "));
        (
            prop::collection::vec((vec.clone(), text, any::<prop::sample::Index>(), 0u8..10), n),
            vec,
            prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..4).prop_map(|w| w.join(" ")),
        )
            .prop_map(move |(raw, query, query_text)| {
                let mut items: Vec<(String, Vec<f64>, String)> = Vec::with_capacity(raw.len());
                for (i, (v, t, src, dup)) in raw.into_iter().enumerate() {
                    let v = if dup == 0 && i > 0 { items[src.index(i)].1.clone() } else { v };
                    items.push((format!("item-{:04}", (i * 7919) % 10007), v, t));
                }
                Corpus {
                    dim,
                    items,
                    query,
                    query_text,
                }
            })
    })
}

pub fn build(c: &Corpus) -> VectorIndex {
    let header = IndexHeader {
        version: INDEX_VERSION,
        level: Level::Chunk,
        dim: c.dim,
        embed_model: "oracle".into(),
    };
    let items = c
        .items
        .iter()
        .map(|(id, v, t)| IndexedItem {
            id: id.clone(),
            level: Level::Chunk,
            vector: EmbeddingVector::from_raw(v.clone()),
            text: t.clone(),
            metadata: BTreeMap::new(),
        })
        .collect();
    VectorIndex::new(header, items).unwrap()
}

fn brute_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// Full scan, filter, sort by (score desc, id asc), cut.
pub fn brute_force(c: &Corpus, top_k: usize, tau: f64) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = c
        .items
        .iter()
        .map(|(id, v, _)| (id.clone(), brute_cosine(&c.query, v)))
        .filter(|(_, s)| *s >= tau)
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(top_k);
    all
}

fn ids(hits: &[ScoredHit]) -> Vec<&str> {
    hits.iter().map(|h| h.id.as_str()).collect()
}

/// Exact rank equality with the brute-force scan; scores within 1e-12.
pub fn check_vector_oracle(c: &Corpus, top_k: usize, tau: f64) -> Result<(), String> {
    let index = build(c);
    let got = vector_search(&index, &EmbeddingVector::from_raw(c.query.clone()), top_k, tau).map_err(|e| e.to_string())?;
    let want = brute_force(c, top_k, tau);
    let got_ids = ids(&got);
    let want_ids: Vec<&str> = want.iter().map(|(i, _)| i.as_str()).collect();
    if got_ids != want_ids {
        return Err(format!("rank mismatch: got {got_ids:?}, want {want_ids:?}"));
    }
    for (g, (_, s)) in got.iter().zip(&want) {
        if (g.score - s).abs() > 1e-12 {
            return Err(format!("{}: score {} vs {}", g.id, g.score, s));
        }
    }
    Ok(())
}

/// Results for a larger tau are a prefix of results for a smaller one.
pub fn check_tau_nesting(c: &Corpus, top_k: usize) -> Result<(), String> {
    let index = build(c);
    let q = EmbeddingVector::from_raw(c.query.clone());
    let grid: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let runs: Vec<Vec<ScoredHit>> = grid
        .iter()
        .map(|&t| vector_search(&index, &q, top_k, t))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, w) in runs.windows(2).enumerate() {
        let (lo, hi) = (ids(&w[0]), ids(&w[1]));
        if hi.len() > lo.len() || lo[..hi.len()] != hi[..] {
            return Err(format!("tau {} not nested in tau {}", grid[i + 1], grid[i]));
        }
    }
    for (t, run) in grid.iter().zip(&runs) {
        if run.iter().any(|h| h.score < *t) {
            return Err(format!("hit below tau {t}"));
        }
    }
    Ok(())
}

/// Zero weight on one source reproduces the other source's order.
pub fn check_degenerate_weights(c: &Corpus, top_k: usize) -> Result<(), String> {
    let index = build(c);
    let q = EmbeddingVector::from_raw(c.query.clone());
    let vector = vector_search(&index, &q, top_k, 0.0).map_err(|e| e.to_string())?;
    let keyword = keyword_search(&index, &c.query_text, top_k);
    let only_vector = fuse(&vector, &keyword, 1.0, 0.0, top_k, Level::Chunk);
    if ids(&only_vector) != ids(&vector) {
        return Err("w_keyword = 0 changed the vector order".into());
    }
    let only_keyword = fuse(&vector, &keyword, 0.0, 1.0, top_k, Level::Chunk);
    if ids(&only_keyword) != ids(&keyword) {
        return Err("w_vector = 0 changed the keyword order".into());
    }
    let mixed = fuse(&vector, &keyword, 0.7, 0.3, top_k, Level::Chunk);
    if mixed.iter().any(|h| !(0.0..=1.0).contains(&h.score)) {
        return Err("fused score outside [0, 1]".into());
    }
    if mixed.windows(2).any(|w| (w[1].score, &w[0].id) > (w[0].score, &w[1].id)) {
        return Err("fused list not ordered by (score desc, id asc)".into());
    }
    Ok(())
}

pub fn cosine_golden() -> f64 {
    klipa_core::retrieval::cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap()
}

/// The five-item keyword fixture and its hand-computed ranking.
pub fn keyword_fixture() -> (VectorIndex, Vec<(&'static str, f64)>) {
    let texts = [
        ("c1", "Lithium metal anode with a lithium fluoride interphase."),
        ("c2", "Sulfide solid electrolyte for lithium batteries."),
        ("c3", "Electrolyte additives reduce gas evolution."),
        ("c4", "Perovskite solar cell with a self assembled monolayer."),
        ("c5", "Polymer electrolyte electrolyte film."),
    ];
    let c = Corpus {
        dim: 2,
        items: texts.iter().map(|(i, t)| (i.to_string(), vec![1.0, 0.0], t.to_string())).collect(),
        query: vec![1.0, 0.0],
        query_text: String::new(),
    };
    // idf(lithium) = ln 3.5, idf(electrolyte) = ln(8/3)
    let golden = vec![("c5", 0.490414626), ("c2", 0.372265370), ("c1", 0.313190742), ("c3", 0.196165851)];
    (build(&c), golden)
}

/// Three items with hand-set vectors; fused ranking computed by hand.
pub fn fusion_fixture() -> (VectorIndex, Vec<f64>, Vec<(&'static str, f64)>) {
    let c = Corpus {
        dim: 2,
        items: vec![
            ("x".into(), vec![1.0, 0.0], "solid electrolyte".into()),
            ("y".into(), vec![0.8, 0.6], "electrolyte additive electrolyte".into()),
            ("z".into(), vec![0.0, 1.0], "anode coating".into()),
        ],
        query: vec![1.0, 0.0],
        query_text: String::new(),
    };
    // vector: x 1, y 0.8, z 0 -> normalized 1, 0.8, 0
    // keyword "electrolyte": y 2/3 idf, x 1/2 idf -> normalized 1, 0
    let golden = vec![("y", 0.86), ("x", 0.70), ("z", 0.0)];
    (build(&c), vec![1.0, 0.0], golden)
}

pub fn check_golden_rankings() -> Result<(), String> {
    let (index, golden) = keyword_fixture();
    let got = keyword_search(&index, "lithium electrolyte", 5);
    if got.len() != golden.len() {
        return Err(format!("keyword golden: {} hits", got.len()));
    }
    for (h, (id, s)) in got.iter().zip(&golden) {
        if h.id != *id || (h.score - s).abs() > 1e-6 {
            return Err(format!("keyword golden: got {} {}, want {id} {s}", h.id, h.score));
        }
    }
    let (index, q, golden) = fusion_fixture();
    let vector = vector_search(&index, &EmbeddingVector::from_raw(q), 3, 0.0).map_err(|e| e.to_string())?;
    let keyword = keyword_search(&index, "electrolyte", 3);
    let fused = fuse(&vector, &keyword, 0.7, 0.3, 3, Level::Chunk);
    if fused.len() != golden.len() {
        return Err(format!("fusion golden: {} hits", fused.len()));
    }
    for (h, (id, s)) in fused.iter().zip(&golden) {
        if h.id != *id || (h.score - s).abs() > 1e-9 {
            return Err(format!("fusion golden: got {} {}, want {id} {s}", h.id, h.score));
        }
    }
    Ok(())
}
