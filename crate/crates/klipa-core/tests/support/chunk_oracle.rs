//! Chunk invariants checked from first principles, plus the frozen greedy
//! reference output.

use std::path::Path;

use klipa_core::chunker::{SplitConfig, Splitter};
use proptest::prelude::*;

/// Longest non-empty match of any separator in `text`, in characters.
pub fn max_separator_match(text: &str, cfg: &SplitConfig) -> usize {
    cfg.separators
        .iter()
        .filter_map(|s| fancy_regex::Regex::new(s).ok())
        .flat_map(|re| {
            re.find_iter(text)
                .filter_map(Result::ok)
                .map(|m| m.as_str().chars().count())
                .collect::<Vec<_>>()
        })
        .max()
        .unwrap_or(0)
}

/// Every documented chunk invariant for one split. `Err` names the first
/// violation.
pub fn check(text: &str, cfg: &SplitConfig, spans: &[((usize, usize), String)]) -> Result<(), String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return if spans.is_empty() { Ok(()) } else { Err("chunks from empty text".into()) };
    }
    let mut covered = vec![false; chars.len()];
    for (i, ((s, e), t)) in spans.iter().enumerate() {
        if !(s < e && *e <= chars.len()) {
            return Err(format!("chunk {i}: bad span ({s}, {e})"));
        }
        let sub: String = chars[*s..*e].iter().collect();
        if &sub != t {
            return Err(format!("chunk {i}: text differs from parent substring"));
        }
        if e - s > cfg.chunk_size {
            return Err(format!("chunk {i}: {} chars over size {}", e - s, cfg.chunk_size));
        }
        covered[*s..*e].iter_mut().for_each(|c| *c = true);
    }
    if let Some(p) = (0..chars.len()).find(|&p| !covered[p] && !chars[p].is_whitespace()) {
        return Err(format!("char {p} ({:?}) not covered", chars[p]));
    }
    let slack = cfg.chunk_overlap + max_separator_match(text, cfg);
    for (i, w) in spans.windows(2).enumerate() {
        let ((s0, e0), _) = &w[0];
        let ((s1, _), _) = &w[1];
        if s1 <= s0 {
            return Err(format!("chunk {}: start {s1} not after {s0}", i + 1));
        }
        if s1 > e0 {
            return Err(format!("gap between chunk {i} and {}", i + 1));
        }
        if e0 - s1 > slack {
            return Err(format!("overlap {} between chunk {i} and {} exceeds {slack}", e0 - s1, i + 1));
        }
    }
    Ok(())
}

/// Text over an alphabet rich in separators, lengths 0 to 5000.
pub fn text_strategy() -> impl Strategy<Value = String> {
    let ch = prop_oneof![
        12 => prop::char::range('a', 'z'),
        3 => Just(' '),
        1 => Just('.'),
        1 => Just('\n'),
        1 => Just('}'),
        1 => Just('\t'),
        1 => prop::sample::select(vec!['é', 'ß', '中', '\u{2014}', '🔋']),
    ];
    (0usize..=5000).prop_flat_map(move |n| prop::collection::vec(ch.clone(), n))
        .prop_map(|v| v.into_iter().collect())
}

#[derive(serde::Deserialize)]
pub struct FrozenChunk {
    pub seq_id: usize,
    pub span: (usize, usize),
    pub text: String,
}

#[derive(serde::Deserialize)]
pub struct Frozen {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub text: String,
    pub chunks: Vec<FrozenChunk>,
}

pub fn load_frozen(fixtures: &Path) -> Frozen {
    let raw = std::fs::read_to_string(fixtures.join("chunker/paragraph_expected.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

/// `Ok` when the recursive splitter reproduces the frozen chunks exactly.
pub fn compare_frozen(frozen: &Frozen) -> Result<(), String> {
    let cfg = SplitConfig {
        chunk_size: frozen.chunk_size,
        chunk_overlap: frozen.chunk_overlap,
        ..SplitConfig::default()
    };
    let got = Splitter::new(cfg.clone()).map_err(|e| e.to_string())?.split_spans(&frozen.text);
    if got.len() != frozen.chunks.len() {
        return Err(format!("{} chunks, expected {}", got.len(), frozen.chunks.len()));
    }
    for (i, (g, f)) in got.iter().zip(&frozen.chunks).enumerate() {
        if f.seq_id != i || g.0 != f.span || g.1.as_bytes() != f.text.as_bytes() {
            return Err(format!("chunk {i}: got {:?} {:?}, expected {:?} {:?}", g.0, g.1, f.span, f.text));
        }
    }
    check(&frozen.text, &cfg, &got)
}

