//! The frozen repair corpus: inputs with the triples their author intended.

use std::path::Path;

use klipa_core::extraction::{
    parse_response, repair_json, validate_triples, ParseStage, Provenance, RawTriple, RejectReason, SchemaConfig,
};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Deserialize)]
pub struct Case {
    pub id: String,
    pub kind: String,
    pub input: String,
    pub expected: Vec<RawTriple>,
    #[serde(default)]
    pub reason: Option<String>,
}

pub fn load(fixtures: &Path) -> Vec<Case> {
    std::fs::read_to_string(fixtures.join("repair/cases.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn of_kind<'a>(cases: &'a [Case], kind: &str) -> Vec<&'a Case> {
    cases.iter().filter(|c| c.kind == kind).collect()
}

/// Stage 2 must run, its output must parse strictly, and the triples must
/// be the intended ones.
pub fn check_malformed(c: &Case) -> Result<(), String> {
    if serde_json::from_str::<Value>(&c.input).is_ok() {
        return Err(format!("{}: input is already valid", c.id));
    }
    let parsed = parse_response(&c.input).map_err(|_| format!("{}: unrepairable", c.id))?;
    if parsed.stage != ParseStage::Repaired {
        return Err(format!("{}: stage {:?}", c.id, parsed.stage));
    }
    let repaired = parsed.repaired.as_deref().ok_or(format!("{}: no repaired text", c.id))?;
    serde_json::from_str::<Value>(repaired).map_err(|e| format!("{}: repaired text fails strict parse: {e}", c.id))?;
    if parsed.triples != c.expected {
        return Err(format!("{}: got {:?}", c.id, parsed.triples));
    }
    Ok(())
}

/// Strict parse succeeds on its own and the repair passes leave the text as
/// it was.
pub fn check_valid(c: &Case) -> Result<(), String> {
    let parsed = parse_response(&c.input).map_err(|_| format!("{}: rejected", c.id))?;
    if parsed.stage != ParseStage::Strict || parsed.repaired.is_some() {
        return Err(format!("{}: stage 2 ran", c.id));
    }
    if parsed.triples != c.expected {
        return Err(format!("{}: got {:?}", c.id, parsed.triples));
    }
    match repair_json(&c.input) {
        Some(r) if r == c.input.trim() => Ok(()),
        other => Err(format!("{}: repair passes changed valid text: {other:?}", c.id)),
    }
}

/// Every triple rejected with the named missing key.
pub fn check_missing(c: &Case, schema: &SchemaConfig) -> Result<(), String> {
    let parsed = parse_response(&c.input).map_err(|_| format!("{}: unrepairable", c.id))?;
    if parsed.triples != c.expected {
        return Err(format!("{}: got {:?}", c.id, parsed.triples));
    }
    let prov = Provenance {
        doc_id: "d".into(),
        seq_id: 0,
    };
    let v = validate_triples(&parsed.triples, schema, &prov);
    let want = RejectReason::MissingKey(c.reason.clone().unwrap_or_default());
    if !v.valid.is_empty() || v.rejected.len() != parsed.triples.len() || v.rejected.iter().any(|r| r.reason != want) {
        return Err(format!("{}: expected {want:?}, got {:?}", c.id, v.rejected));
    }
    Ok(())
}
