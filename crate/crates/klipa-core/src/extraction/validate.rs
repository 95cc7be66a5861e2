use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::repair::RawTriple;
use super::schema::SchemaConfig;
use crate::canon::{canonical_key, display_form};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub seq_id: usize,
}

/// A typed entity reference: canonical key, schema type, display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityRef {
    pub key: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityRef,
    pub relation: String,
    pub tail: EntityRef,
    pub provenance: Provenance,
}

impl Triple {
    /// `(head key, relation, tail key)` with types, ignoring provenance and
    /// display names.
    pub fn identity(&self) -> (String, String, String, String, String) {
        (
            self.head.entity_type.clone(),
            self.head.key.clone(),
            self.relation.clone(),
            self.tail.entity_type.clone(),
            self.tail.key.clone(),
        )
    }

    /// Standalone check of the triple invariants against a schema.
    pub fn check(&self, schema: &SchemaConfig) -> Result<(), String> {
        let spec = schema
            .relation_types
            .iter()
            .find(|r| r.name == self.relation)
            .ok_or_else(|| format!("relation {} is not in the schema", self.relation))?;
        if spec.head_type != self.head.entity_type || spec.tail_type != self.tail.entity_type {
            return Err(format!(
                "{} expects {} -> {}, got {} -> {}",
                spec.name, spec.head_type, spec.tail_type, self.head.entity_type, self.tail.entity_type
            ));
        }
        for end in [&self.head, &self.tail] {
            if end.key.is_empty() || end.key != canonical_key(&end.key) {
                return Err(format!("entity key {:?} is empty or not canonical", end.key));
            }
        }
        if self.head.entity_type == self.tail.entity_type && self.head.key == self.tail.key {
            return Err("self-loop".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum RejectReason {
    MissingKey(String),
    UnknownRelation(String),
    TypeMismatch {
        end: String,
        expected: String,
        found: String,
    },
    SelfLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub raw: RawTriple,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: Vec<Triple>,
    pub rejected: Vec<Rejected>,
}

fn non_empty(v: &Option<String>) -> Option<&str> {
    v.as_deref().filter(|s| !s.trim().is_empty())
}

/// Check each raw triple against the schema. Survivors get canonical keys
/// and are deduplicated within the batch; display names are the first seen
/// surface form per entity.
pub fn validate_triples(raw: &[RawTriple], schema: &SchemaConfig, prov: &Provenance) -> Validation {
    let mut out = Validation::default();
    let mut seen = BTreeSet::new();
    let mut names: BTreeMap<(String, String), String> = BTreeMap::new();

    for r in raw {
        let reject = |reason| Rejected {
            raw: r.clone(),
            reason,
        };
        let (Some(head), Some(relation), Some(tail)) = (non_empty(&r.head), non_empty(&r.relation), non_empty(&r.tail))
        else {
            let missing = [("head", &r.head), ("relation", &r.relation), ("tail", &r.tail)]
                .into_iter()
                .find(|(_, v)| non_empty(v).is_none())
                .map(|(k, _)| k)
                .unwrap_or("head");
            out.rejected.push(reject(RejectReason::MissingKey(missing.into())));
            continue;
        };
        let Some(spec) = schema.relation(relation) else {
            out.rejected.push(reject(RejectReason::UnknownRelation(relation.into())));
            continue;
        };
        let mismatch = [("head", &r.head_type, &spec.head_type), ("tail", &r.tail_type, &spec.tail_type)]
            .into_iter()
            .find_map(|(end, given, expected)| {
                let given = non_empty(given)?;
                (schema.entity_type(given) != Some(expected.as_str())).then(|| RejectReason::TypeMismatch {
                    end: end.into(),
                    expected: expected.clone(),
                    found: given.into(),
                })
            });
        if let Some(reason) = mismatch {
            out.rejected.push(reject(reason));
            continue;
        }
        let head_key = canonical_key(head);
        let tail_key = canonical_key(tail);
        if spec.head_type == spec.tail_type && head_key == tail_key {
            out.rejected.push(reject(RejectReason::SelfLoop));
            continue;
        }
        let mut entity = |key: String, ty: &str, surface: &str| {
            let name = names
                .entry((ty.to_string(), key.clone()))
                .or_insert_with(|| display_form(surface))
                .clone();
            EntityRef {
                key,
                entity_type: ty.to_string(),
                name,
            }
        };
        let triple = Triple {
            head: entity(head_key, &spec.head_type, head),
            relation: spec.name.clone(),
            tail: entity(tail_key, &spec.tail_type, tail),
            provenance: prov.clone(),
        };
        if seen.insert(triple.identity()) {
            out.valid.push(triple);
        }
    }
    out
}
