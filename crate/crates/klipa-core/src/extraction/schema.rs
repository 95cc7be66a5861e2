use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ExtractionError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub name: String,
    pub head_type: String,
    pub tail_type: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

/// Entity types, typed relations and the JSON shape demanded of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<RelationSpec>,
    #[serde(default = "default_output_schema")]
    pub output_schema: Value,
}

fn default_output_schema() -> Value {
    json!([{
        "head": "string",
        "head_type": "string",
        "relation": "string",
        "tail": "string",
        "tail_type": "string"
    }])
}

fn rel(name: &str, head: &str, tail: &str, synonyms: &[&str]) -> RelationSpec {
    RelationSpec {
        name: name.into(),
        head_type: head.into(),
        tail_type: tail.into(),
        synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            entity_types: ["Patent", "Inventor", "Company", "Technology", "Classification"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            relation_types: vec![
                rel("INVENTED_BY", "Patent", "Inventor", &["invented by", "inventor", "has inventor"]),
                rel(
                    "OWNED_BY",
                    "Patent",
                    "Company",
                    &["owned by", "assigned to", "assignee", "applicant", "filed by"],
                ),
                rel("REFERENCES", "Patent", "Patent", &["cites", "cited", "refers to", "reference"]),
                rel(
                    "CLASSIFIED_AS",
                    "Patent",
                    "Classification",
                    &["classified as", "classification", "has classification"],
                ),
                rel("USES", "Patent", "Technology", &["uses", "employs", "utilizes", "uses technology"]),
            ],
            output_schema: default_output_schema(),
        }
    }
}

/// Uppercase, with every run of non-alphanumerics turned into `_`.
pub(crate) fn relation_token(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending = false;
    for c in s.trim().chars() {
        if c.is_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.extend(c.to_uppercase());
        } else {
            pending = true;
        }
    }
    out
}

impl SchemaConfig {
    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExtractionError::Schema(format!("{}: {e}", path.display())))?;
        let schema: SchemaConfig =
            serde_json::from_str(&text).map_err(|e| ExtractionError::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.entity_types {
            if t.trim().is_empty() || !seen.insert(t.as_str()) {
                return Err(ExtractionError::Schema(format!("entity type {t:?} is empty or duplicated")));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for r in &self.relation_types {
            if !names.insert(relation_token(&r.name)) {
                return Err(ExtractionError::Schema(format!("relation {} is duplicated", r.name)));
            }
            for end in [&r.head_type, &r.tail_type] {
                if !self.entity_types.contains(end) {
                    return Err(ExtractionError::Schema(format!(
                        "relation {} uses unknown entity type {end}",
                        r.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Look a relation up by name or synonym, ignoring case and separators.
    pub fn relation(&self, surface: &str) -> Option<&RelationSpec> {
        let token = relation_token(surface);
        if token.is_empty() {
            return None;
        }
        self.relation_types.iter().find(|r| {
            relation_token(&r.name) == token || r.synonyms.iter().any(|s| relation_token(s) == token)
        })
    }

    /// Schema spelling of an entity type, matched case-insensitively.
    pub fn entity_type(&self, surface: &str) -> Option<&str> {
        let want = surface.trim().to_lowercase();
        self.entity_types
            .iter()
            .find(|t| t.to_lowercase() == want)
            .map(String::as_str)
    }

    /// Short stable hash of the schema, recorded in caches and snapshots.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}
