use super::schema::SchemaConfig;
use crate::chunker::Chunk;

/// Characters of chunk text carried into the prompt.
pub const PROMPT_TEXT_LIMIT: usize = 500;

const TEMPLATE: &str = "Extract from patent text (metadata: {metadata}):
{text}

Constraints:
- Entities: {entities}
- Relations: {relations}
- Output format: {format}

Respond ONLY with valid JSON.";

fn truncated(text: &str) -> String {
    match text.char_indices().nth(PROMPT_TEXT_LIMIT) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

/// Render the extraction prompt for one chunk. Pure and deterministic.
pub fn build_prompt(chunk: &Chunk, schema: &SchemaConfig) -> String {
    let metadata = chunk.metadata.get("source").map(String::as_str).unwrap_or("");
    let entities = schema.entity_types.join(", ");
    let relations = schema
        .relation_types
        .iter()
        .map(|r| format!("{} ({} -> {})", r.name, r.head_type, r.tail_type))
        .collect::<Vec<_>>()
        .join(", ");
    let format = serde_json::to_string(&schema.output_schema).expect("json value serializes");
    // Single pass so placeholder-like text inside the chunk is never expanded.
    let mut out = String::with_capacity(TEMPLATE.len() + chunk.text.len().min(2048));
    let mut rest = TEMPLATE;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("template braces balance");
        match &rest[open + 1..close] {
            "metadata" => out.push_str(metadata),
            "text" => out.push_str(&truncated(&chunk.text)),
            "entities" => out.push_str(&entities),
            "relations" => out.push_str(&relations),
            "format" => out.push_str(&format),
            other => unreachable!("unknown placeholder {other}"),
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}
