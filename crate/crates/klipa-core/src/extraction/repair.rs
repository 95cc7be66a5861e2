//! Two-stage parsing of model output into raw triples.
//!
//! Stage 1 is a strict parse of the whole reply. Stage 2 runs five repair
//! passes in a fixed order and then parses strictly again:
//!
//! 1. cut the outermost bracketed span out of surrounding prose or code fences
//! 2. turn single-quoted strings and keys into double-quoted ones
//! 3. quote bare object keys
//! 4. drop trailing commas
//! 5. close containers left open by a truncated reply, dropping the trailing
//!    incomplete element
//!
//! None of the passes changes text that is already valid JSON.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Pre-validation carrier: whatever the model produced for one triple.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_type: Option<String>,
}

impl RawTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: Some(head.into()),
            relation: Some(relation.into()),
            tail: Some(tail.into()),
            ..Self::default()
        }
    }

    fn from_value(v: &Value) -> Self {
        let Value::Object(map) = v else {
            return Self::default();
        };
        let field = |k: &str| match map.get(k) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => Some(other.to_string()),
        };
        Self {
            head: field("head"),
            relation: field("relation"),
            tail: field("tail"),
            head_type: field("head_type"),
            tail_type: field("tail_type"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStage {
    Strict,
    Repaired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub triples: Vec<RawTriple>,
    pub stage: ParseStage,
    /// The text that finally parsed, when stage 2 ran.
    pub repaired: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("model output is not repairable JSON")]
pub struct Unrepairable {
    pub text: String,
}

pub fn parse_response(text: &str) -> Result<ParsedResponse, Unrepairable> {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        if let Some(triples) = coerce(&v) {
            return Ok(ParsedResponse {
                triples,
                stage: ParseStage::Strict,
                repaired: None,
            });
        }
    }
    let unrepairable = || Unrepairable {
        text: text.to_string(),
    };
    let repaired = repair_json(text).ok_or_else(unrepairable)?;
    let v: Value = serde_json::from_str(&repaired).map_err(|_| unrepairable())?;
    let triples = coerce(&v).ok_or_else(unrepairable)?;
    Ok(ParsedResponse {
        triples,
        stage: ParseStage::Repaired,
        repaired: Some(repaired),
    })
}

fn coerce(v: &Value) -> Option<Vec<RawTriple>> {
    match v {
        Value::Array(items) => Some(items.iter().map(RawTriple::from_value).collect()),
        Value::Object(_) => Some(vec![RawTriple::from_value(v)]),
        _ => None,
    }
}

/// Run the repair passes and return the first candidate that parses
/// strictly. Each opening bracket is tried as the span start in turn, so a
/// stray bracket in leading prose does not sink the reply.
pub fn repair_json(text: &str) -> Option<String> {
    let body = strip_fence(text);
    let chars: Vec<char> = body.chars().collect();
    let starts = chars
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, '[' | '{'))
        .map(|(i, _)| i)
        .take(32);
    for start in starts {
        let span = outermost_span(&chars, start);
        let candidate = close_truncated(&remove_trailing_commas(&quote_bare_keys(
            &single_to_double_quotes(&span),
        )));
        if serde_json::from_str::<Value>(&candidate).is_ok() {
            return Some(candidate);
        }
    }
    None
}

/// Contents of the first fenced code block that contains a bracket, or the
/// whole text when there is none. An unterminated fence runs to the end.
fn strip_fence(text: &str) -> &str {
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let (inner, next) = match body.find("```") {
            Some(close) => (&body[..close], &body[close + 3..]),
            None => (body, ""),
        };
        if inner.contains(['[', '{']) {
            return inner;
        }
        rest = next;
    }
    text
}

fn is_value_position(prev: Option<char>) -> bool {
    matches!(prev, None | Some('[' | '{' | ',' | ':'))
}

/// Index of the quote closing a single-quoted string opened at `open`: the
/// first unescaped `'` followed (after whitespace) by a delimiter or the end.
fn single_quote_end(chars: &[char], open: usize) -> Option<usize> {
    let mut i = open + 1;
    while i < chars.len() {
        match chars[i] {
            '\\' => i += 2,
            '\'' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if matches!(next, None | Some(',' | ':' | ']' | '}')) {
                    return Some(i);
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    None
}

/// Pass 1: from `start`, the bracket-balanced span, or the rest of the text
/// when the reply was cut off before it closed.
fn outermost_span(chars: &[char], start: usize) -> String {
    let mut depth = 0usize;
    let mut i = start;
    let mut prev: Option<char> = None;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            '\'' if is_value_position(prev) => match single_quote_end(chars, i) {
                Some(end) => i = end,
                None => break,
            },
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return chars[start..=i].iter().collect();
                }
            }
            _ => {}
        }
        if !c.is_whitespace() {
            prev = Some(c);
        }
        i += 1;
    }
    let rest: String = chars[start..].iter().collect();
    rest.trim_end().trim_end_matches('`').trim_end().to_string()
}

/// Pass 2.
fn single_to_double_quotes(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            let end = (i + 1).min(chars.len());
            out.extend(&chars[start..end]);
            prev = Some('"');
            i = end;
            continue;
        }
        if c == '\'' && is_value_position(prev) {
            let end = single_quote_end(&chars, i);
            let stop = end.unwrap_or(chars.len());
            out.push('"');
            let mut j = i + 1;
            while j < stop {
                match chars[j] {
                    '\\' if chars.get(j + 1) == Some(&'\'') => {
                        out.push('\'');
                        j += 2;
                    }
                    '\\' => {
                        out.push('\\');
                        if let Some(&n) = chars.get(j + 1) {
                            out.push(n);
                        }
                        j += 2;
                    }
                    '"' => {
                        out.push_str("\\\"");
                        j += 1;
                    }
                    ch => {
                        out.push(ch);
                        j += 1;
                    }
                }
            }
            if end.is_some() {
                out.push('"');
            }
            prev = Some('"');
            i = stop + 1;
            continue;
        }
        out.push(c);
        if !c.is_whitespace() {
            prev = Some(c);
        }
        i += 1;
    }
    out
}

/// Copy a double-quoted string starting at `chars[i]`, returning the index
/// after it.
fn copy_string(chars: &[char], mut i: usize, out: &mut String) -> usize {
    out.push('"');
    i += 1;
    while i < chars.len() {
        let c = chars[i];
        out.push(c);
        i += 1;
        if c == '\\' {
            if let Some(&n) = chars.get(i) {
                out.push(n);
                i += 1;
            }
        } else if c == '"' {
            break;
        }
    }
    i
}

/// Pass 3.
fn quote_bare_keys(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 16);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            i = copy_string(&chars, i, &mut out);
            continue;
        }
        out.push(c);
        i += 1;
        if c == '{' || c == ',' {
            let mut j = i;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j < chars.len() && (chars[j].is_ascii_alphabetic() || chars[j] == '_' || chars[j] == '$') {
                let mut k = j;
                while k < chars.len() && (chars[k].is_ascii_alphanumeric() || matches!(chars[k], '_' | '$' | '-')) {
                    k += 1;
                }
                let mut m = k;
                while m < chars.len() && chars[m].is_whitespace() {
                    m += 1;
                }
                if m < chars.len() && chars[m] == ':' {
                    out.extend(&chars[i..j]);
                    out.push('"');
                    out.extend(&chars[j..k]);
                    out.push('"');
                    i = k;
                }
            }
        }
    }
    out
}

/// Pass 4.
fn remove_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            i = copy_string(&chars, i, &mut out);
            continue;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']' | '}')) {
                i += 1;
                continue;
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Object,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Key,
    Colon,
    Value,
    CommaOrClose,
}

struct SafePoint {
    /// Byte offset to cut at.
    at: usize,
    open: Vec<Kind>,
}

/// Pass 5. Balanced input is returned unchanged. Otherwise the text is cut
/// at the last point where an array element (at the shallowest array level
/// seen) was complete, or failing that the last complete object member,
/// and the still-open containers are closed.
fn close_truncated(text: &str) -> String {
    let mut stack: Vec<(Kind, Expect)> = Vec::new();
    let mut array_points: Vec<(usize, SafePoint)> = Vec::new();
    let mut object_points: Vec<SafePoint> = Vec::new();
    let mut in_string = false;
    let mut string_is_key = false;
    let mut escape = false;
    let mut scalar = false;

    fn complete(
        at: usize,
        stack: &mut [(Kind, Expect)],
        array_points: &mut Vec<(usize, SafePoint)>,
        object_points: &mut Vec<SafePoint>,
    ) {
        let open: Vec<Kind> = stack.iter().map(|(k, _)| *k).collect();
        if let Some(top) = stack.last_mut() {
            top.1 = Expect::CommaOrClose;
            match top.0 {
                Kind::Array => array_points.push((open.len(), SafePoint { at, open })),
                Kind::Object => object_points.push(SafePoint { at, open }),
            }
        }
    }

    for (i, c) in text.char_indices() {
        if in_string {
            if escape {
                escape = false;
            } else if c == '\\' {
                escape = true;
            } else if c == '"' {
                in_string = false;
                if string_is_key {
                    if let Some(top) = stack.last_mut() {
                        top.1 = Expect::Colon;
                    }
                } else {
                    complete(i + 1, &mut stack, &mut array_points, &mut object_points);
                }
            }
            continue;
        }
        let ends_scalar = c.is_whitespace() || matches!(c, ',' | ']' | '}' | ':');
        if scalar && ends_scalar {
            scalar = false;
            complete(i, &mut stack, &mut array_points, &mut object_points);
        }
        match c {
            '"' => {
                in_string = true;
                string_is_key = matches!(stack.last(), Some((Kind::Object, Expect::Key)));
            }
            '{' => {
                stack.push((Kind::Object, Expect::Key));
                let open = stack.iter().map(|(k, _)| *k).collect();
                object_points.push(SafePoint { at: i + 1, open });
            }
            '[' => {
                stack.push((Kind::Array, Expect::Value));
                let open: Vec<Kind> = stack.iter().map(|(k, _)| *k).collect();
                array_points.push((open.len(), SafePoint { at: i + 1, open }));
            }
            '}' | ']' => {
                stack.pop();
                complete(i + 1, &mut stack, &mut array_points, &mut object_points);
            }
            ':' => {
                if let Some(top) = stack.last_mut() {
                    top.1 = Expect::Value;
                }
            }
            ',' => {
                if let Some(top) = stack.last_mut() {
                    top.1 = match top.0 {
                        Kind::Object => Expect::Key,
                        Kind::Array => Expect::Value,
                    };
                }
            }
            c if c.is_whitespace() => {}
            _ => scalar = true,
        }
    }

    if stack.is_empty() && !in_string {
        return text.to_string();
    }

    let point = match array_points.iter().map(|(d, _)| *d).min() {
        Some(min_depth) => array_points
            .iter()
            .rev()
            .find(|(d, _)| *d == min_depth)
            .map(|(_, p)| p),
        None => object_points.last(),
    };
    let Some(point) = point else {
        return text.to_string();
    };
    let mut out = text[..point.at].trim_end().trim_end_matches(',').to_string();
    for kind in point.open.iter().rev() {
        out.push(match kind {
            Kind::Object => '}',
            Kind::Array => ']',
        });
    }
    out
}
