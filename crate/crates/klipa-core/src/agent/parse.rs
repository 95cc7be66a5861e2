use serde::{Deserialize, Serialize};

/// What the model asked for on one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepIntent {
    Action { thought: String, tool: String, input: String },
    Final { thought: String, answer: String },
    Malformed { raw: String },
}

const THOUGHT: &str = "Thought:";
const ACTION: &str = "Action:";
const ACTION_INPUT: &str = "Action Input:";
const FINAL: &str = "Final Answer:";
const OBSERVATION: &str = "Observation:";

/// Position of `marker` at the start of a line (after optional spaces).
fn find_marker(text: &str, marker: &str, from: usize) -> Option<usize> {
    let mut search = from;
    while let Some(rel) = text[search..].find(marker) {
        let at = search + rel;
        let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
        if text[line_start..at].trim().is_empty() {
            return Some(at);
        }
        search = at + marker.len();
    }
    None
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

/// Extract a Thought followed by either an Action with its input or a Final
/// Answer, whichever marker comes first. Prose around the markers is
/// tolerated; without `Thought:` the text before the first marker is the
/// thought.
pub fn parse_step(text: &str) -> StepIntent {
    let malformed = || StepIntent::Malformed { raw: text.to_string() };
    let action = find_marker(text, ACTION, 0);
    let fin = find_marker(text, FINAL, 0);
    let first = match (action, fin) {
        (Some(a), Some(f)) => a.min(f),
        (Some(a), None) => a,
        (None, Some(f)) => f,
        (None, None) => return malformed(),
    };
    let thought = match find_marker(text, THOUGHT, 0).filter(|&t| t < first) {
        Some(t) => text[t + THOUGHT.len()..first].trim(),
        None => text[..first].trim(),
    }
    .to_string();

    if Some(first) == fin {
        let body = &text[first + FINAL.len()..];
        let end = find_marker(body, OBSERVATION, 0).unwrap_or(body.len());
        let answer = body[..end].trim();
        if answer.is_empty() {
            return malformed();
        }
        return StepIntent::Final {
            thought,
            answer: answer.to_string(),
        };
    }

    let after_action = first + ACTION.len();
    let Some(input_at) = find_marker(text, ACTION_INPUT, after_action) else {
        return malformed();
    };
    let tool = text[after_action..input_at].trim();
    let tool = strip_quotes(tool.lines().next().unwrap_or(""));
    let body = &text[input_at + ACTION_INPUT.len()..];
    let end = [OBSERVATION, THOUGHT, FINAL]
        .iter()
        .filter_map(|m| find_marker(body, m, 0))
        .min()
        .unwrap_or(body.len());
    let input = strip_quotes(&body[..end]);
    if tool.is_empty() {
        return malformed();
    }
    StepIntent::Action {
        thought,
        tool: tool.to_string(),
        input: input.to_string(),
    }
}
