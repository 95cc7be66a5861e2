use std::path::Path;

use super::AgentError;

pub const AGENT_TEMPLATE: &str = include_str!("../../prompts/agent.txt");
pub const SYNTHESIZE_TEMPLATE: &str = include_str!("../../prompts/synthesize.txt");

/// Marker placed in the synthesis prompt when no observation was gathered.
pub const NO_EVIDENCE: &str = "NO EVIDENCE RETRIEVED";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub agent: String,
    pub synthesize: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            agent: AGENT_TEMPLATE.to_string(),
            synthesize: SYNTHESIZE_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Read `agent.txt` and `synthesize.txt` from `dir`; a missing file keeps
    /// the built-in template.
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let read = |name: &str, fallback: &str| -> Result<String, AgentError> {
            let p = dir.join(name);
            if p.exists() {
                std::fs::read_to_string(&p).map_err(|e| AgentError::Template(format!("{}: {e}", p.display())))
            } else {
                Ok(fallback.to_string())
            }
        };
        let t = Self {
            agent: read("agent.txt", AGENT_TEMPLATE)?,
            synthesize: read("synthesize.txt", SYNTHESIZE_TEMPLATE)?,
        };
        for (name, text, required) in [
            ("agent.txt", &t.agent, &["{query}", "{scratchpad}", "{tools}"][..]),
            ("synthesize.txt", &t.synthesize, &["{query}", "{observations}"][..]),
        ] {
            if let Some(p) = required.iter().find(|p| !text.contains(*p)) {
                return Err(AgentError::Template(format!("{name} lacks placeholder {p}")));
            }
        }
        Ok(t)
    }
}

/// Substitute `{name}` placeholders in one pass. Unknown placeholders and
/// braces inside substituted values are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
