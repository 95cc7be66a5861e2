//! Scripted-mock agent runs and trace checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use klipa_core::agent::{run, AgentAnswer, AgentConfig, AgentContext, ChatTurn};
use klipa_core::extraction::{EntityRef, Provenance, Triple};
use klipa_core::gateway::{Gateway, MockBackend, MockFixture};
use klipa_core::graph::GraphStore;
use klipa_core::retrieval::{build_index, IndexInput, Level, RetrievalConfig, Retriever};
use proptest::prelude::*;

pub const CHUNKS: [(&str, &str); 3] = [
    ("a.txt#0", "The sulfide solid electrolyte reaches high ionic conductivity."),
    ("a.txt#1", "Cathode particles are coated with lithium niobate."),
    ("b.txt#0", "A proton exchange membrane electrolyser splits water."),
];

/// Script entries a model might emit.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Retrieve(&'static str),
    Neighborhood(&'static str),
    UnknownTool,
    Malformed,
    Final(&'static str),
}

impl Reply {
    pub fn render(&self) -> String {
        match self {
            Reply::Retrieve(q) => format!("Thought: search\nAction: chunk_retriever\nAction Input: {q}"),
            Reply::Neighborhood(k) => format!("Thought: relations\nAction: graph_neighborhood\nAction Input: {k}"),
            Reply::UnknownTool => "Thought: try\nAction: web_search\nAction Input: anything".into(),
            Reply::Malformed => "I am not sure what to do next.".into(),
            Reply::Final(t) => format!("Thought: done\nFinal Answer: {t}"),
        }
    }
}

pub fn reply_strategy() -> impl Strategy<Value = Reply> {
    prop_oneof![
        3 => prop::sample::select(vec!["sulfide electrolyte", "lithium niobate", "water electrolyser", "zzz"])
            .prop_map(Reply::Retrieve),
        2 => prop::sample::select(vec!["US 1", "Acme Corp", "nobody"]).prop_map(Reply::Neighborhood),
        1 => Just(Reply::UnknownTool),
        2 => Just(Reply::Malformed),
        2 => prop::sample::select(vec!["Sulfide [a.txt#0].", "No idea.", "See [US 1]."]).prop_map(Reply::Final),
    ]
}

fn entity(ty: &str, name: &str) -> EntityRef {
    EntityRef {
        key: klipa_core::canon::canonical_key(name),
        entity_type: ty.into(),
        name: name.into(),
    }
}

/// A fresh context over a tiny index and graph. `script` feeds the agent
/// turns; the synthesis call is answered by a rule and consumes none.
pub fn context(script: &[String], max_steps: usize) -> (AgentContext, Arc<MockBackend>) {
    let mut fixture = MockFixture::scripted(script.iter().cloned());
    fixture.rules.push(klipa_core::gateway::MockRule {
        pattern: r"\AYou are a patent research assistant\. Write".into(),
        reply: "Synthesized from the evidence.".into(),
        usage: None,
    });
    let backend = Arc::new(MockBackend::new(fixture));
    let gateway = Arc::new(Gateway::mock(backend.clone()));
    let inputs: Vec<IndexInput> = CHUNKS
        .iter()
        .map(|(id, text)| IndexInput {
            id: id.to_string(),
            text: text.to_string(),
            metadata: BTreeMap::new(),
        })
        .collect();
    let (index, _) = build_index(&inputs, Level::Chunk, &gateway).unwrap();
    let graph = GraphStore::new("agent-fixture");
    graph
        .merge_triple(&Triple {
            head: entity("Patent", "US 1"),
            relation: "OWNED_BY".into(),
            tail: entity("Company", "Acme Corp"),
            provenance: Provenance {
                doc_id: "a.txt".into(),
                seq_id: 0,
            },
        })
        .unwrap();
    let ctx = AgentContext::new(
        gateway,
        Retriever {
            chunk: Some(Arc::new(index)),
            document: None,
        },
        Arc::new(graph),
        RetrievalConfig::default(),
        AgentConfig {
            max_steps,
            ..AgentConfig::default()
        },
    )
    .unwrap();
    (ctx, backend)
}

/// Steps with an action carry an observation; exactly the last lacks one.
pub fn check_trace(a: &AgentAnswer) -> Result<(), String> {
    let (last, rest) = a.steps.split_last().ok_or("no steps")?;
    if last.action.is_some() || last.observation.is_some() {
        return Err("last step has an action".into());
    }
    if let Some(i) = rest.iter().position(|s| s.action.is_none() || s.observation.is_none()) {
        return Err(format!("step {i} lacks an action or observation"));
    }
    if a.degraded != a.evidence.is_empty() {
        return Err("degraded flag disagrees with evidence".into());
    }
    if a.citations.iter().any(|c| !a.evidence.iter().any(|e| &e.id == c)) {
        return Err("citation without evidence".into());
    }
    Ok(())
}

/// Termination bound, trace integrity, evidence resolvability and
/// byte-identical replay for one script.
pub fn check_script(replies: &[Reply], max_steps: usize, history: &[ChatTurn]) -> Result<(), String> {
    let mut script: Vec<String> = replies.iter().map(Reply::render).collect();
    // Never run dry: a short script is padded with searches.
    script.resize_with(script.len().max(max_steps), || Reply::Retrieve("zzz").render());
    let (ctx, backend) = context(&script, max_steps);
    let before = history.to_vec();
    let a = run("What electrolyte is used?", history, &ctx).map_err(|e| e.to_string())?;
    if backend.chat_count() > max_steps + 1 {
        return Err(format!("{} chat calls for max_steps {max_steps}", backend.chat_count()));
    }
    check_trace(&a)?;
    if let Some(e) = a.evidence.iter().find(|e| !ctx.resolves(e)) {
        return Err(format!("unresolvable evidence {}", e.id));
    }
    if history != before {
        return Err("history mutated".into());
    }
    let (ctx2, _) = context(&script, max_steps);
    let b = run("What electrolyte is used?", history, &ctx2).map_err(|e| e.to_string())?;
    if serde_json::to_vec(&a).unwrap() != serde_json::to_vec(&b).unwrap() {
        return Err("replay differs".into());
    }
    Ok(())
}

/// A script that never answers: exactly `max_steps + 1` chat calls.
pub fn check_loop_forever(max_steps: usize) -> Result<(), String> {
    let script = vec![Reply::Retrieve("sulfide electrolyte").render(); max_steps + 5];
    let (ctx, backend) = context(&script, max_steps);
    let a = run("loop", &[], &ctx).map_err(|e| e.to_string())?;
    if backend.chat_count() != max_steps + 1 {
        return Err(format!("{} chat calls, want {}", backend.chat_count(), max_steps + 1));
    }
    if a.steps.len() != max_steps + 1 {
        return Err(format!("{} steps, want {}", a.steps.len(), max_steps + 1));
    }
    check_trace(&a)
}

/// Retrieve, then answer citing the retrieved chunk.
pub fn retrieve_then_final() -> Result<AgentAnswer, String> {
    let script = [
        Reply::Retrieve("sulfide electrolyte conductivity").render(),
        Reply::Final("The sulfide electrolyte is highly conductive [a.txt#0].").render(),
    ];
    let (ctx, backend) = context(&script, 6);
    let a = run("How conductive is the electrolyte?", &[], &ctx).map_err(|e| e.to_string())?;
    check_trace(&a)?;
    if a.steps.len() != 2 || backend.chat_count() != 2 {
        return Err(format!("{} steps, {} calls", a.steps.len(), backend.chat_count()));
    }
    if a.degraded {
        return Err("degraded".into());
    }
    let resolvable = a
        .citations
        .iter()
        .filter(|c| a.evidence.iter().any(|e| &e.id == *c && ctx.resolves(e)))
        .count();
    if resolvable == 0 {
        return Err(format!("no resolvable citation in {:?}", a.text));
    }
    Ok(a)
}

/// Answer immediately without tools.
pub fn no_evidence_final() -> Result<AgentAnswer, String> {
    let (ctx, _) = context(&[Reply::Final("Hello").render()], 6);
    let a = run("hi", &[], &ctx).map_err(|e| e.to_string())?;
    check_trace(&a)?;
    if !(a.degraded && a.evidence.is_empty() && a.steps.len() == 1) {
        return Err(format!("degraded {}, {} evidence, {} steps", a.degraded, a.evidence.len(), a.steps.len()));
    }
    Ok(a)
}
