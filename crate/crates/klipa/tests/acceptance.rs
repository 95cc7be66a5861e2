//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Random cases come from a fixed-seed runner so every run sees the same
//! inputs.

mod common;
#[path = "../../klipa-core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use klipa::api::{router, AppState};
use klipa::config::{CHUNK_INDEX_FILE, DOC_INDEX_FILE, GRAPH_FILE};
use klipa::engine::file_sha256;
use klipa::Engine;
use klipa_core::chunker::{SplitConfig, Splitter};
use klipa_core::extraction::SchemaConfig;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use serde_json::{json, Value};
use tower::ServiceExt;

const QUESTION: &str = "How conductive is the sulfide electrolyte?";
const PIPELINE_BUDGET: Duration = Duration::from_secs(60);
const SUITE_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// `cases` fixed-seed cases of `strategy`, all of which must pass `check`.
fn for_all<S: Strategy>(cases: u32, strategy: S, check: impl Fn(&S::Value) -> Result<(), String>) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&strategy, |v| check(&v).map_err(TestCaseError::fail))
        .map_err(|e| e.to_string())
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

/// build-kg and eval through the CLI for one mock fixture, in a fresh
/// artifacts directory: fixtures share a model name, so a shared
/// extraction cache would replay another fixture's replies.
fn eval_fixture(mock_name: &str) -> Result<Value, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = dir.path();
    let flags = fixture_flags(dir, mock_name);
    let o = cli(&with_flags(&["build-kg"], &flags), &[]);
    ensure(o.code == 0, || format!("build-kg {mock_name} exited {}: {}", o.code, o.err))?;
    let gold = fixtures().join("gold.jsonl").display().to_string();
    let o = cli(&with_flags(&["eval", "--gold", &gold, "--format", "json"], &flags), &[]);
    ensure(o.code == 0, || format!("eval {mock_name} exited {}: {}", o.code, o.err))?;
    serde_json::from_str(&o.out).map_err(|e| format!("eval {mock_name} output: {e}"))
}

fn num(v: &Value, field: &str) -> f64 {
    v[field].as_f64().unwrap_or(f64::NAN)
}

fn pipeline() -> Outcome {
    let start = Instant::now();
    let clean = eval_fixture("pipeline")?;
    let corrupt = eval_fixture("corrupt")?;
    let orphan = eval_fixture("orphan")?;
    let spent = start.elapsed();
    let (rae, ric) = (num(&clean, "rae_percent"), num(&clean, "ric_percent"));
    ensure(rae == 100.0 && ric == 0.0, || format!("clean RAE {rae}, RIC {ric}"))?;
    ensure(clean["per_doc"].as_array().map_or(0, Vec::len) == 20, || "clean run lacks 20 documents".into())?;
    let corrupt_rae = num(&corrupt, "rae_percent");
    ensure((corrupt_rae - 90.0).abs() <= 0.01, || format!("corrupt RAE {corrupt_rae}"))?;
    let orphan_ric = num(&orphan, "ric_percent");
    ensure(orphan_ric == 10.0, || format!("orphan RIC {orphan_ric}"))?;
    ensure(spent < PIPELINE_BUDGET, || format!("took {spent:?}"))?;
    Ok(format!(
        "RAE {rae:.2}% RIC {ric:.2}%, corrupt RAE {corrupt_rae:.2}%, orphan RIC {orphan_ric:.2}%, mock gateway, {:.1}s",
        spent.as_secs_f64()
    ))
}

fn chunker() -> Outcome {
    let cfg = SplitConfig::default();
    let splitter = Splitter::new(cfg.clone()).map_err(|e| e.to_string())?;
    for_all(200, support::chunk_oracle::text_strategy(), |text| {
        let spans = splitter.split_spans(text);
        support::chunk_oracle::check(text, &cfg, &spans)
    })?;
    let frozen = support::chunk_oracle::load_frozen(&fixtures());
    support::chunk_oracle::compare_frozen(&frozen)?;
    Ok(format!("200 random strings hold every invariant; {} frozen chunks match byte for byte", frozen.chunks.len()))
}

fn repair() -> Outcome {
    use support::repair_corpus::{check_malformed, check_missing, check_valid, load, of_kind};
    let cases = load(&fixtures());
    let schema = SchemaConfig::default();
    let malformed = of_kind(&cases, "malformed");
    let valid = of_kind(&cases, "valid");
    let missing = of_kind(&cases, "missing");
    ensure(malformed.len() == 50 && valid.len() == 20 && !missing.is_empty(), || {
        format!("corpus has {} malformed, {} valid, {} missing", malformed.len(), valid.len(), missing.len())
    })?;
    let errors: Vec<String> = malformed
        .iter()
        .map(|c| check_malformed(c))
        .chain(valid.iter().map(|c| check_valid(c)))
        .chain(missing.iter().map(|c| check_missing(c, &schema)))
        .filter_map(Result::err)
        .collect();
    ensure(errors.is_empty(), || errors.join("; "))?;
    Ok(format!("50 malformed repaired, 20 valid fixpoints, {} missing-key cases rejected", missing.len()))
}

fn graph() -> Outcome {
    for_all(100, support::graph_oracle::case_strategy(), |(triples, perm, batch)| {
        support::graph_oracle::check_all(triples, perm, *batch)
    })?;
    Ok("100 multisets: permutation, batch, flush invariants and union-find components agree".into())
}

// The stated target is the four-digit value, not the library constant.
#[allow(clippy::approx_constant)]
fn retrieval() -> Outcome {
    use support::retrieval_oracle::*;
    for_all(50, corpus_strategy(), |c| {
        check_vector_oracle(c, c.items.len(), -1.0)?;
        check_vector_oracle(c, 10, 0.0)?;
        check_tau_nesting(c, c.items.len())?;
        check_degenerate_weights(c, 20)
    })?;
    check_golden_rankings()?;
    let cos = cosine_golden();
    ensure((cos - 0.7071).abs() <= 1e-4, || format!("cosine {cos}"))?;
    Ok(format!("50 corpora match brute force, tau nests, single-source fusion holds, cosine {cos:.4}"))
}

fn agent() -> Outcome {
    use support::agent_oracle::*;
    for max_steps in [1, 6, 12] {
        check_loop_forever(max_steps).map_err(|e| format!("max_steps {max_steps}: {e}"))?;
    }
    let a = retrieve_then_final()?;
    let again = retrieve_then_final()?;
    let bytes = |x: &klipa_core::agent::AgentAnswer| serde_json::to_vec(x).expect("answer serializes");
    ensure(bytes(&a) == bytes(&again), || "retrieve-then-final answers differ across runs".into())?;
    let d = no_evidence_final()?;
    ensure(bytes(&d) == bytes(&no_evidence_final()?), || "degraded answers differ across runs".into())?;
    let scripts = (proptest::collection::vec(reply_strategy(), 0..12), 1usize..8);
    for_all(50, scripts, |(replies, max_steps)| check_script(replies, *max_steps, &[]))?;
    Ok(format!(
        "loop-forever stops at max_steps + 1 calls, cites {:?}, no-evidence degraded, 50 scripts replay identically",
        a.citations
    ))
}

fn metrics() -> Outcome {
    use support::metrics_oracle::*;
    let rae = rae_golden()?;
    ensure((rae - RAE_GOLDEN).abs() <= 0.01, || format!("RAE {rae}"))?;
    let (ric, inside) = ric_golden()?;
    ensure(ric == RIC_GOLDEN && ric + inside == 100.0, || format!("RIC {ric}, in-cluster {inside}"))?;
    let (time, single) = timing_golden()?;
    ensure(time == TIME_GOLDEN && single == 5.0, || format!("mean time {time}, single {single}"))?;
    for_all(200, rae_case_strategy(), check_rae_case)?;
    for_all(200, ric_case_strategy(), check_ric_case)?;
    for name in ["pipeline", "corrupt", "orphan"] {
        let v = eval_fixture(name)?;
        let (r, i) = (num(&v, "ric_percent"), num(&v, "in_cluster_percent"));
        ensure(r + i == 100.0, || format!("{name}: RIC {r} + in-cluster {i}"))?;
    }
    Ok(format!("RAE {rae:.2}%, RIC {ric}%, mean time {time} s, complement exact on every fixture"))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .expect("request builds");
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map(|b| b.to_bytes().to_vec()).unwrap_or_default();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<&str>) -> Result<(StatusCode, Value), String> {
    let (s, b) = call(app, method, uri, body).await;
    let v = serde_json::from_slice(&b).map_err(|e| format!("{uri}: {e}: {}", String::from_utf8_lossy(&b)))?;
    Ok((s, v))
}

async fn api_contracts(app: &Router, dir: &Path) -> Result<(), String> {
    let flags = fixture_flags(dir, "pipeline");
    let body = json!({"text": QUESTION}).to_string();
    let (s, bytes) = call(app, Method::POST, "/api/query", Some(&body)).await;
    let o = cli(&with_flags(&["query", "--json", QUESTION], &flags), &[]);
    ensure(s == StatusCode::OK && o.code == 0, || format!("query: HTTP {s}, CLI exit {}", o.code))?;
    ensure(bytes == o.out.trim_end().as_bytes(), || "/api/query body differs from CLI query output".into())?;

    let (s, health) = call_json(app, Method::GET, "/api/health", None).await?;
    ensure(s == StatusCode::OK && health["status"] == "ok", || format!("health {s} {health}"))?;
    for (field, file) in [("graph", GRAPH_FILE), ("chunk_index", CHUNK_INDEX_FILE), ("doc_index", DOC_INDEX_FILE)] {
        let want = file_sha256(&dir.join(file)).map_err(|e| e.to_string())?;
        ensure(health["fingerprints"][field] == want.as_str(), || format!("health fingerprint {field}"))?;
    }

    let (s, created) = call_json(app, Method::POST, "/api/sessions", None).await?;
    ensure(s == StatusCode::CREATED, || format!("session create {s}"))?;
    let id = created["session_id"].as_str().ok_or("no session_id")?.to_string();
    let uri = format!("/api/sessions/{id}/messages");
    let (s1, first) = call_json(app, Method::POST, &uri, Some(&body)).await?;
    let (s2, second) = call_json(app, Method::POST, &uri, Some(&body)).await?;
    ensure(s1 == StatusCode::OK && s2 == StatusCode::OK, || format!("messages {s1} {s2}"))?;
    let (s, session) = call_json(app, Method::GET, &format!("/api/sessions/{id}"), None).await?;
    let history = session["history"].as_array().cloned().unwrap_or_default();
    ensure(
        s == StatusCode::OK && history.len() == 2 && history[0]["answer"] == first && history[1]["answer"] == second,
        || format!("session history {s} with {} turns", history.len()),
    )?;

    let not_found = [
        (Method::GET, "/api/sessions/nope", None, "session_not_found"),
        (Method::POST, "/api/sessions/nope/messages", Some(body.as_str()), "session_not_found"),
        (Method::GET, "/api/nothing", None, "not_found"),
        (Method::GET, "/api/graph/neighborhood?entity=nobody", None, "unknown_entity"),
    ];
    for (method, uri, body, code) in not_found {
        let (s, v) = call_json(app, method, uri, body).await?;
        ensure(s == StatusCode::NOT_FOUND && v["code"] == code && v["status"] == 404, || format!("{uri}: {s} {v}"))?;
    }
    Ok(())
}

fn cli_api() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let flags = fixture_flags(dir.path(), "pipeline");
    for cmd in ["build-kg", "index"] {
        let o = cli(&with_flags(&[cmd], &flags), &[]);
        ensure(o.code == 0, || format!("{cmd} exited {}: {}", o.code, o.err))?;
    }
    let engine = Engine::new(fixture_config(dir.path(), "pipeline")).map_err(|e| e.to_string())?;
    // No static directory: the API is served without the web client.
    let app = router(Arc::new(AppState::load(&engine).map_err(|e| e.to_string())?), None);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(api_contracts(&app, dir.path()))?;
    Ok("query parity byte for byte, health, session lifecycle and 404 contracts over the mock gateway".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("pipeline fidelity", pipeline),
        ("chunker oracle", chunker),
        ("json repair corpus", repair),
        ("graph properties", graph),
        ("retrieval oracle", retrieval),
        ("agent bounds and traces", agent),
        ("metric arithmetic", metrics),
        ("cli/api parity", cli_api),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {why} [{secs:.1}s]");
            }
        }
    }
    let total = suite.elapsed();
    if total < SUITE_BUDGET {
        println!("PASS  {:<24} {:.1}s of {}s", "suite time budget", total.as_secs_f64(), SUITE_BUDGET.as_secs());
    } else {
        failed += 1;
        println!("FAIL  {:<24} {:.1}s of {}s", "suite time budget", total.as_secs_f64(), SUITE_BUDGET.as_secs());
    }
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} failing");
        ExitCode::FAILURE
    }
}
