#![allow(dead_code)]

use std::path::{Path, PathBuf};

use klipa::EngineConfig;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn mock(name: &str) -> PathBuf {
    fixtures().join("mock").join(format!("{name}.json"))
}

/// Config over the fixture corpus and schema, artifacts under `dir`.
pub fn fixture_config(dir: &Path, mock_name: &str) -> EngineConfig {
    EngineConfig {
        corpus: Some(fixtures().join("corpus")),
        schema: Some(fixtures().join("schema.json")),
        artifacts: dir.to_path_buf(),
        mock_fixture: Some(mock(mock_name)),
        ..EngineConfig::default()
    }
}

pub struct Outcome {
    pub code: i32,
    pub out: String,
    pub err: String,
}

/// Run the CLI in-process with the fixture flags and no `KLIPA_*`
/// environment.
pub fn cli(args: &[&str], env: &[(&str, &str)]) -> Outcome {
    cli_with_input(args, env, "")
}

pub fn cli_with_input(args: &[&str], env: &[(&str, &str)], input: &str) -> Outcome {
    let env: Vec<(String, String)> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut argv = vec!["klipa"];
    argv.extend_from_slice(args);
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = klipa::cli::run(argv, &env, &mut input.as_bytes(), &mut out, &mut err);
    Outcome {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

/// Flags selecting the fixture corpus, schema and a mock, with artifacts
/// in `dir`.
pub fn fixture_flags(dir: &Path, mock_name: &str) -> Vec<String> {
    vec![
        "--corpus".into(),
        fixtures().join("corpus").display().to_string(),
        "--schema".into(),
        fixtures().join("schema.json").display().to_string(),
        "--mock-fixture".into(),
        mock(mock_name).display().to_string(),
        "--artifacts".into(),
        dir.display().to_string(),
    ]
}

pub fn with_flags<'a>(cmd: &[&'a str], flags: &'a [String]) -> Vec<&'a str> {
    let mut v: Vec<&str> = cmd.to_vec();
    v.extend(flags.iter().map(String::as_str));
    v
}

/// build-kg then index over the fixture corpus.
pub fn build_and_index(dir: &Path, mock_name: &str) {
    let flags = fixture_flags(dir, mock_name);
    let o = cli(&with_flags(&["build-kg"], &flags), &[]);
    assert_eq!(o.code, 0, "{}{}", o.out, o.err);
    let o = cli(&with_flags(&["index"], &flags), &[]);
    assert_eq!(o.code, 0, "{}{}", o.out, o.err);
}
