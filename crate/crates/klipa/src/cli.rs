//! `klipa` subcommands. [`run`] takes its streams and environment as
//! arguments so it can be driven in-process.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use klipa_core::agent::{run as run_agent, AgentContext, AgentError, SessionStore};
use klipa_core::graph::write_snapshot;
use klipa_core::metrics::{render_report, ReportFormat};

use crate::config::{EngineConfig, ENV_PREFIX};
use crate::engine::{render_trace, Engine};
use crate::error::{EngineError, EXIT_CONFIG, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "klipa", version, about = "Patent knowledge graph construction and question answering")]
pub struct Cli {
    /// JSON config file (also KLIPA_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replay a mock fixture instead of calling a live model.
    #[arg(long, global = true)]
    pub mock_fixture: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Directory for graph, report and index artifacts.
    #[arg(long, global = true)]
    pub artifacts: Option<PathBuf>,
    /// Concurrent model calls.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest, chunk, extract and write the graph snapshot and report.
    BuildKg,
    /// Embed the built corpus into chunk and document indexes.
    Index {
        /// Run build-kg first.
        #[arg(long)]
        from_corpus: bool,
    },
    /// Answer one question; the trace goes to stderr.
    Query {
        #[arg(required = true, num_args = 1..)]
        question: Vec<String>,
        /// Print the full answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Interactive session on stdin until EOF.
    Chat,
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Score a graph against gold annotations.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        /// Snapshot to score; the built graph by default.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        #[arg(long, default_value = "klipa")]
        label: String,
    },
    /// Write the graph snapshot to a file, or `-` for stdout.
    ExportGraph { output: PathBuf },
    /// Validate a snapshot file and install it as the graph.
    ImportGraph { input: PathBuf },
}

/// All configuration layers: file, then environment, then flags.
pub fn resolve_config(cli: &Cli, env: &[(String, String)]) -> Result<EngineConfig, EngineError> {
    let from_env = env
        .iter()
        .find(|(k, _)| k == &format!("{ENV_PREFIX}CONFIG"))
        .map(|(_, v)| PathBuf::from(v));
    let mut cfg = match cli.config.clone().or(from_env) {
        Some(p) => EngineConfig::load(&p)?,
        None => EngineConfig::default(),
    };
    cfg.apply_env(env.iter().cloned())?;
    if let Some(p) = &cli.mock_fixture {
        cfg.mock_fixture = Some(p.clone());
    }
    if let Some(p) = &cli.corpus {
        cfg.corpus = Some(p.clone());
    }
    if let Some(p) = &cli.schema {
        cfg.schema = Some(p.clone());
    }
    if let Some(p) = &cli.cache_dir {
        cfg.cache_dir = Some(p.clone());
    }
    if let Some(p) = &cli.artifacts {
        cfg.artifacts = p.clone();
    }
    if let Some(n) = cli.parallelism {
        cfg.gateway.parallelism = n;
    }
    if let Command::Serve { bind, port } = &cli.command {
        if let Some(b) = bind {
            cfg.service.bind = b.clone();
        }
        if let Some(p) = port {
            cfg.service.port = *p;
        }
    }
    Ok(cfg)
}

/// Log to stderr at a level chosen by `-v` count, refined by `RUST_LOG`.
pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

/// Parse arguments and run one command. Returns the process exit code.
/// Installs no logger; see [`run_with`].
pub fn run<I, T>(args: I, env: &[(String, String)], stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, env, stdin, out, err, |_| {})
}

/// [`run`], calling `on_verbose` with the `-v` count once arguments parse.
pub fn run_with<I, T>(
    args: I,
    env: &[(String, String)],
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
    on_verbose: impl FnOnce(u8),
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    on_verbose(cli.verbose);
    match execute(&cli, env, stdin, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(e: std::io::Error) -> EngineError {
    EngineError::io("stdout", e)
}

fn execute(
    cli: &Cli,
    env: &[(String, String)],
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), EngineError> {
    let cfg = resolve_config(cli, env)?;
    let engine = Engine::new(cfg)?;
    match &cli.command {
        Command::BuildKg => {
            let summary = engine.build()?;
            write!(out, "{}", summary.render()).map_err(io_err)?;
        }
        Command::Index { from_corpus } => {
            if *from_corpus {
                let summary = engine.build()?;
                write!(out, "{}", summary.render()).map_err(io_err)?;
            }
            let s = engine.index()?;
            writeln!(
                out,
                "indexed {} chunks and {} documents ({} embedding failures)",
                s.chunk_items, s.document_items, s.failures
            )
            .map_err(io_err)?;
        }
        Command::Query { question, json } => {
            let ctx = engine.load_context()?;
            let answer = run_agent(&question.join(" "), &[], &ctx)?;
            if *json {
                writeln!(out, "{}", serde_json::to_string(&answer).expect("answer serializes")).map_err(io_err)?;
            } else {
                writeln!(out, "{}", answer.text).map_err(io_err)?;
            }
            write!(err, "{}", render_trace(&answer)).map_err(io_err)?;
        }
        Command::Chat => {
            let ctx = engine.load_context()?;
            chat_loop(&ctx, &SessionStore::new(), stdin, out, err)?;
        }
        Command::Serve { .. } => crate::api::serve(&engine)?,
        Command::Eval {
            gold,
            graph,
            format,
            label,
        } => {
            let report = engine.evaluate(label, gold, graph.as_deref())?;
            let text = render_report(&report, *format);
            write!(out, "{text}").map_err(io_err)?;
            if !text.ends_with('\n') {
                writeln!(out).map_err(io_err)?;
            }
        }
        Command::ExportGraph { output } => {
            let snap = engine.export_graph()?;
            if output.as_os_str() == "-" {
                write!(out, "{}", snap.to_jsonl()).map_err(io_err)?;
            } else {
                write_snapshot(output, &snap)?;
                writeln!(
                    err,
                    "exported {} nodes and {} edges to {}",
                    snap.nodes.len(),
                    snap.edges.len(),
                    output.display()
                )
                .map_err(io_err)?;
            }
        }
        Command::ImportGraph { input } => {
            let snap = engine.import_graph(input)?;
            writeln!(
                out,
                "imported {} nodes and {} edges into {}",
                snap.nodes.len(),
                snap.edges.len(),
                engine.cfg.graph_path().display()
            )
            .map_err(io_err)?;
        }
    }
    Ok(())
}

/// One session until EOF or `/quit`. Answers go to `out`, traces and
/// prompts to `err`. Returns the number of answered turns.
pub fn chat_loop(
    ctx: &AgentContext,
    store: &SessionStore,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<usize, EngineError> {
    let session = store.create();
    let mut turns = 0;
    let mut line = String::new();
    loop {
        write!(err, "klipa> ").and_then(|_| err.flush()).map_err(io_err)?;
        line.clear();
        if input.read_line(&mut line).map_err(|e| EngineError::io("stdin", e))? == 0 {
            writeln!(err).map_err(io_err)?;
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" || text == "/exit" {
            break;
        }
        match store.ask(&session.id, text, ctx) {
            Ok(answer) => {
                writeln!(out, "{}", answer.text).map_err(io_err)?;
                write!(err, "{}", render_trace(&answer)).map_err(io_err)?;
                turns += 1;
            }
            Err(AgentError::Gateway { error, .. }) if error.is_unreachable() => {
                return Err(EngineError::GatewayUnreachable(error.to_string()));
            }
            Err(e) => writeln!(err, "error: {e}").map_err(io_err)?,
        }
    }
    Ok(turns)
}
