//! Document ingestion: plain text, HTML and pre-extracted PDF text.
//!
//! Every parser produces a [`SourceDocument`] whose text is valid UTF-8 with
//! no control characters other than newline and tab. Corpus loading never
//! aborts on a single bad file; failures are collected next to the results.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported format for {0} (unknown extension and no format hint)")]
    UnsupportedFormat(PathBuf),
    #[error("document {0} is empty after normalization")]
    EmptyDocument(PathBuf),
    #[error("corpus {0} contains no parseable documents")]
    EmptyCorpus(PathBuf),
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocFormat {
    Plain,
    Html,
    PdfText,
}

impl DocFormat {
    /// Guess a format from the file name. `.pdf.txt` and `.pdftxt` mark
    /// text already extracted from a PDF.
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".pdf.txt") || name.ends_with(".pdftxt") {
            return Some(DocFormat::PdfText);
        }
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "txt" | "text" | "md" => Some(DocFormat::Plain),
            "html" | "htm" | "xhtml" => Some(DocFormat::Html),
            _ => None,
        }
    }
}

impl fmt::Display for DocFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocFormat::Plain => "plain",
            DocFormat::Html => "html",
            DocFormat::PdfText => "pdf-text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub format: DocFormat,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn source(&self) -> &str {
        self.metadata.get("source").map(String::as_str).unwrap_or("")
    }

    /// Length in characters, the unit used by the chunker.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A parsed document plus anything worth warning about.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub document: SourceDocument,
    pub warnings: Vec<String>,
}

pub fn parse_document(path: &Path, format_hint: Option<DocFormat>) -> Result<Parsed, IngestError> {
    let format = format_hint
        .or_else(|| DocFormat::from_path(path))
        .ok_or_else(|| IngestError::UnsupportedFormat(path.to_path_buf()))?;
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), path.display().to_string());
    parse_bytes(id, &bytes, format, metadata).map_err(|e| match e {
        IngestError::EmptyDocument(_) => IngestError::EmptyDocument(path.to_path_buf()),
        other => other,
    })
}

/// Parse raw bytes. Metadata must carry `source`; it is filled from the id
/// when missing.
pub fn parse_bytes(
    id: String,
    bytes: &[u8],
    format: DocFormat,
    mut metadata: BTreeMap<String, String>,
) -> Result<Parsed, IngestError> {
    let mut warnings = Vec::new();
    let decoded = String::from_utf8_lossy(bytes);
    if let std::borrow::Cow::Owned(_) = decoded {
        let n = decoded.matches('\u{FFFD}').count();
        warnings.push(format!(
            "{id}: invalid UTF-8 replaced with U+FFFD ({n} replacement characters)"
        ));
    }
    let text = match format {
        DocFormat::Plain => normalize_text(&decoded),
        DocFormat::PdfText => normalize_text(&decoded.replace('\u{000C}', "\n\n")),
        DocFormat::Html => normalize_text(&html_to_text(&decoded)),
    };
    if text.trim().is_empty() {
        return Err(IngestError::EmptyDocument(PathBuf::from(&id)));
    }
    metadata
        .entry("source".to_string())
        .or_insert_with(|| id.clone());
    Ok(Parsed {
        document: SourceDocument {
            id,
            format,
            text,
            metadata,
        },
        warnings,
    })
}

/// Line endings to `\n`, control characters other than newline/tab dropped,
/// trailing whitespace per line removed, surrounding blank space trimmed.
/// Applying it twice is the same as applying it once.
pub fn normalize_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let cleaned: String = unified
        .chars()
        .filter(|c| !c.is_control() || *c == '\n' || *c == '\t')
        .collect();
    let lines: Vec<&str> = cleaned.lines().map(str::trim_end).collect();
    lines.join("\n").trim().to_string()
}

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "caption", "dd", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6",
    "head", "header", "hr", "html", "li", "main", "nav", "ol", "p", "pre", "section", "table",
    "tbody", "td", "tfoot", "th", "thead", "title", "tr", "ul",
];

/// Strip markup: `script`/`style` contents vanish, block tags become
/// paragraph breaks, `<br>` a line break, inline tags nothing. Runs of
/// source whitespace collapse to one space and entities are decoded.
pub fn html_to_text(html: &str) -> String {
    enum Piece {
        Text(String),
        Line,
        Para,
    }

    let mut pieces: Vec<Piece> = Vec::new();
    let mut rest = html;
    while !rest.is_empty() {
        let Some(lt) = rest.find('<') else {
            pieces.push(Piece::Text(rest.to_string()));
            break;
        };
        if lt > 0 {
            pieces.push(Piece::Text(rest[..lt].to_string()));
        }
        rest = &rest[lt..];
        if let Some(after) = rest.strip_prefix("<!--") {
            rest = after.find("-->").map_or("", |i| &after[i + 3..]);
            continue;
        }
        let Some(gt) = rest.find('>') else {
            // A lone '<' with no closing bracket is text.
            pieces.push(Piece::Text(rest.to_string()));
            break;
        };
        let tag = &rest[1..gt];
        rest = &rest[gt + 1..];
        let closing = tag.starts_with('/');
        let name: String = tag
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if !closing && (name == "script" || name == "style") {
            let end = format!("</{name}");
            let lower = rest.to_ascii_lowercase();
            rest = match lower.find(&end) {
                Some(i) => rest[i..].find('>').map_or("", |j| &rest[i + j + 1..]),
                None => "",
            };
            continue;
        }
        if name == "br" {
            pieces.push(Piece::Line);
        } else if BLOCK_TAGS.contains(&name.as_str()) {
            pieces.push(Piece::Para);
        }
    }

    let mut paragraphs: Vec<String> = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, paragraphs: &mut Vec<String>| {
        let lines: Vec<String> = current
            .split('\n')
            .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect();
        let joined = lines.join("\n").trim_matches('\n').to_string();
        if !joined.trim().is_empty() {
            paragraphs.push(joined);
        }
        current.clear();
    };
    for piece in pieces {
        match piece {
            Piece::Text(t) => {
                // Source newlines are insignificant in HTML.
                let t = t.replace(['\n', '\r', '\t'], " ");
                current.push_str(&html_escape::decode_html_entities(&t));
            }
            Piece::Line => current.push('\n'),
            Piece::Para => flush(&mut current, &mut paragraphs),
        }
    }
    flush(&mut current, &mut paragraphs);
    paragraphs.join("\n\n")
}

/// One line of a JSON-lines corpus manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub format: DocFormat,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadFailure {
    /// File path, or the manifest path for line-level failures.
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<SourceDocument>,
    pub failures: Vec<LoadFailure>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&SourceDocument> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.documents[i])
    }
}

struct Job {
    id: String,
    path: PathBuf,
    format: Option<DocFormat>,
    metadata: BTreeMap<String, String>,
}

/// Load a directory (recursively, hidden files skipped) or a JSON-lines
/// manifest. Document ids are paths relative to the directory or manifest
/// location, with `/` separators.
pub fn load_corpus(root: &Path) -> Result<Corpus, IngestError> {
    if !root.exists() {
        return Err(IngestError::FileNotFound(root.to_path_buf()));
    }
    let mut failures = Vec::new();
    let jobs = if root.is_dir() {
        directory_jobs(root)?
    } else {
        manifest_jobs(root, &mut failures)?
    };

    let results: Vec<(Job, Result<Parsed, IngestError>)> = jobs
        .into_par_iter()
        .map(|job| {
            let res = read_job(&job);
            (job, res)
        })
        .collect();

    let mut documents: Vec<SourceDocument> = Vec::new();
    let mut warnings = Vec::new();
    for (job, res) in results {
        match res {
            Ok(parsed) => {
                warnings.extend(parsed.warnings);
                documents.push(parsed.document);
            }
            Err(e) => failures.push(LoadFailure {
                source: job.path.display().to_string(),
                line: None,
                message: e.to_string(),
            }),
        }
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    let mut deduped: Vec<SourceDocument> = Vec::with_capacity(documents.len());
    for doc in documents {
        if deduped.last().is_some_and(|d| d.id == doc.id) {
            failures.push(LoadFailure {
                source: doc.source().to_string(),
                line: None,
                message: IngestError::DuplicateId(doc.id).to_string(),
            });
        } else {
            deduped.push(doc);
        }
    }
    if deduped.is_empty() {
        return Err(IngestError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(Corpus {
        documents: deduped,
        failures,
        warnings,
    })
}

fn read_job(job: &Job) -> Result<Parsed, IngestError> {
    let format = job
        .format
        .or_else(|| DocFormat::from_path(&job.path))
        .ok_or_else(|| IngestError::UnsupportedFormat(job.path.clone()))?;
    let bytes = fs::read(&job.path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::FileNotFound(job.path.clone()),
        _ => IngestError::Io {
            path: job.path.clone(),
            source: e,
        },
    })?;
    parse_bytes(job.id.clone(), &bytes, format, job.metadata.clone()).map_err(|e| match e {
        IngestError::EmptyDocument(_) => IngestError::EmptyDocument(job.path.clone()),
        other => other,
    })
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn directory_jobs(root: &Path) -> Result<Vec<Job>, IngestError> {
    let mut jobs = Vec::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| IngestError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path().to_path_buf();
        let id = relative_id(root, &path);
        let mut metadata = BTreeMap::new();
        metadata.insert("source".to_string(), path.display().to_string());
        jobs.push(Job {
            id,
            path,
            format: None,
            metadata,
        });
    }
    Ok(jobs)
}

fn manifest_jobs(manifest: &Path, failures: &mut Vec<LoadFailure>) -> Result<Vec<Job>, IngestError> {
    let file = fs::File::open(manifest).map_err(|e| IngestError::Io {
        path: manifest.to_path_buf(),
        source: e,
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut jobs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::Io {
            path: manifest.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(e) => {
                let err = IngestError::ManifestParse {
                    line: line_no,
                    message: e.to_string(),
                };
                failures.push(LoadFailure {
                    source: manifest.display().to_string(),
                    line: Some(line_no),
                    message: err.to_string(),
                });
                continue;
            }
        };
        let path = base.join(&entry.path);
        let mut metadata = entry.metadata;
        metadata.insert("source".to_string(), path.display().to_string());
        jobs.push(Job {
            id: entry.path.replace('\\', "/"),
            path,
            format: Some(entry.format),
            metadata,
        });
    }
    Ok(jobs)
}
