//! Bug dataset records and the append-only run ledger.
//!
//! The dataset file is one JSON document mapping `bug_id` to a record with
//! the nested `commit` / `function` / `file` sections. The ledger is JSON
//! Lines, one [`RunLedgerEntry`] per line.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::diff;
use crate::method::{Method, PromptStyle};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a JSON object mapping bug ids to records: {message}")]
    Document { path: PathBuf, message: String },
    #[error("bug `{bug_id}`: schema violation at `{field}`: {message}")]
    Schema {
        bug_id: String,
        field: String,
        message: String,
    },
    #[error("bug `{bug_id}`: invalid record: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { bug_id: String, violations: Vec<Violation> },
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ledger {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("ledger entry violates its invariants: {0}")]
    Invariant(String),
    #[error("duplicate ledger key {0}")]
    Duplicate(LedgerKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitInfo {
    pub commit_id: String,
    pub commit_message: String,
    pub commit_parent: String,
    pub commit_date: String,
    pub commit_file_diff: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub function_name: String,
    pub function_parent: String,
    pub function_before_start_line: usize,
    pub function_before_end_line: usize,
    pub function_after_start_line: usize,
    pub function_after_end_line: usize,
    pub function_before_token_count: usize,
    pub function_after_token_count: usize,
    pub function_before: String,
    pub function_after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileInfo {
    pub file_name: String,
    pub file_path: String,
    pub file_nloc: usize,
    pub file_complexity: usize,
    pub file_token_count: usize,
}

/// One bug. `bug_id` is the key of the enclosing document and is not repeated
/// inside the serialized record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    #[serde(skip)]
    pub bug_id: String,
    pub project_name: String,
    pub project_url: String,
    pub bugsinpy_id: String,
    pub is_single_line: bool,
    pub buggy_line_location: usize,
    pub buggy_line_content: String,
    pub in_function: bool,
    pub commit: CommitInfo,
    pub function: FunctionInfo,
    pub file: FileInfo,
    /// Curated description; an extension of the base record layout.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub bug_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: &str, message: impl Into<String>) -> Violation {
    Violation { field: field.to_string(), message: message.into() }
}

/// Index of the line in `function_code` holding the buggy line content.
///
/// Stored function code may be re-formatted relative to the file, so the line
/// at the positional offset is preferred but any line with equal trimmed text
/// is accepted (the nearest one to the offset wins).
pub fn buggy_line_index(function_code: &str, content: &str, positional: Option<usize>) -> Option<usize> {
    let wanted = content.trim();
    let lines: Vec<&str> = function_code.split('\n').collect();
    if let Some(p) = positional {
        if lines.get(p).is_some_and(|l| l.trim() == wanted) {
            return Some(p);
        }
    }
    let target = positional.unwrap_or(0) as isize;
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == wanted)
        .min_by_key(|(i, _)| ((*i as isize) - target).abs())
        .map(|(i, _)| i)
}

impl BugRecord {
    /// Offset of the buggy line from the start of the function, if in range.
    pub fn positional_offset(&self) -> Option<usize> {
        self.buggy_line_location
            .checked_sub(self.function.function_before_start_line)
    }

    /// Lines added by the fix according to `commit_file_diff`.
    pub fn fixed_lines(&self) -> Vec<String> {
        let Ok(d) = diff::parse(&self.commit.commit_file_diff) else {
            return Vec::new();
        };
        d.files
            .iter()
            .flat_map(|f| f.changes())
            .filter(|c| c.kind == diff::LineKind::Added && !c.text.trim().is_empty())
            .map(|c| c.text.trim().to_string())
            .collect()
    }
}

/// Every invariant the record violates; empty means valid.
pub fn validate_record(record: &BugRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let f = &record.function;
    if record.bug_id.trim().is_empty() {
        out.push(violation("bug_id", "must not be empty"));
    }
    if record.buggy_line_location < 1 {
        out.push(violation("buggy_line_location", "must be >= 1"));
    }
    if f.function_before_start_line > f.function_before_end_line {
        out.push(violation(
            "function.function_before_start_line",
            format!("start {} > end {}", f.function_before_start_line, f.function_before_end_line),
        ));
    }
    if f.function_after_start_line > f.function_after_end_line {
        out.push(violation(
            "function.function_after_start_line",
            format!("start {} > end {}", f.function_after_start_line, f.function_after_end_line),
        ));
    }
    if record.in_function {
        let loc = record.buggy_line_location;
        if record.buggy_line_location >= 1
            && !(f.function_before_start_line <= loc && loc <= f.function_before_end_line)
        {
            out.push(violation(
                "buggy_line_location",
                format!(
                    "{loc} outside function span {}..={}",
                    f.function_before_start_line, f.function_before_end_line
                ),
            ));
        }
        if buggy_line_index(&f.function_before, &record.buggy_line_content, record.positional_offset()).is_none() {
            out.push(violation(
                "buggy_line_content",
                format!("`{}` does not occur in function_before", record.buggy_line_content.trim()),
            ));
        }
    }
    if record.commit.commit_id == record.commit.commit_parent {
        out.push(violation("commit.commit_parent", "equals commit_id"));
    }
    if let Err(e) = diff::parse(&record.commit.commit_file_diff) {
        out.push(violation("commit.commit_file_diff", format!("not a unified diff: {e}")));
    }
    let file = &record.file;
    if !file.file_path.ends_with(&file.file_name) || file.file_name.is_empty() {
        out.push(violation(
            "file.file_path",
            format!("`{}` does not end with file_name `{}`", file.file_path, file.file_name),
        ));
    }
    out
}

/// Warnings for descriptions that quote a line introduced by the fix.
pub fn leakage_warnings(record: &BugRecord) -> Vec<String> {
    record
        .fixed_lines()
        .into_iter()
        .filter(|line| record.bug_description.contains(line.as_str()))
        .map(|line| format!("bug `{}`: description contains post-fix line `{line}`", record.bug_id))
        .collect()
}

/// Parse a dataset document. Records are returned sorted by bug id.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<BugRecord>, DatasetError> {
    let doc: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| DatasetError::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut records = Vec::with_capacity(doc.len());
    for (bug_id, value) in doc {
        let mut record: BugRecord = serde_path_to_error::deserialize(value).map_err(|e| DatasetError::Schema {
            bug_id: bug_id.clone(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        record.bug_id = bug_id;
        let violations = validate_record(&record);
        if !violations.is_empty() {
            return Err(DatasetError::Invalid { bug_id: record.bug_id, violations });
        }
        for w in leakage_warnings(&record) {
            log::warn!("{w}");
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<BugRecord>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text, path)
}

pub fn dataset_to_string(records: &[BugRecord]) -> String {
    let doc: BTreeMap<&str, &BugRecord> = records.iter().map(|r| (r.bug_id.as_str(), r)).collect();
    let mut s = serde_json::to_string_pretty(&doc).expect("records serialize");
    s.push('\n');
    s
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[BugRecord]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(records)).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Oom,
    ParseError,
    TestError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedgerEntry {
    pub bug_id: String,
    pub heuristic: Method,
    pub style: PromptStyle,
    pub sample_index: usize,
    pub input_tokens: usize,
    pub output_tokens: usize,
    /// Wall-clock time of the whole inference request that produced the sample.
    pub latency_seconds: f64,
    pub status: SampleStatus,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LedgerKey {
    pub bug_id: String,
    pub heuristic: Method,
    pub style: PromptStyle,
    pub sample_index: usize,
}

impl std::fmt::Display for LedgerKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.bug_id, self.heuristic, self.style, self.sample_index)
    }
}

impl RunLedgerEntry {
    pub fn key(&self) -> LedgerKey {
        LedgerKey {
            bug_id: self.bug_id.clone(),
            heuristic: self.heuristic,
            style: self.style,
            sample_index: self.sample_index,
        }
    }

    pub fn check(&self) -> Result<(), LedgerError> {
        if self.status == SampleStatus::Oom && (self.output_tokens != 0 || self.passed) {
            return Err(LedgerError::Invariant(format!(
                "{}: oom entries carry no output tokens and never pass",
                self.key()
            )));
        }
        if self.passed && self.status != SampleStatus::Ok {
            return Err(LedgerError::Invariant(format!("{}: only ok samples can pass", self.key())));
        }
        if !(self.latency_seconds.is_finite() && self.latency_seconds >= 0.0) {
            return Err(LedgerError::Invariant(format!("{}: latency must be finite and >= 0", self.key())));
        }
        Ok(())
    }
}

/// Read every entry in write order. A missing file reads as empty.
pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<RunLedgerEntry>, LedgerError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(LedgerError::Io { path: path.to_path_buf(), source }),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LedgerError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RunLedgerEntry = serde_json::from_str(&line).map_err(|e| LedgerError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Single-writer handle on a ledger file; appends are serialized internally.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    inner: Mutex<LedgerState>,
}

#[derive(Debug)]
struct LedgerState {
    keys: HashSet<LedgerKey>,
    file: File,
}

impl Ledger {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let keys = read_ledger(&path)?.into_iter().map(|e| e.key()).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| LedgerError::Io { path: path.clone(), source })?;
        Ok(Ledger { path, inner: Mutex::new(LedgerState { keys, file }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, key: &LedgerKey) -> bool {
        self.inner.lock().unwrap().keys.contains(key)
    }

    /// True if any sample of `(bug, heuristic, style)` is already recorded.
    pub fn has_unit(&self, bug_id: &str, heuristic: Method, style: PromptStyle) -> bool {
        self.inner
            .lock()
            .unwrap()
            .keys
            .iter()
            .any(|k| k.bug_id == bug_id && k.heuristic == heuristic && k.style == style)
    }

    pub fn append(&self, entry: &RunLedgerEntry) -> Result<(), LedgerError> {
        self.append_all(std::slice::from_ref(entry))
    }

    /// Append several entries; either all are written or none.
    pub fn append_all(&self, entries: &[RunLedgerEntry]) -> Result<(), LedgerError> {
        let mut state = self.inner.lock().unwrap();
        let mut batch = HashSet::new();
        for e in entries {
            e.check()?;
            let key = e.key();
            if state.keys.contains(&key) || !batch.insert(key.clone()) {
                return Err(LedgerError::Duplicate(key));
            }
        }
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).expect("ledger entries serialize"));
            buf.push('\n');
        }
        state
            .file
            .write_all(buf.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|source| LedgerError::Io { path: self.path.clone(), source })?;
        state.keys.extend(batch);
        Ok(())
    }
}

/// Append one entry to the ledger at `path`.
pub fn append_ledger(path: impl AsRef<Path>, entry: &RunLedgerEntry) -> Result<(), LedgerError> {
    Ledger::open(path)?.append(entry)
}
