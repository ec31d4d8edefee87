//! Unified diff model and parser.
//!
//! Accepts both full `git diff` output (with `diff --git`, `---`/`+++`
//! headers) and header-less hunk bodies such as the `commit_file_diff`
//! field of a dataset record, which starts directly at `@@`.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("line {line}: malformed hunk header `{text}`")]
    BadHunkHeader { line: usize, text: String },
    #[error("line {line}: hunk ended early (expected {expected_old} old / {expected_new} new lines)")]
    HunkTooShort {
        line: usize,
        expected_old: usize,
        expected_new: usize,
    },
    #[error("line {line}: unexpected content outside a hunk: `{text}`")]
    Unexpected { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    Context,
    Removed,
    Added,
    /// `\ No newline at end of file`
    NoNewline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    pub text: String,
    /// Context line emitted without its leading space (some tools strip it).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bare: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub section: String,
    pub lines: Vec<DiffLine>,
}

/// A line that was removed from the old side or added to the new side,
/// with its 1-based line number on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Change<'a> {
    pub kind: LineKind,
    pub line: usize,
    pub text: &'a str,
}

impl Hunk {
    pub fn header(&self) -> String {
        let mut s = format!(
            "@@ -{} +{} @@",
            range_spec(self.old_start, self.old_len),
            range_spec(self.new_start, self.new_len)
        );
        if !self.section.is_empty() {
            s.push(' ');
            s.push_str(&self.section);
        }
        s
    }

    /// Removed lines numbered on the old side, added lines on the new side.
    pub fn changes(&self) -> Vec<Change<'_>> {
        let mut old = self.old_start;
        let mut new = self.new_start;
        let mut out = Vec::new();
        for l in &self.lines {
            match l.kind {
                LineKind::Context => {
                    old += 1;
                    new += 1;
                }
                LineKind::Removed => {
                    out.push(Change { kind: LineKind::Removed, line: old, text: &l.text });
                    old += 1;
                }
                LineKind::Added => {
                    out.push(Change { kind: LineKind::Added, line: new, text: &l.text });
                    new += 1;
                }
                LineKind::NoNewline => {}
            }
        }
        out
    }
}

fn range_spec(start: usize, len: usize) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    /// Raw header lines (`diff --git`, `index`, `---`, `+++`, mode and rename lines).
    pub header: Vec<String>,
    /// Old path without the `a/` prefix; `None` for `/dev/null` or a header-less diff.
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// The path a reader would name this change by: new side unless deleted.
    pub fn path(&self) -> Option<&str> {
        self.new_path.as_deref().or(self.old_path.as_deref())
    }

    pub fn changes(&self) -> Vec<Change<'_>> {
        self.hunks.iter().flat_map(|h| h.changes()).collect()
    }

    pub fn removed_lines(&self) -> Vec<usize> {
        self.changes()
            .into_iter()
            .filter(|c| c.kind == LineKind::Removed)
            .map(|c| c.line)
            .collect()
    }

    pub fn added_lines(&self) -> Vec<usize> {
        self.changes()
            .into_iter()
            .filter(|c| c.kind == LineKind::Added)
            .map(|c| c.line)
            .collect()
    }

    /// Apply this file's hunks to `old`, producing the new text.
    pub fn apply(&self, old: &str) -> Result<String, ApplyError> {
        let old_lines: Vec<&str> = split_lines(old);
        let mut out: Vec<String> = Vec::with_capacity(old_lines.len());
        let mut cursor = 0usize; // 0-based index into old_lines
        let mut trailing_newline = old.is_empty() || old.ends_with('\n');
        for h in &self.hunks {
            let start = if h.old_len == 0 { h.old_start } else { h.old_start - 1 };
            if start < cursor || start > old_lines.len() {
                return Err(ApplyError { hunk: h.header() });
            }
            out.extend(old_lines[cursor..start].iter().map(|s| s.to_string()));
            cursor = start;
            let mut last_kind = None;
            for l in &h.lines {
                match l.kind {
                    LineKind::Context | LineKind::Removed => {
                        if old_lines.get(cursor) != Some(&l.text.as_str()) {
                            return Err(ApplyError { hunk: h.header() });
                        }
                        if l.kind == LineKind::Context {
                            out.push(l.text.clone());
                        }
                        cursor += 1;
                    }
                    LineKind::Added => out.push(l.text.clone()),
                    LineKind::NoNewline => {
                        if matches!(last_kind, Some(LineKind::Added) | Some(LineKind::Context)) {
                            trailing_newline = false;
                        } else if last_kind == Some(LineKind::Removed) {
                            trailing_newline = true;
                        }
                    }
                }
                if l.kind != LineKind::NoNewline {
                    last_kind = Some(l.kind);
                }
            }
        }
        out.extend(old_lines[cursor..].iter().map(|s| s.to_string()));
        let mut text = out.join("\n");
        if trailing_newline && !out.is_empty() {
            text.push('\n');
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("hunk `{hunk}` does not apply")]
pub struct ApplyError {
    pub hunk: String,
}

fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    text.strip_suffix('\n').unwrap_or(text).split('\n').collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedDiff {
    pub files: Vec<FileDiff>,
}

impl UnifiedDiff {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn file(&self, path: &str) -> Option<&FileDiff> {
        self.files
            .iter()
            .find(|f| f.new_path.as_deref() == Some(path) || f.old_path.as_deref() == Some(path))
    }
}

impl fmt::Display for UnifiedDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for file in &self.files {
            for h in &file.header {
                writeln!(f, "{h}")?;
            }
            for hunk in &file.hunks {
                writeln!(f, "{}", hunk.header())?;
                for l in &hunk.lines {
                    match (l.kind, l.bare) {
                        (LineKind::Context, true) => writeln!(f)?,
                        (LineKind::Context, false) => writeln!(f, " {}", l.text)?,
                        (LineKind::Removed, _) => writeln!(f, "-{}", l.text)?,
                        (LineKind::Added, _) => writeln!(f, "+{}", l.text)?,
                        (LineKind::NoNewline, _) => writeln!(f, "\\{}", l.text)?,
                    }
                }
            }
        }
        Ok(())
    }
}

fn hunk_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$").unwrap()
    })
}

fn strip_side(path: &str) -> Option<String> {
    let path = path.split('\t').next().unwrap_or(path);
    if path == "/dev/null" {
        return None;
    }
    let p = path
        .strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path);
    Some(p.to_string())
}

/// Parse unified diff text. Empty input yields an empty diff.
pub fn parse(text: &str) -> Result<UnifiedDiff, DiffError> {
    let lines: Vec<&str> = if text.is_empty() {
        Vec::new()
    } else {
        text.strip_suffix('\n').unwrap_or(text).split('\n').collect()
    };
    let mut files: Vec<FileDiff> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("diff ") {
            let mut fd = FileDiff::default();
            fd.header.push(line.to_string());
            if let Some(rest) = line.strip_prefix("diff --git ") {
                if let Some(idx) = rest.find(" b/") {
                    fd.old_path = strip_side(&rest[..idx]);
                    fd.new_path = strip_side(&rest[idx + 1..]);
                }
            }
            files.push(fd);
            i += 1;
        } else if let Some(old) = line.strip_prefix("--- ") {
            if files.last().map_or(true, |f| !f.hunks.is_empty() || f.header.iter().any(|h| h.starts_with("--- "))) {
                files.push(FileDiff::default());
            }
            let fd = files.last_mut().unwrap();
            fd.header.push(line.to_string());
            fd.old_path = strip_side(old);
            i += 1;
            if let Some(new) = lines.get(i).and_then(|l| l.strip_prefix("+++ ")) {
                fd.header.push(lines[i].to_string());
                fd.new_path = strip_side(new);
                i += 1;
            }
        } else if line.starts_with("@@") {
            if files.is_empty() {
                files.push(FileDiff::default());
            }
            let (hunk, next) = parse_hunk(&lines, i)?;
            files.last_mut().unwrap().hunks.push(hunk);
            i = next;
        } else if let Some(fd) = files.last_mut().filter(|f| f.hunks.is_empty()) {
            // extended git header lines: index, mode, rename, similarity, binary
            fd.header.push(line.to_string());
            i += 1;
        } else if line.is_empty() && i + 1 == lines.len() {
            i += 1;
        } else {
            return Err(DiffError::Unexpected { line: i + 1, text: line.to_string() });
        }
    }
    Ok(UnifiedDiff { files })
}

fn parse_hunk(lines: &[&str], at: usize) -> Result<(Hunk, usize), DiffError> {
    let caps = hunk_header_re()
        .captures(lines[at])
        .ok_or_else(|| DiffError::BadHunkHeader { line: at + 1, text: lines[at].to_string() })?;
    let num = |i: usize, default: usize| {
        caps.get(i).map_or(Ok(default), |m| {
            m.as_str().parse::<usize>().map_err(|_| DiffError::BadHunkHeader {
                line: at + 1,
                text: lines[at].to_string(),
            })
        })
    };
    let mut hunk = Hunk {
        old_start: num(1, 0)?,
        old_len: num(2, 1)?,
        new_start: num(3, 0)?,
        new_len: num(4, 1)?,
        section: caps.get(5).map_or(String::new(), |m| m.as_str().to_string()),
        lines: Vec::new(),
    };
    let (mut old_left, mut new_left) = (hunk.old_len, hunk.new_len);
    let mut i = at + 1;
    while old_left > 0 || new_left > 0 {
        let Some(&line) = lines.get(i) else {
            return Err(DiffError::HunkTooShort {
                line: i + 1,
                expected_old: old_left,
                expected_new: new_left,
            });
        };
        let (kind, text, bare) = match line.as_bytes().first() {
            Some(b' ') => (LineKind::Context, &line[1..], false),
            None => (LineKind::Context, "", true),
            Some(b'-') => (LineKind::Removed, &line[1..], false),
            Some(b'+') => (LineKind::Added, &line[1..], false),
            Some(b'\\') => (LineKind::NoNewline, &line[1..], false),
            _ => {
                return Err(DiffError::HunkTooShort {
                    line: i + 1,
                    expected_old: old_left,
                    expected_new: new_left,
                })
            }
        };
        let exhausted = match kind {
            LineKind::Context => old_left == 0 || new_left == 0,
            LineKind::Removed => old_left == 0,
            LineKind::Added => new_left == 0,
            LineKind::NoNewline => false,
        };
        if exhausted {
            return Err(DiffError::HunkTooShort {
                line: i + 1,
                expected_old: old_left,
                expected_new: new_left,
            });
        }
        match kind {
            LineKind::Context => {
                old_left -= 1;
                new_left -= 1;
            }
            LineKind::Removed => old_left -= 1,
            LineKind::Added => new_left -= 1,
            LineKind::NoNewline => {}
        }
        hunk.lines.push(DiffLine { kind, text: text.to_string(), bare });
        i += 1;
    }
    if let Some(line) = lines.get(i).filter(|l| l.starts_with('\\')) {
        hunk.lines.push(DiffLine { kind: LineKind::NoNewline, text: line[1..].to_string(), bare: false });
        i += 1;
    }
    Ok((hunk, i))
}
