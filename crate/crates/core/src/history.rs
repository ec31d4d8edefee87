//! Commit-history mining: the V1..V4 snapshot chain of a bug, single-line fix
//! classification, and per-commit diffs and changed-file lists.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diff::{self, DiffError, UnifiedDiff};
use crate::git::{CommitId, GitError, Repo};

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error(transparent)]
    Git(#[from] GitError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("commit {0} has no parent")]
    RootCommit(CommitId),
    #[error("commit {0} is a merge commit; only first-parent linear history is supported")]
    MergeCommit(CommitId),
    #[error("{path} does not exist at {commit}")]
    MissingPath { commit: CommitId, path: String },
    #[error("line {line} is outside {path} ({len} lines) at {commit}")]
    LineOutOfRange {
        commit: CommitId,
        path: String,
        line: usize,
        len: usize,
    },
    #[error("{path} at {commit} is not valid UTF-8")]
    NotUtf8 { commit: CommitId, path: String },
}

/// The four snapshots around a bug.
///
/// `v4_fix` holds the developer fix, `v3_buggy` is its first parent, `v2_blame`
/// last touched the buggy line, and `v1_pre_blame` is the first parent of
/// `v2_blame` (absent when the blame commit is a root commit).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitChain {
    pub v4_fix: CommitId,
    pub v3_buggy: CommitId,
    pub v2_blame: CommitId,
    pub v1_pre_blame: Option<CommitId>,
    /// Path of the buggy file at V2.
    pub blame_path: String,
    /// Line number of the buggy line in the V2 version of the file.
    pub blame_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineChangeSummary {
    pub files_changed: Vec<String>,
    /// `path -> (added code lines, deleted code lines)` for non-test source files.
    pub per_file: BTreeMap<String, (usize, usize)>,
    pub is_single_line: bool,
    /// Line number of the deleted code line in the pre-change file.
    pub single_line_location: Option<usize>,
    /// Path of the single changed source file, when `is_single_line`.
    pub single_line_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffPatch {
    pub text: String,
    pub source_commit: CommitId,
}

impl DiffPatch {
    pub fn parse(&self) -> Result<UnifiedDiff, DiffError> {
        diff::parse(&self.text)
    }
}

/// Which files count as source code and how line comments start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRules {
    pub extensions: Vec<String>,
    pub line_comment: String,
}

impl Default for SourceRules {
    fn default() -> Self {
        SourceRules { extensions: vec!["py".into()], line_comment: "#".into() }
    }
}

impl SourceRules {
    pub fn is_source(&self, path: &str) -> bool {
        let name = path.rsplit('/').next().unwrap_or(path);
        match name.rsplit_once('.') {
            Some((_, ext)) => self.extensions.iter().any(|e| e == ext),
            None => false,
        }
    }

    /// Blank lines and lines whose first non-blank characters open a line comment carry no code.
    pub fn is_code_line(&self, line: &str) -> bool {
        let t = line.trim_start();
        !(t.trim_end().is_empty() || t.starts_with(self.line_comment.as_str()))
    }
}

/// Test files: any directory segment named `test`/`tests`, or a file stem
/// matching `test_*` or `*_test`.
pub fn is_test_path(path: &str) -> bool {
    let mut segments: Vec<&str> = path.split('/').collect();
    let name = segments.pop().unwrap_or("");
    if segments.iter().any(|s| *s == "test" || *s == "tests") {
        return true;
    }
    let stem = name.split('.').next().unwrap_or(name);
    stem.starts_with("test_") || stem.ends_with("_test")
}

fn single_parent(repo: &Repo, commit: &CommitId) -> Result<CommitId, HistoryError> {
    let parents = repo.parents(commit)?;
    match parents.len() {
        0 => Err(HistoryError::RootCommit(commit.clone())),
        1 => Ok(parents.into_iter().next().unwrap()),
        _ => Err(HistoryError::MergeCommit(commit.clone())),
    }
}

fn first_parent(repo: &Repo, commit: &CommitId) -> Result<CommitId, HistoryError> {
    repo.parents(commit)?
        .into_iter()
        .next()
        .ok_or_else(|| HistoryError::RootCommit(commit.clone()))
}

/// Exact bytes of `path` at `commit`.
pub fn file_at(repo: &Repo, commit: &CommitId, path: &str) -> Result<Vec<u8>, HistoryError> {
    repo.blob(commit, path)?.ok_or_else(|| HistoryError::MissingPath {
        commit: commit.clone(),
        path: path.to_string(),
    })
}

/// `file_at` decoded as UTF-8.
pub fn text_at(repo: &Repo, commit: &CommitId, path: &str) -> Result<String, HistoryError> {
    String::from_utf8(file_at(repo, commit, path)?).map_err(|_| HistoryError::NotUtf8 {
        commit: commit.clone(),
        path: path.to_string(),
    })
}

/// Like [`text_at`] but `None` when the path does not exist at `commit`.
pub fn text_at_opt(repo: &Repo, commit: &CommitId, path: &str) -> Result<Option<String>, HistoryError> {
    match text_at(repo, commit, path) {
        Ok(t) => Ok(Some(t)),
        Err(HistoryError::MissingPath { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Recover V1..V4 for the bug fixed by `fix_commit` at `buggy_line` of `file_path`.
pub fn resolve_chain(
    repo: &Repo,
    fix_commit: &CommitId,
    file_path: &str,
    buggy_line: usize,
) -> Result<CommitChain, HistoryError> {
    let v4 = repo.rev_parse(fix_commit.as_str())?;
    let v3 = single_parent(repo, &v4)?;
    let source = file_at(repo, &v3, file_path)?;
    let len = String::from_utf8_lossy(&source).lines().count();
    if buggy_line == 0 || buggy_line > len {
        return Err(HistoryError::LineOutOfRange {
            commit: v3,
            path: file_path.to_string(),
            line: buggy_line,
            len,
        });
    }
    let blame = repo.blame_line(&v3, file_path, buggy_line)?;
    let parents = repo.parents(&blame.commit)?;
    if parents.len() > 1 {
        return Err(HistoryError::MergeCommit(blame.commit));
    }
    Ok(CommitChain {
        v4_fix: v4,
        v3_buggy: v3,
        v2_blame: blame.commit,
        v1_pre_blame: parents.into_iter().next(),
        blame_path: blame.original_path,
        blame_line: blame.original_line,
    })
}

/// Decide whether `fix_commit` is a single-line fix.
pub fn classify_single_line(
    repo: &Repo,
    fix_commit: &CommitId,
    rules: &SourceRules,
) -> Result<LineChangeSummary, HistoryError> {
    let fix = repo.rev_parse(fix_commit.as_str())?;
    let parent = single_parent(repo, &fix)?;
    let parsed = diff::parse(&repo.diff(&parent, &fix)?)?;

    let mut files_changed: Vec<String> = Vec::new();
    let mut per_file = BTreeMap::new();
    let mut removed_at: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for file in &parsed.files {
        let Some(path) = file.path() else { continue };
        files_changed.push(path.to_string());
        if is_test_path(path) || !rules.is_source(path) {
            continue;
        }
        let mut added = 0;
        let mut removed = Vec::new();
        for c in file.changes() {
            if !rules.is_code_line(c.text) {
                continue;
            }
            match c.kind {
                diff::LineKind::Added => added += 1,
                diff::LineKind::Removed => removed.push(c.line),
                _ => {}
            }
        }
        per_file.insert(path.to_string(), (added, removed.len()));
        removed_at.insert(path.to_string(), removed);
    }
    files_changed.sort();
    files_changed.dedup();

    let with_code: Vec<(&String, &(usize, usize))> =
        per_file.iter().filter(|(_, (a, d))| a + d > 0).collect();
    let single = match with_code.as_slice() {
        [(path, (1, 1))] => Some((*path).clone()),
        _ => None,
    };
    let single_line_location = single.as_ref().map(|p| removed_at[p][0]);
    Ok(LineChangeSummary {
        files_changed,
        per_file,
        is_single_line: single.is_some(),
        single_line_location,
        single_line_path: single,
    })
}

/// Unified diff of `commit` against its first parent.
pub fn extract_diff(repo: &Repo, commit: &CommitId) -> Result<DiffPatch, HistoryError> {
    let commit = repo.rev_parse(commit.as_str())?;
    let parent = first_parent(repo, &commit)?;
    Ok(DiffPatch { text: repo.diff(&parent, &commit)?, source_commit: commit })
}

/// Sorted, deduplicated paths touched by `commit`; renames contribute both sides.
pub fn changed_files(repo: &Repo, commit: &CommitId) -> Result<Vec<String>, HistoryError> {
    let commit = repo.rev_parse(commit.as_str())?;
    let parent = first_parent(repo, &commit)?;
    let mut paths = repo.changed_paths(&parent, &commit)?;
    paths.sort();
    paths.dedup();
    Ok(paths)
}

const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

/// What a commit introduced relative to its first parent, or relative to the
/// empty tree when it is a root commit.
#[derive(Debug, Clone)]
pub struct Introduced {
    pub parent: Option<CommitId>,
    pub patch: DiffPatch,
    pub parsed: UnifiedDiff,
    pub changed: Vec<String>,
}

pub fn introduced_by(repo: &Repo, commit: &CommitId) -> Result<Introduced, HistoryError> {
    let commit = repo.rev_parse(commit.as_str())?;
    let parent = repo.parents(&commit)?.into_iter().next();
    let base = parent.clone().unwrap_or_else(|| CommitId(EMPTY_TREE.to_string()));
    let text = repo.diff(&base, &commit)?;
    let parsed = diff::parse(&text)?;
    let mut changed = repo.changed_paths(&base, &commit)?;
    changed.sort();
    changed.dedup();
    Ok(Introduced { parent, patch: DiffPatch { text, source_commit: commit }, parsed, changed })
}
