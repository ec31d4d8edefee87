//! Candidate bug records from a single fix commit.

use serde::{Deserialize, Serialize};

use crate::context::{self, ContextError, FunctionSnippet};
use crate::dataset::{BugRecord, CommitInfo, FileInfo, FunctionInfo};
use crate::diff::{self, FileDiff, UnifiedDiff};
use crate::forge::{self, IssueForge, RepoSlug};
use crate::git::Repo;
use crate::history::{self, CommitChain, HistoryError, SourceRules};
use crate::python;
use crate::tokenizer::{LexicalTokenizer, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum MineError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
    #[error(transparent)]
    Parse(#[from] python::ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineRequest {
    pub bug_id: String,
    pub project_name: String,
    pub project_url: String,
    pub bugsinpy_id: String,
    pub fix_commit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MineOutcome {
    Candidate {
        record: Box<BugRecord>,
        chain: CommitChain,
        /// Set when the description fell back to the commit message.
        warning: Option<String>,
    },
    Rejected {
        bug_id: String,
        reason: String,
    },
}

impl MineOutcome {
    fn rejected(req: &MineRequest, reason: impl Into<String>) -> Self {
        MineOutcome::Rejected { bug_id: req.bug_id.clone(), reason: reason.into() }
    }
}

/// Hunks of one file rendered without the `diff --git`/`---`/`+++` headers.
pub fn headerless_hunks(file: &FileDiff) -> String {
    let bare = FileDiff { header: Vec::new(), hunks: file.hunks.clone(), ..FileDiff::default() };
    UnifiedDiff { files: vec![bare] }.to_string()
}

/// Non-blank, non-comment lines.
pub fn nloc(source: &str, rules: &SourceRules) -> usize {
    source.lines().filter(|l| rules.is_code_line(l)).count()
}

fn function_span(before: &FunctionSnippet, after: &FunctionSnippet) -> FunctionInfo {
    FunctionInfo {
        function_name: before.name.clone(),
        function_parent: before.parent.clone(),
        function_before_start_line: before.start_line,
        function_before_end_line: before.end_line,
        function_after_start_line: after.start_line,
        function_after_end_line: after.end_line,
        function_before_token_count: before.token_count,
        function_after_token_count: after.token_count,
        function_before: before.code.clone(),
        function_after: after.code.clone(),
    }
}

/// Classify `req.fix_commit`, resolve its commit chain and extract the buggy
/// function before and after the fix.
pub fn mine_candidate(
    repo: &Repo,
    req: &MineRequest,
    rules: &SourceRules,
    issues: Option<&dyn IssueForge>,
) -> Result<MineOutcome, MineError> {
    let fix = repo.rev_parse(&req.fix_commit).map_err(HistoryError::from)?;
    let summary = history::classify_single_line(repo, &fix, rules)?;
    let (Some(path), Some(line)) = (summary.single_line_path.clone(), summary.single_line_location) else {
        let code_files = summary.per_file.values().filter(|(a, d)| a + d > 0).count();
        return Ok(MineOutcome::rejected(
            req,
            format!("not a single-line fix ({code_files} source file(s) with code changes)"),
        ));
    };
    let chain = history::resolve_chain(repo, &fix, &path, line)?;
    let before_src = history::text_at(repo, &chain.v3_buggy, &path)?;
    let after_src = history::text_at(repo, &chain.v4_fix, &path)?;

    let before = match context::locate_enclosing_function(&before_src, line) {
        Ok(f) => f,
        Err(ContextError::NotInFunction { .. }) => {
            return Ok(MineOutcome::rejected(req, format!("{path}:{line} is not inside a function")));
        }
        Err(e) => return Err(e.into()),
    };
    let Some(after) = context::find_matching_function(&after_src, &before)? else {
        return Ok(MineOutcome::rejected(
            req,
            format!("function {} not found after the fix", before.qualified_name()),
        ));
    };

    let parsed = diff::parse(&repo.diff(&chain.v3_buggy, &chain.v4_fix).map_err(HistoryError::from)?)?;
    let file_diff = parsed.file(&path).map(headerless_hunks).unwrap_or_default();
    let message = repo.commit_message(&fix).map_err(HistoryError::from)?;
    let slug = RepoSlug::from_url(&req.project_url).unwrap_or_else(|| RepoSlug::new("", &req.project_name));
    let description = forge::mine_bug_description(&message, &slug, issues);

    let file_name = path.rsplit('/').next().unwrap_or(&path).to_string();
    let record = BugRecord {
        bug_id: req.bug_id.clone(),
        project_name: req.project_name.clone(),
        project_url: req.project_url.clone(),
        bugsinpy_id: req.bugsinpy_id.clone(),
        is_single_line: true,
        buggy_line_location: line,
        buggy_line_content: before_src.lines().nth(line - 1).unwrap_or_default().to_string(),
        in_function: true,
        commit: CommitInfo {
            commit_id: fix.0.clone(),
            commit_message: message,
            commit_parent: chain.v3_buggy.0.clone(),
            commit_date: repo.commit_date(&fix).map_err(HistoryError::from)?,
            commit_file_diff: file_diff,
        },
        function: function_span(&before, &after),
        file: FileInfo {
            file_name,
            file_path: path.clone(),
            file_nloc: nloc(&before_src, rules),
            file_complexity: python::complexity(&before_src)?,
            file_token_count: LexicalTokenizer.count(&before_src),
        },
        bug_description: description.text,
    };
    Ok(MineOutcome::Candidate { record: Box::new(record), chain, warning: description.warning })
}

