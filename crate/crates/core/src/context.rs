//! Baseline context and the seven historical heuristic payloads.

use serde::{Deserialize, Serialize};

use crate::dataset::BugRecord;
use crate::diff::{FileDiff, LineKind};
use crate::git::Repo;
use crate::history::{self, CommitChain, DiffPatch, HistoryError, Introduced, SourceRules};
use crate::method::HeuristicKind;
use crate::python::{self, FunctionDef, ParseError};
use crate::tokenizer::{LexicalTokenizer, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("line {line} is not inside any function")]
    NotInFunction { line: usize },
    #[error("line {line} is outside the source ({len} lines)")]
    LineOutOfRange { line: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSnippet {
    pub name: String,
    /// Enclosing class or function name; empty at module level.
    pub parent: String,
    pub start_line: usize,
    pub end_line: usize,
    pub parameters: Vec<String>,
    pub code: String,
    pub token_count: usize,
}

impl FunctionSnippet {
    pub fn qualified_name(&self) -> String {
        if self.parent.is_empty() {
            self.name.clone()
        } else {
            format!("{}.{}", self.parent, self.name)
        }
    }
}

/// The exact source text of lines `start..=end` (1-based), without the final newline.
pub fn line_span(source: &str, start: usize, end: usize) -> String {
    source
        .split('\n')
        .skip(start.saturating_sub(1))
        .take(end + 1 - start)
        .collect::<Vec<_>>()
        .join("\n")
}

fn snippet(source: &str, def: &FunctionDef, tokenizer: &dyn Tokenizer) -> FunctionSnippet {
    let code = line_span(source, def.start_line, def.end_line);
    FunctionSnippet {
        name: def.name.clone(),
        parent: def.parent.clone().unwrap_or_default(),
        start_line: def.start_line,
        end_line: def.end_line,
        parameters: def.parameters.clone(),
        token_count: tokenizer.count(&code),
        code,
    }
}

/// Innermost function whose span contains `line`.
pub fn locate_enclosing_function(source: &str, line: usize) -> Result<FunctionSnippet, ContextError> {
    let len = source.lines().count();
    if line == 0 || line > len {
        return Err(ContextError::LineOutOfRange { line, len });
    }
    let defs = python::functions(source)?;
    defs.iter()
        .filter(|d| d.contains_line(line))
        .max_by_key(|d| d.depth)
        .map(|d| snippet(source, d, &LexicalTokenizer))
        .ok_or(ContextError::NotInFunction { line })
}

/// Find the counterpart of `target` in another version of the file: same name,
/// parent and parameter list if possible, else same name and parent.
pub fn find_matching_function(source: &str, target: &FunctionSnippet) -> Result<Option<FunctionSnippet>, ContextError> {
    let defs = python::functions(source)?;
    let parent = |d: &FunctionDef| d.parent.clone().unwrap_or_default();
    let exact = defs
        .iter()
        .find(|d| d.name == target.name && parent(d) == target.parent && d.parameters == target.parameters);
    let loose = || defs.iter().find(|d| d.name == target.name && parent(d) == target.parent);
    Ok(exact.or_else(loose).map(|d| snippet(source, d, &LexicalTokenizer)))
}

/// Qualified names of every function in source order, duplicates kept.
pub fn list_function_names(source: &str) -> Result<Vec<String>, ContextError> {
    Ok(python::functions(source)?.iter().map(FunctionDef::qualified_name).collect())
}

/// Functions whose span in either version contains a changed line of `diff`.
///
/// Removed lines are matched against `before`, added lines against `after`.
/// Names are ordered by their position in `after`, followed by functions that
/// only exist in `before`.
pub fn co_evolved_function_names(before: &str, after: &str, diff: &FileDiff) -> Result<Vec<String>, ContextError> {
    let before_defs = python::functions(before)?;
    let after_defs = python::functions(after)?;
    let changes = diff.changes();
    let removed: Vec<usize> = changes.iter().filter(|c| c.kind == LineKind::Removed).map(|c| c.line).collect();
    let added: Vec<usize> = changes.iter().filter(|c| c.kind == LineKind::Added).map(|c| c.line).collect();

    let touched_before: Vec<String> = before_defs
        .iter()
        .filter(|d| removed.iter().any(|l| d.contains_line(*l)))
        .map(FunctionDef::qualified_name)
        .collect();
    let mut out: Vec<String> = Vec::new();
    for d in &after_defs {
        let name = d.qualified_name();
        let hit = added.iter().any(|l| d.contains_line(*l)) || touched_before.contains(&name);
        if hit && !out.contains(&name) {
            out.push(name);
        }
    }
    for name in touched_before {
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}

/// Fields mined from V3/V4 for the non-historical prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineContext {
    pub project_name: String,
    pub file_name: String,
    pub file_path: String,
    pub buggy_line_location: usize,
    pub buggy_line_content: String,
    pub function_name: String,
    pub function_code_before: String,
    pub function_start_line: usize,
    pub bug_description: String,
}

impl BaselineContext {
    pub fn from_record(record: &BugRecord) -> Self {
        BaselineContext {
            project_name: record.project_name.clone(),
            file_name: record.file.file_name.clone(),
            file_path: record.file.file_path.clone(),
            buggy_line_location: record.buggy_line_location,
            buggy_line_content: record.buggy_line_content.clone(),
            function_name: record.function.function_name.clone(),
            function_code_before: record.function.function_before.clone(),
            function_start_line: record.function.function_before_start_line,
            bug_description: record.bug_description.clone(),
        }
    }

    /// 0-based line of the buggy line inside `function_code_before`.
    pub fn buggy_line_offset(&self) -> Option<usize> {
        let positional = self.buggy_line_location.checked_sub(self.function_start_line);
        crate::dataset::buggy_line_index(&self.function_code_before, &self.buggy_line_content, positional)
    }
}

/// Whether the function before the blame commit could be recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorVersion {
    Present,
    /// The blame commit is a root commit, so there is no V1.
    NoPriorVersion,
    /// V1 exists but did not contain the function (or the file).
    NoPriorFunction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePair {
    pub before: String,
    pub after: String,
    pub prior: PriorVersion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicPayload {
    pub kind: HeuristicKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_pair: Option<CodePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<DiffPatch>,
}

impl HeuristicPayload {
    pub fn with_names(kind: HeuristicKind, names: Vec<String>) -> Self {
        debug_assert!(kind.carries_names());
        HeuristicPayload { kind, names: Some(names), code_pair: None, diff: None }
    }

    pub fn with_code_pair(pair: CodePair) -> Self {
        HeuristicPayload { kind: HeuristicKind::FnPair, names: None, code_pair: Some(pair), diff: None }
    }

    pub fn with_diff(diff: DiffPatch) -> Self {
        HeuristicPayload { kind: HeuristicKind::FlDiff, names: None, code_pair: None, diff: Some(diff) }
    }

    /// Exactly the field implied by `kind` is populated.
    pub fn is_consistent(&self) -> bool {
        match self.kind {
            HeuristicKind::FnPair => self.names.is_none() && self.code_pair.is_some() && self.diff.is_none(),
            HeuristicKind::FlDiff => self.names.is_none() && self.code_pair.is_none() && self.diff.is_some(),
            _ => self.names.is_some() && self.code_pair.is_none() && self.diff.is_none(),
        }
    }
}

/// Everything mined once from the blame commit; payloads are cut from it.
pub struct BlameSnapshot<'r> {
    repo: &'r Repo,
    chain: CommitChain,
    introduced: Introduced,
    rules: SourceRules,
}

impl<'r> BlameSnapshot<'r> {
    pub fn load(repo: &'r Repo, chain: &CommitChain) -> Result<Self, ContextError> {
        let introduced = history::introduced_by(repo, &chain.v2_blame)?;
        Ok(BlameSnapshot { repo, chain: chain.clone(), introduced, rules: SourceRules::default() })
    }

    fn before_after(&self, path: &str) -> Result<(String, String), ContextError> {
        let before = match &self.introduced.parent {
            Some(p) => history::text_at_opt(self.repo, p, path)?.unwrap_or_default(),
            None => String::new(),
        };
        let after = history::text_at_opt(self.repo, &self.chain.v2_blame, path)?.unwrap_or_default();
        Ok((before, after))
    }

    fn co_evolved_in(&self, path: &str) -> Result<Vec<String>, ContextError> {
        let Some(file_diff) = self.introduced.parsed.file(path) else {
            return Ok(Vec::new());
        };
        let (before, after) = self.before_after(path)?;
        co_evolved_function_names(&before, &after, file_diff)
    }

    fn functions_in(&self, path: &str) -> Result<Vec<String>, ContextError> {
        match history::text_at_opt(self.repo, &self.chain.v2_blame, path)? {
            Some(src) => list_function_names(&src),
            None => Ok(Vec::new()),
        }
    }

    /// Apply `f` to every changed source file, skipping files that fail to parse.
    fn across_changed<F>(&self, f: F) -> Result<Vec<String>, ContextError>
    where
        F: Fn(&Self, &str) -> Result<Vec<String>, ContextError>,
    {
        let mut out = Vec::new();
        for path in self.introduced.changed.iter().filter(|p| self.rules.is_source(p)) {
            match f(self, path) {
                Ok(names) => out.extend(names),
                Err(ContextError::Parse(e)) => {
                    log::warn!("{}: skipping {path} at {}: {e}", self.chain.v2_blame.short(), self.chain.v2_blame);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    fn function_pair(&self) -> Result<CodePair, ContextError> {
        let after_src = history::text_at(self.repo, &self.chain.v2_blame, &self.chain.blame_path)?;
        let after = locate_enclosing_function(&after_src, self.chain.blame_line)?;
        let Some(v1) = &self.chain.v1_pre_blame else {
            return Ok(CodePair { before: String::new(), after: after.code, prior: PriorVersion::NoPriorVersion });
        };
        let before = match history::text_at_opt(self.repo, v1, &self.chain.blame_path)? {
            Some(src) => find_matching_function(&src, &after)?,
            None => None,
        };
        Ok(match before {
            Some(b) => CodePair { before: b.code, after: after.code, prior: PriorVersion::Present },
            None => CodePair { before: String::new(), after: after.code, prior: PriorVersion::NoPriorFunction },
        })
    }

    pub fn payload(&self, kind: HeuristicKind) -> Result<HeuristicPayload, ContextError> {
        let path = self.chain.blame_path.as_str();
        Ok(match kind {
            HeuristicKind::CfnModified => HeuristicPayload::with_names(kind, self.co_evolved_in(path)?),
            HeuristicKind::CfnAll => HeuristicPayload::with_names(kind, self.across_changed(Self::co_evolved_in)?),
            HeuristicKind::FnModified => HeuristicPayload::with_names(kind, self.functions_in(path)?),
            HeuristicKind::FnAll => HeuristicPayload::with_names(kind, self.across_changed(Self::functions_in)?),
            HeuristicKind::FlnAll => HeuristicPayload::with_names(kind, self.introduced.changed.clone()),
            HeuristicKind::FnPair => HeuristicPayload::with_code_pair(self.function_pair()?),
            HeuristicKind::FlDiff => HeuristicPayload::with_diff(self.introduced.patch.clone()),
        })
    }
}

/// Assemble one heuristic payload for a bug whose chain is already resolved.
pub fn build_payload(
    kind: HeuristicKind,
    chain: &CommitChain,
    repo: &Repo,
    _record: &BugRecord,
) -> Result<HeuristicPayload, ContextError> {
    BlameSnapshot::load(repo, chain)?.payload(kind)
}
