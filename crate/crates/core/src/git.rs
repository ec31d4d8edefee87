//! Thin wrapper over the `git` command-line tool.
//!
//! Every invocation pins the configuration knobs that change diff output
//! (prefixes, rename detection, quoting, external drivers) so results do not
//! depend on the caller's git configuration.

use std::ffi::OsStr;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GitError {
    #[error("failed to launch git: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("`git {args}` failed: {stderr}")]
    Command { args: String, stderr: String },
    #[error("{path} is not a git repository")]
    NotARepository { path: PathBuf },
    #[error("unexpected git output: {0}")]
    Output(String),
}

/// A full hexadecimal commit id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommitId(pub String);

impl CommitId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(7)]
    }
}

impl fmt::Display for CommitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CommitId {
    fn from(s: &str) -> Self {
        CommitId(s.to_string())
    }
}

/// Result of blaming a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlameLine {
    pub commit: CommitId,
    /// Line number of the blamed line in the blamed commit's version of the file.
    pub original_line: usize,
    /// Path of the file in the blamed commit.
    pub original_path: String,
}

#[derive(Debug, Clone)]
pub struct Repo {
    root: PathBuf,
}

const PINNED_CONFIG: &[&str] = &[
    "-c",
    "core.quotepath=false",
    "-c",
    "diff.noprefix=false",
    "-c",
    "diff.mnemonicPrefix=false",
    "-c",
    "diff.renames=false",
    "-c",
    "color.ui=never",
    "-c",
    "core.autocrlf=false",
];

impl Repo {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GitError> {
        let root = path.as_ref().to_path_buf();
        let repo = Repo { root };
        match repo.run(["rev-parse", "--git-dir"]) {
            Ok(_) => Ok(repo),
            Err(GitError::Command { .. }) => Err(GitError::NotARepository { path: repo.root }),
            Err(e) => Err(e),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn command<I, S>(&self, args: I) -> (Command, String)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<OsStr>,
    {
        let mut cmd = Command::new("git");
        cmd.arg("-C").arg(&self.root).args(PINNED_CONFIG);
        let mut shown = Vec::new();
        for a in args {
            shown.push(a.as_ref().to_string_lossy().into_owned());
            cmd.arg(a.as_ref());
        }
        cmd.env("LC_ALL", "C").env("GIT_PAGER", "cat");
        (cmd, shown.join(" "))
    }

    /// Run git and return raw stdout.
    pub fn run<I, S>(&self, args: I) -> Result<Vec<u8>, GitError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<OsStr>,
    {
        let (mut cmd, shown) = self.command(args);
        let out = cmd.output()?;
        if !out.status.success() {
            return Err(GitError::Command {
                args: shown,
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    fn run_text<I, S>(&self, args: I) -> Result<String, GitError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<OsStr>,
    {
        let bytes = self.run(args)?;
        String::from_utf8(bytes).map_err(|e| GitError::Output(e.to_string()))
    }

    pub fn rev_parse(&self, rev: &str) -> Result<CommitId, GitError> {
        let spec = format!("{rev}^{{commit}}");
        let out = self.run_text(["rev-parse", "--verify", "--quiet", spec.as_str()])?;
        Ok(CommitId(out.trim().to_string()))
    }

    /// Parent commits in order (first parent first).
    pub fn parents(&self, commit: &CommitId) -> Result<Vec<CommitId>, GitError> {
        let out = self.run_text(["rev-list", "--parents", "-n", "1", commit.as_str()])?;
        Ok(out
            .split_whitespace()
            .skip(1)
            .map(|s| CommitId(s.to_string()))
            .collect())
    }

    /// Returns `true` when `ancestor` is reachable from (or equal to) `descendant`.
    pub fn is_ancestor(&self, ancestor: &CommitId, descendant: &CommitId) -> Result<bool, GitError> {
        let (mut cmd, _) = self.command(["merge-base", "--is-ancestor", ancestor.as_str(), descendant.as_str()]);
        let status = cmd.output()?.status;
        match status.code() {
            Some(0) => Ok(true),
            Some(1) => Ok(false),
            _ => Err(GitError::Output(format!("merge-base exited with {status}"))),
        }
    }

    /// Blob content of `path` at `commit`, or `None` if the path is absent there.
    pub fn blob(&self, commit: &CommitId, path: &str) -> Result<Option<Vec<u8>>, GitError> {
        let spec = format!("{}:{}", commit, path);
        let (mut cmd, _) = self.command(["cat-file", "-e", spec.as_str()]);
        if !cmd.output()?.status.success() {
            return Ok(None);
        }
        self.run(["cat-file", "blob", spec.as_str()]).map(Some)
    }

    /// Blame one line following first-parent history.
    pub fn blame_line(&self, commit: &CommitId, path: &str, line: usize) -> Result<BlameLine, GitError> {
        let range = format!("{line},{line}");
        let out = self.run_text([
            "blame",
            "--porcelain",
            "--first-parent",
            "-L",
            range.as_str(),
            commit.as_str(),
            "--",
            path,
        ])?;
        let mut lines = out.lines();
        let head = lines.next().ok_or_else(|| GitError::Output("empty blame output".into()))?;
        let mut fields = head.split_whitespace();
        let sha = fields.next().ok_or_else(|| GitError::Output(head.to_string()))?;
        let original_line = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GitError::Output(head.to_string()))?;
        let original_path = lines
            .find_map(|l| l.strip_prefix("filename "))
            .unwrap_or(path)
            .to_string();
        Ok(BlameLine { commit: CommitId(sha.to_string()), original_line, original_path })
    }

    /// Unified diff between two commits with lexicographic file order and no rename detection.
    pub fn diff(&self, from: &CommitId, to: &CommitId) -> Result<String, GitError> {
        self.run_text([
            "diff",
            "--no-color",
            "--no-ext-diff",
            "--no-renames",
            "--unified=3",
            "--src-prefix=a/",
            "--dst-prefix=b/",
            from.as_str(),
            to.as_str(),
        ])
    }

    /// Paths touched between two commits (renames reported as delete + add).
    pub fn changed_paths(&self, from: &CommitId, to: &CommitId) -> Result<Vec<String>, GitError> {
        let out = self.run_text(["diff", "--name-only", "--no-renames", "-z", from.as_str(), to.as_str()])?;
        Ok(out.split('\0').filter(|s| !s.is_empty()).map(str::to_string).collect())
    }

    pub fn commit_message(&self, commit: &CommitId) -> Result<String, GitError> {
        let out = self.run_text(["show", "-s", "--format=%B", commit.as_str()])?;
        Ok(out.trim_end().to_string())
    }

    /// Committer date formatted as `YYYY-MM-DD HH:MM:SS` in the commit's own timezone.
    pub fn commit_date(&self, commit: &CommitId) -> Result<String, GitError> {
        let out = self.run_text(["show", "-s", "--date=format:%Y-%m-%d %H:%M:%S", "--format=%cd", commit.as_str()])?;
        Ok(out.trim().to_string())
    }

    pub fn add_worktree(&self, dir: &Path, commit: &CommitId) -> Result<(), GitError> {
        self.run([
            OsStr::new("worktree"),
            OsStr::new("add"),
            OsStr::new("--detach"),
            OsStr::new("--force"),
            dir.as_os_str(),
            OsStr::new(commit.as_str()),
        ])?;
        Ok(())
    }

    pub fn remove_worktree(&self, dir: &Path) -> Result<(), GitError> {
        self.run([OsStr::new("worktree"), OsStr::new("remove"), OsStr::new("--force"), dir.as_os_str()])?;
        Ok(())
    }
}
