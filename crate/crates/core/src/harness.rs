//! Turning model samples into test verdicts: extract code, splice it over the
//! developer-fixed function, run the bug's tests in a sandbox, restore.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{BugRecord, SampleStatus};
use crate::python;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no parseable code in model output")]
    Unparseable,
    #[error("stale backup {0} exists; restore or remove it first")]
    StaleBackup(PathBuf),
    #[error("lines {start}..={end} outside {path} ({len} lines)")]
    RangeOutOfBounds { path: PathBuf, start: usize, end: usize, len: usize },
    #[error("could not restore {path} in worktree {worktree}: {source}")]
    Restore { worktree: PathBuf, path: PathBuf, source: std::io::Error },
    #[error("sandbox runtime `{runtime}` unavailable: {message}")]
    RuntimeUnavailable { runtime: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    PythonFence,
    AnyFence,
    DefinitionPrefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFix {
    pub code: String,
    pub extraction_rule: ExtractionRule,
}

/// Remove the common leading whitespace of all non-blank lines.
pub fn dedent(text: &str) -> String {
    let indent = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start_matches([' ', '\t']).len())
        .min()
        .unwrap_or(0);
    text.split('\n')
        .map(|l| if l.trim().is_empty() { l.trim_start_matches([' ', '\t']) } else { &l[indent..] })
        .collect::<Vec<_>>()
        .join("\n")
}

struct Fence<'a> {
    info: &'a str,
    body: String,
}

fn fences(raw: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        let Some(info) = line.trim_start().strip_prefix("```") else { continue };
        let mut body = Vec::new();
        for inner in lines.by_ref() {
            if inner.trim() == "```" {
                break;
            }
            body.push(inner);
        }
        out.push(Fence { info: info.trim(), body: body.join("\n") });
    }
    out
}

fn clean(code: &str) -> Option<String> {
    let code = dedent(code);
    let code = code.trim_matches('\n').trim_end();
    (!code.is_empty() && python::parses_as_definitions(code)).then(|| code.to_string())
}

fn definition_prefix(raw: &str) -> Option<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines.iter().position(|l| {
        let t = l.trim_start();
        t.starts_with("def ") || t.starts_with("async def ") || t.starts_with("class ") || t.starts_with('@')
    })?;
    (start + 1..=lines.len())
        .rev()
        .find_map(|end| clean(&lines[start..end].join("\n")))
}

/// Extract function-level code from a raw sample.
///
/// Rules, first match wins: a fenced block tagged python, any fenced block,
/// then the longest run of lines from the first definition that parses.
pub fn parse_model_output(raw: &str) -> Result<ParsedFix, HarnessError> {
    let blocks = fences(raw);
    let is_python = |info: &str| matches!(info.to_ascii_lowercase().as_str(), "python" | "py" | "python3");
    let rules: [(ExtractionRule, Box<dyn Fn() -> Option<String>>); 3] = [
        (
            ExtractionRule::PythonFence,
            Box::new(|| blocks.iter().filter(|b| is_python(b.info)).find_map(|b| clean(&b.body))),
        ),
        (ExtractionRule::AnyFence, Box::new(|| blocks.iter().find_map(|b| clean(&b.body)))),
        (ExtractionRule::DefinitionPrefix, Box::new(|| definition_prefix(raw))),
    ];
    rules
        .iter()
        .find_map(|(rule, f)| f().map(|code| ParsedFix { code, extraction_rule: *rule }))
        .ok_or(HarnessError::Unparseable)
}

pub const BACKUP_SUFFIX: &str = ".hafix-backup";

/// Where a fix goes: a 1-based inclusive line range of a worktree file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub file_path: PathBuf,
    pub replace_start_line: usize,
    pub replace_end_line: usize,
    pub backup_path: PathBuf,
}

impl PatchPlan {
    pub fn new(file_path: impl Into<PathBuf>, start: usize, end: usize) -> Self {
        let file_path = file_path.into();
        let mut name = file_path.file_name().unwrap_or_default().to_os_string();
        name.push(BACKUP_SUFFIX);
        let backup_path = file_path.with_file_name(name);
        PatchPlan { file_path, replace_start_line: start, replace_end_line: end, backup_path }
    }

    /// Span of the developer-fixed function in the fix commit.
    pub fn for_record(record: &BugRecord) -> Self {
        PatchPlan::new(
            &record.file.file_path,
            record.function.function_after_start_line,
            record.function.function_after_end_line,
        )
    }
}

/// Proof that a fix was spliced; hand it back to [`restore`].
#[derive(Debug)]
#[must_use = "an applied fix must be restored"]
pub struct AppliedFix {
    worktree: PathBuf,
    file: PathBuf,
    backup: PathBuf,
}

fn reindent(code: &str, indent: &str) -> Vec<String> {
    dedent(code)
        .lines()
        .map(|l| if l.trim().is_empty() { String::new() } else { format!("{indent}{l}") })
        .collect()
}

pub fn apply_fix(worktree: &Path, plan: &PatchPlan, fix: &ParsedFix) -> Result<AppliedFix, HarnessError> {
    let file = worktree.join(&plan.file_path);
    let backup = worktree.join(&plan.backup_path);
    if backup.exists() {
        return Err(HarnessError::StaleBackup(backup));
    }
    let original = fs::read(&file).map_err(io_err(&file))?;
    let text = String::from_utf8_lossy(&original);
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let (start, end) = (plan.replace_start_line, plan.replace_end_line);
    if start == 0 || start > end || end > lines.len() {
        return Err(HarnessError::RangeOutOfBounds { path: file, start, end, len: lines.len() });
    }
    let first = lines[start - 1];
    let indent = &first[..first.len() - first.trim_start_matches([' ', '\t']).len()];
    let ends_with_newline = lines[end - 1].ends_with('\n');

    let mut out = String::with_capacity(text.len() + fix.code.len());
    lines[..start - 1].iter().for_each(|l| out.push_str(l));
    let replacement = reindent(&fix.code, indent).join("\n");
    out.push_str(&replacement);
    if ends_with_newline {
        out.push('\n');
    }
    lines[end..].iter().for_each(|l| out.push_str(l));

    fs::copy(&file, &backup).map_err(io_err(&backup))?;
    if let Err(source) = fs::write(&file, out) {
        let _ = fs::rename(&backup, &file);
        return Err(HarnessError::Io { path: file, source });
    }
    Ok(AppliedFix { worktree: worktree.to_path_buf(), file, backup })
}

/// Delete the patched file and move the backup back in place.
pub fn restore(applied: AppliedFix) -> Result<(), HarnessError> {
    let err = |source| HarnessError::Restore {
        worktree: applied.worktree.clone(),
        path: applied.file.clone(),
        source,
    };
    fs::remove_file(&applied.file).map_err(err)?;
    fs::rename(&applied.backup, &applied.file).map_err(err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub outcome: Outcome,
    pub duration_seconds: f64,
    pub log_excerpt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub const DEFAULT_TIMEOUT_SECONDS: u64 = 300;
pub const DEFAULT_MOUNT: &str = "/workspace";

fn default_mount() -> String {
    DEFAULT_MOUNT.to_string()
}

/// How to test one bug. `test_command` may use `{worktree}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxSpec {
    pub image: String,
    pub test_command: String,
    #[serde(default = "default_mount")]
    pub mount: String,
    #[serde(default)]
    pub timeout_seconds: Option<u64>,
}

impl SandboxSpec {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_seconds.unwrap_or(DEFAULT_TIMEOUT_SECONDS))
    }
}

/// Where test commands execute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SandboxRuntime {
    /// An OCI container CLI such as `docker` or `podman`.
    Container { program: String },
    /// `sh -c` directly in the worktree, without isolation.
    Host,
}

impl Default for SandboxRuntime {
    fn default() -> Self {
        SandboxRuntime::Container { program: "docker".into() }
    }
}

pub trait TestRunner: Send + Sync {
    fn run_tests(&self, worktree: &Path) -> Result<TestVerdict, HarnessError>;
}

/// A sandbox spec bound to a runtime.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub spec: SandboxSpec,
    pub runtime: SandboxRuntime,
}

const EXCERPT_BYTES: usize = 4096;

fn excerpt(bytes: &[u8]) -> String {
    let tail = &bytes[bytes.len().saturating_sub(EXCERPT_BYTES)..];
    String::from_utf8_lossy(tail).into_owned()
}

/// Stale `.pyc` files can mask a patched module when two samples share size
/// and mtime, and written caches would change the worktree.
const NO_BYTECODE: &str = "PYTHONDONTWRITEBYTECODE";

static CONTAINER_SEQ: AtomicUsize = AtomicUsize::new(0);

fn error_verdict(started: Instant, note: String) -> TestVerdict {
    TestVerdict {
        outcome: Outcome::Error,
        duration_seconds: started.elapsed().as_secs_f64(),
        log_excerpt: String::new(),
        note: Some(note),
    }
}

impl Sandbox {
    pub fn new(spec: SandboxSpec, runtime: SandboxRuntime) -> Self {
        Sandbox { spec, runtime }
    }

    fn unavailable(&self, program: &str, e: std::io::Error) -> HarnessError {
        HarnessError::RuntimeUnavailable { runtime: program.to_string(), message: e.to_string() }
    }

    fn command(&self, worktree: &Path) -> Result<(Command, Option<(String, String)>), HarnessError> {
        match &self.runtime {
            SandboxRuntime::Host => {
                let mut cmd = Command::new("sh");
                let script = self.spec.test_command.replace("{worktree}", &worktree.to_string_lossy());
                cmd.arg("-c").arg(script).current_dir(worktree).env(NO_BYTECODE, "1");
                Ok((cmd, None))
            }
            SandboxRuntime::Container { program } => {
                let abs = worktree.canonicalize().map_err(io_err(worktree))?;
                let name = format!(
                    "hafix-{}-{}",
                    std::process::id(),
                    CONTAINER_SEQ.fetch_add(1, Ordering::Relaxed)
                );
                let mut cmd = Command::new(program);
                cmd.args(["run", "--rm", "--network", "none", "--name", &name])
                    .arg("-e")
                    .arg(format!("{NO_BYTECODE}=1"))
                    .arg("-v")
                    .arg(format!("{}:{}", abs.display(), self.spec.mount))
                    .args(["-w", &self.spec.mount, &self.spec.image, "sh", "-c"])
                    .arg(self.spec.test_command.replace("{worktree}", &self.spec.mount));
                Ok((cmd, Some((program.clone(), name))))
            }
        }
    }

    fn image_present(&self, program: &str) -> Result<bool, HarnessError> {
        let status = Command::new(program)
            .args(["image", "inspect", &self.spec.image])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| self.unavailable(program, e))?;
        Ok(status.success())
    }
}

impl TestRunner for Sandbox {
    /// Exit status 0 passes, any other status fails, and a sandbox that cannot
    /// start yields an error verdict. Timeouts fail with a note.
    fn run_tests(&self, worktree: &Path) -> Result<TestVerdict, HarnessError> {
        let started = Instant::now();
        if let SandboxRuntime::Container { program } = &self.runtime {
            if !self.image_present(program)? {
                return Ok(error_verdict(started, format!("image {} not found", self.spec.image)));
            }
        }
        let (mut cmd, container) = self.command(worktree)?;
        let program = cmd.get_program().to_string_lossy().into_owned();
        // own process group, so a timeout can take down grandchildren holding the pipes
        cmd.process_group(0);
        let mut child = match cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn() {
            Ok(c) => c,
            Err(e) if container.is_some() => return Err(self.unavailable(&program, e)),
            Err(e) => return Ok(error_verdict(started, format!("could not start tests: {e}"))),
        };
        let readers: Vec<_> = [
            child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
            child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
        ]
        .into_iter()
        .flatten()
        .map(|mut r| {
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = r.read_to_end(&mut buf);
                buf
            })
        })
        .collect();

        let timeout = self.spec.timeout();
        let status = loop {
            match child.try_wait().map_err(io_err(worktree))? {
                Some(status) => break Some(status),
                None if started.elapsed() >= timeout => {
                    let _ = Command::new("kill")
                        .args(["-KILL", "--", &format!("-{}", child.id())])
                        .stdout(Stdio::null())
                        .stderr(Stdio::null())
                        .status();
                    let _ = child.kill();
                    let _ = child.wait();
                    if let Some((program, name)) = &container {
                        let _ = Command::new(program)
                            .args(["rm", "-f", name])
                            .stdout(Stdio::null())
                            .stderr(Stdio::null())
                            .status();
                    }
                    break None;
                }
                None => thread::sleep(Duration::from_millis(20)),
            }
        };
        let mut log = Vec::new();
        for r in readers {
            log.extend(r.join().unwrap_or_default());
        }
        let duration_seconds = started.elapsed().as_secs_f64();
        let log_excerpt = excerpt(&log);
        Ok(match status {
            None => TestVerdict {
                outcome: Outcome::Fail,
                duration_seconds,
                log_excerpt,
                note: Some(format!("timed out after {} s", timeout.as_secs())),
            },
            Some(s) => TestVerdict {
                outcome: if s.success() { Outcome::Pass } else { Outcome::Fail },
                duration_seconds,
                log_excerpt,
                note: None,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub index: usize,
    pub status: SampleStatus,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_rule: Option<ExtractionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub verdicts: Vec<SampleVerdict>,
    pub correct: usize,
}

/// Parse, apply, test and restore each sample in order.
pub fn evaluate_samples(
    plan: &PatchPlan,
    samples: &[String],
    worktree: &Path,
    runner: &dyn TestRunner,
) -> Result<Evaluation, HarnessError> {
    let backup = worktree.join(&plan.backup_path);
    if backup.exists() {
        return Err(HarnessError::StaleBackup(backup));
    }
    let mut verdicts = Vec::with_capacity(samples.len());
    for (index, raw) in samples.iter().enumerate() {
        let fix = match parse_model_output(raw) {
            Ok(fix) => fix,
            Err(_) => {
                verdicts.push(SampleVerdict {
                    index,
                    status: SampleStatus::ParseError,
                    passed: false,
                    extraction_rule: None,
                    test: None,
                });
                continue;
            }
        };
        let applied = apply_fix(worktree, plan, &fix)?;
        let tested = runner.run_tests(worktree);
        restore(applied)?;
        let test = tested?;
        let (status, passed) = match test.outcome {
            Outcome::Pass => (SampleStatus::Ok, true),
            Outcome::Fail => (SampleStatus::Ok, false),
            Outcome::Error => (SampleStatus::TestError, false),
        };
        verdicts.push(SampleVerdict {
            index,
            status,
            passed,
            extraction_rule: Some(fix.extraction_rule),
            test: Some(test),
        });
    }
    let correct = verdicts.iter().filter(|v| v.passed).count();
    Ok(Evaluation { verdicts, correct })
}

/// SHA-256 of every file under `root`, skipping `.git`.
pub fn hash_tree(root: &Path) -> Result<BTreeMap<PathBuf, [u8; 32]>, HarnessError> {
    let mut out = BTreeMap::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git");
    for entry in walker {
        let entry = entry.map_err(|e| HarnessError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).to_path_buf();
        out.insert(rel, Sha256::digest(&bytes).into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_fence_wins() {
        let raw = "Here is the fix:\n```python\ndef f():\n    return 1\n```";
        let fix = parse_model_output(raw).unwrap();
        assert_eq!(fix.code, "def f():\n    return 1");
        assert_eq!(fix.extraction_rule, ExtractionRule::PythonFence);
    }

    #[test]
    fn untagged_fence_and_bare_code() {
        let raw = "```\n    def g(x):\n        return x\n```\nDone.";
        let fix = parse_model_output(raw).unwrap();
        assert_eq!(fix.code, "def g(x):\n    return x");
        assert_eq!(fix.extraction_rule, ExtractionRule::AnyFence);

        let bare = "def f():\n    return 1";
        let fix = parse_model_output(bare).unwrap();
        assert_eq!(fix.code, bare);
        assert_eq!(fix.extraction_rule, ExtractionRule::DefinitionPrefix);

        let trailing = "def f():\n    return 1\nThis fixes the bug because";
        assert_eq!(parse_model_output(trailing).unwrap().code, bare);
    }

    #[test]
    fn prose_is_unparseable() {
        assert!(matches!(parse_model_output("I cannot help with that."), Err(HarnessError::Unparseable)));
        assert!(matches!(parse_model_output(""), Err(HarnessError::Unparseable)));
        assert!(matches!(parse_model_output("```python\nreturn (\n```"), Err(HarnessError::Unparseable)));
    }

    #[test]
    fn unterminated_fence_runs_to_end() {
        let fix = parse_model_output("```python\ndef f():\n    return 2\n").unwrap();
        assert_eq!(fix.code, "def f():\n    return 2");
    }

    #[test]
    fn backup_sits_next_to_file() {
        let plan = PatchPlan::new("pkg/mod.py", 3, 5);
        assert_eq!(plan.backup_path, PathBuf::from("pkg/mod.py.hafix-backup"));
        assert_ne!(plan.backup_path, plan.file_path);
        assert_eq!(plan.backup_path.parent(), plan.file_path.parent());
    }

    #[test]
    fn apply_and_restore_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = "class A:\n    def f(self):\n        return 0\n\n    def g(self):\n        pass\n";
        fs::write(dir.path().join("m.py"), src).unwrap();
        let plan = PatchPlan::new("m.py", 2, 3);
        let fix = parse_model_output("```python\ndef f(self):\n    return 1\n```").unwrap();
        let applied = apply_fix(dir.path(), &plan, &fix).unwrap();
        let patched = fs::read_to_string(dir.path().join("m.py")).unwrap();
        assert_eq!(patched, "class A:\n    def f(self):\n        return 1\n\n    def g(self):\n        pass\n");
        assert!(matches!(apply_fix(dir.path(), &plan, &fix), Err(HarnessError::StaleBackup(_))));
        restore(applied).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("m.py")).unwrap(), src);
        assert!(!dir.path().join("m.py.hafix-backup").exists());

        let same = ParsedFix { code: "def f(self):\n    return 0".into(), extraction_rule: ExtractionRule::PythonFence };
        let applied = apply_fix(dir.path(), &plan, &same).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("m.py")).unwrap(), src);
        restore(applied).unwrap();

        let bad = PatchPlan::new("m.py", 5, 9);
        assert!(matches!(apply_fix(dir.path(), &bad, &fix), Err(HarnessError::RangeOutOfBounds { .. })));
    }

    #[test]
    fn dedent_keeps_relative_indentation() {
        assert_eq!(dedent("    a\n\n      b"), "a\n\n  b");
    }
}
