//! Synthetic projects behind the bundled replay corpus.

#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod git_fixture;

use std::fs;
use std::path::{Path, PathBuf};

use git_fixture::{Fixture, StubServer};
use hafix_core::context::{BaselineContext, BlameSnapshot};
use hafix_core::dataset::{self, BugRecord};
use hafix_core::gateway::{InferenceResult, InferenceStatus, ReplayCorpus, ReplayKey};
use hafix_core::git::CommitId;
use hafix_core::history::{self, SourceRules};
use hafix_core::method::{Method, PromptStyle};
use hafix_core::mine::{mine_candidate, MineOutcome, MineRequest};
use hafix_core::prompt::render_prompt;
use hafix_core::tokenizer::{LexicalTokenizer, Tokenizer};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/replay")
}

/// One synthetic project: four snapshots of `module` plus a test script.
pub struct Project {
    pub name: &'static str,
    pub bug_id: &'static str,
    pub module: &'static str,
    pub test_file: &'static str,
    pub test_script: &'static str,
    /// V1, blame commit, buggy snapshot and fix.
    pub snapshots: [&'static str; 4],
    /// Correct-sample count per method in catalog order; `None` is an OOM request.
    pub correct: [Option<usize>; 8],
    /// A plausible but wrong rewrite of the buggy function.
    pub wrong: &'static str,
}

const ALPHA_V1: &str = r#""""Small arithmetic helpers."""


def clamp(value, low, high):
    if value < low:
        return low
    return min(value, high)


def mean(values):
    if not values:
        return 0.0
    total = sum(values)
    return total / max(len(values), 1)
"#;

const ALPHA_V2: &str = r#""""Small arithmetic helpers."""


def clamp(value, low, high):
    if value < low:
        return low
    if value > high:
        return high
    return value


def mean(values):
    if not values:
        return 0.0
    total = sum(values)
    return total / (len(values) - 1)
"#;

const ALPHA_V3: &str = r#""""Small arithmetic helpers."""

import math


def clamp(value, low, high):
    if value < low:
        return low
    if value > high:
        return high
    return value


def mean(values):
    if not values:
        return 0.0
    total = sum(values)
    return total / (len(values) - 1)


def spread(values):
    return max(values) - min(values) if values else math.nan
"#;

const ALPHA_TEST: &str = r#"from calc import clamp, mean, spread

assert clamp(5, 0, 3) == 3
assert clamp(-1, 0, 3) == 0
assert mean([]) == 0.0
assert mean([1.0, 2.0, 3.0]) == 2.0
assert spread([4, 1]) == 3
print("ok")
"#;

const BETA_V1: &str = r#"def slugify(title):
    words = title.strip().lower().split()
    return "-".join(words)


def initials(name):
    parts = name.split()
    return "".join(p[0] for p in parts)
"#;

const BETA_V2: &str = r#"def slugify(title):
    words = title.strip().lower().split()
    return "-".join(w for w in words if w.isalnum())


def initials(name):
    parts = name.split()
    return "".join(p[0].upper() for p in parts[1:])
"#;

const BETA_V3: &str = r#"SEPARATOR = "-"


def slugify(title):
    words = title.strip().lower().split()
    return SEPARATOR.join(w for w in words if w.isalnum())


def initials(name):
    parts = name.split()
    return "".join(p[0].upper() for p in parts[1:])
"#;

const BETA_TEST: &str = r#"from text import initials, slugify

assert slugify(" Hello  World ") == "hello-world"
assert initials("ada lovelace") == "AL"
assert initials("grace brewster hopper") == "GBH"
"#;

const GAMMA_V1: &str = r#"class Inventory(object):
    def __init__(self):
        self.items = {}

    def add(self, name, count):
        self.items[name] = self.items.get(name, 0) + count

    def remove(self, name, count):
        left = self.items.get(name, 0) - count
        if left < 0:
            raise ValueError(name)
        self.items[name] = left
"#;

const GAMMA_V2: &str = r#"class Inventory(object):
    def __init__(self):
        self.items = {}

    def add(self, name, count):
        if count <= 0:
            raise ValueError(count)
        self.items[name] = self.items.get(name, 0) + count

    def remove(self, name, count):
        left = self.items.get(name, 0) - count
        if left <= 0:
            raise ValueError(name)
        self.items[name] = left
"#;

const GAMMA_V3: &str = r#"class Inventory(object):
    def __init__(self):
        self.items = {}

    def add(self, name, count):
        if count <= 0:
            raise ValueError(count)
        self.items[name] = self.items.get(name, 0) + count

    def remove(self, name, count):
        left = self.items.get(name, 0) - count
        if left <= 0:
            raise ValueError(name)
        self.items[name] = left

    def total(self):
        return sum(self.items.values())
"#;

const GAMMA_TEST: &str = r#"from inventory import Inventory

inv = Inventory()
inv.add("bolt", 2)
inv.remove("bolt", 2)
assert inv.total() == 0
try:
    inv.remove("bolt", 1)
except ValueError:
    pass
else:
    raise SystemExit("over-removal accepted")
"#;

fn fixed(v3: &'static str, from: &str, to: &str) -> &'static str {
    Box::leak(v3.replacen(from, to, 1).into_boxed_str())
}

pub fn projects() -> Vec<Project> {
    vec![
        Project {
            name: "alpha",
            bug_id: "alpha-1",
            module: "calc.py",
            test_file: "test_calc.py",
            test_script: ALPHA_TEST,
            snapshots: [
                ALPHA_V1,
                ALPHA_V2,
                ALPHA_V3,
                fixed(ALPHA_V3, "return total / (len(values) - 1)", "return total / len(values)"),
            ],
            correct: [Some(3), Some(5), Some(4), Some(0), Some(2), Some(6), Some(7), Some(1)],
            wrong: "def mean(values):\n    total = sum(values)\n    return total / (len(values) + 1)\n",
        },
        Project {
            name: "beta",
            bug_id: "beta-1",
            module: "text.py",
            test_file: "test_text.py",
            test_script: BETA_TEST,
            snapshots: [
                BETA_V1,
                BETA_V2,
                BETA_V3,
                fixed(BETA_V3, "for p in parts[1:])", "for p in parts)"),
            ],
            correct: [Some(0), Some(0), Some(2), Some(1), Some(0), Some(0), Some(3), Some(0)],
            wrong: "def initials(name):\n    return name[:2].upper()\n",
        },
        Project {
            name: "gamma",
            bug_id: "gamma-1",
            module: "inventory.py",
            test_file: "test_inventory.py",
            test_script: GAMMA_TEST,
            snapshots: [
                GAMMA_V1,
                GAMMA_V2,
                GAMMA_V3,
                fixed(GAMMA_V3, "        if left <= 0:", "        if left < 0:"),
            ],
            correct: [Some(0), Some(0), Some(0), Some(0), Some(0), Some(0), Some(1), None],
            wrong: "def remove(self, name, count):\n    self.items[name] = self.items.get(name, 0) - count\n",
        },
    ]
}

const DATES: [&str; 4] =
    ["2021-03-01T09:00:00+00:00", "2021-03-08T14:30:00+01:00", "2021-03-15T10:00:00+00:00", "2021-03-22T16:45:10+00:00"];

/// Build every project repository under `root`; returns the fix commits.
pub fn build_repos(root: &Path) -> Vec<CommitId> {
    projects()
        .iter()
        .map(|p| {
            let f = Fixture::at(&root.join(p.name));
            let messages = [
                "Initial import".to_string(),
                format!("Rework {}", p.module),
                "Housekeeping".to_string(),
                format!("Fix {} in {} (#{})", p.bug_id, p.module, 7),
            ];
            let mut last = None;
            for (i, snap) in p.snapshots.iter().enumerate() {
                f.write(p.module, snap);
                if i == 0 {
                    f.write(p.test_file, p.test_script);
                }
                last = Some(f.commit(&messages[i], DATES[i]));
            }
            last.unwrap()
        })
        .collect()
}

pub fn mine_dataset(root: &Path, fixes: &[CommitId]) -> Vec<BugRecord> {
    projects()
        .iter()
        .zip(fixes)
        .map(|(p, fix)| {
            let repo = hafix_core::git::Repo::open(root.join(p.name)).unwrap();
            let req = MineRequest {
                bug_id: p.bug_id.into(),
                project_name: p.name.into(),
                project_url: format!("https://example.org/synthetic/{}.git", p.name),
                bugsinpy_id: "1".into(),
                fix_commit: fix.0.clone(),
            };
            match mine_candidate(&repo, &req, &SourceRules::default(), None).unwrap() {
                MineOutcome::Candidate { record, .. } => *record,
                MineOutcome::Rejected { reason, .. } => panic!("{}: {reason}", p.bug_id),
            }
        })
        .collect()
}

fn indent_body(code: &str) -> String {
    code.lines().map(|l| if l.is_empty() { String::new() } else { format!("    {l}") }).collect::<Vec<_>>().join("\n")
}

/// Sample `i` of a unit with `correct` passing samples.
fn sample(i: usize, correct: usize, fix: &str, buggy: &str, wrong: &str) -> String {
    if i < correct {
        match i % 3 {
            0 => format!("```python\n{fix}\n```"),
            1 => format!("Here is the corrected function:\n\n```\n{}\n```\n", indent_body(fix)),
            _ => format!("{fix}\n"),
        }
    } else {
        match (i - correct) % 3 {
            0 => format!("```python\n{buggy}\n```"),
            1 => format!("```python\n{wrong}```\nThis should handle the edge case."),
            _ => "The code looks correct to me; no change is needed.".to_string(),
        }
    }
}

fn dedented(code: &str) -> String {
    hafix_core::harness::dedent(code)
}

/// A replay corpus for the mined `records`, Instruction style only.
pub fn build_corpus(root: &Path, records: &[BugRecord]) -> ReplayCorpus {
    let mut corpus = ReplayCorpus::new();
    for (bi, (p, record)) in projects().iter().zip(records).enumerate() {
        let repo = hafix_core::git::Repo::open(root.join(p.name)).unwrap();
        let chain = history::resolve_chain(
            &repo,
            &CommitId(record.commit.commit_id.clone()),
            &record.file.file_path,
            record.buggy_line_location,
        )
        .unwrap();
        let snap = BlameSnapshot::load(&repo, &chain).unwrap();
        let ctx = BaselineContext::from_record(record);
        let fix = dedented(&record.function.function_after);
        let buggy = dedented(&record.function.function_before);
        for (mi, method) in Method::CATALOG.iter().enumerate() {
            let payload = method.heuristic().map(|k| snap.payload(k).unwrap());
            let prompt = render_prompt(&ctx, payload.as_ref(), PromptStyle::Instruction, &LexicalTokenizer).unwrap();
            let latency = 4.0 + 0.5 * mi as f64 + 0.25 * bi as f64;
            let result = match p.correct[mi] {
                None => InferenceResult::oom(prompt.input_token_count, latency),
                Some(c) => {
                    let samples: Vec<String> = (0..10).map(|i| sample(i, c, &fix, &buggy, p.wrong)).collect();
                    InferenceResult {
                        output_token_counts: samples.iter().map(|s| LexicalTokenizer.count(s)).collect(),
                        samples,
                        input_token_count: prompt.input_token_count,
                        latency_seconds: latency,
                        status: InferenceStatus::Ok,
                        error: None,
                    }
                }
            };
            let key = ReplayKey { bug_id: p.bug_id.into(), heuristic: *method, style: PromptStyle::Instruction };
            corpus.record(key, result).unwrap();
        }
    }
    corpus
}

pub fn sandbox_specs() -> String {
    let mut out = String::from("[runtime]\nkind = \"host\"\n");
    for p in projects() {
        out.push_str(&format!(
            "\n[bugs.{}]\nimage = \"synthetic/{}:latest\"\ntest_command = \"python3 {}\"\ntimeout_seconds = 60\n",
            p.bug_id, p.name, p.test_file
        ));
    }
    out
}

pub fn run_config(output_dir: &str, parallelism: usize) -> String {
    format!(
        r#"dataset_path = "dataset.json"
repos_root = "repos"
sandbox_specs = "sandboxes.toml"
output_dir = "{output_dir}"
parallelism = {parallelism}

[backend]
kind = "replay"
corpus_path = "corpus.jsonl"

[price]
price_per_input_token = "0.002"
price_per_output_token = "0.006"
"#
    )
}

/// A workspace holding the bundled dataset, corpus and sandbox specs plus
/// freshly built repositories.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        build_repos(&dir.path().join("repos"));
        for name in ["dataset.json", "corpus.jsonl", "sandboxes.toml"] {
            fs::copy(data_dir().join(name), dir.path().join(name)).unwrap();
        }
        Workspace { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Write a config for `output_dir` and return its path.
    pub fn config(&self, output_dir: &str, parallelism: usize) -> PathBuf {
        let path = self.path().join(format!("{output_dir}.toml"));
        fs::write(&path, run_config(output_dir, parallelism)).unwrap();
        path
    }
}

pub fn dataset_text(records: &[BugRecord]) -> String {
    dataset::dataset_to_string(records)
}

pub fn stub_server(responses: Vec<(u16, String)>) -> StubServer {
    StubServer::start(responses)
}
