//! The pipeline commands: mine, run, report and simulate-cost.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;

use anyhow::{anyhow, Context, Result};
use hafix_core::context::{BaselineContext, BlameSnapshot};
use hafix_core::cost::{summarize_units, OrderPolicy};
use hafix_core::dataset::{self, BugRecord, Ledger, RunLedgerEntry, SampleStatus};
use hafix_core::forge::IssueForge;
use hafix_core::gateway::{self, Backend, InferenceRequest, InferenceStatus, ReplayKey};
use hafix_core::git::{CommitId, Repo};
use hafix_core::harness::{evaluate_samples, PatchPlan, Sandbox};
use hafix_core::history::{self, SourceRules};
use hafix_core::method::{Method, PromptStyle};
use hafix_core::mine::{self, MineOutcome, MineRequest};
use hafix_core::prompt::render_prompt;
use hafix_core::report::{self, CostReport, Report};
use hafix_core::tokenizer::LexicalTokenizer;

use crate::config::{RunConfig, SandboxSpecs};

/// Mine one fix commit of a project cloned under `repos_root`.
pub fn cmd_mine(
    cfg: &RunConfig,
    req: &MineRequest,
    issues: Option<&dyn IssueForge>,
) -> Result<MineOutcome> {
    let path = cfg.repos_root.join(&req.project_name);
    let repo = Repo::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(mine::mine_candidate(&repo, req, &SourceRules::default(), issues)?)
}

/// Add or replace `record` in the dataset at `path`.
pub fn merge_into_dataset(path: &Path, record: BugRecord) -> Result<()> {
    let mut records = if path.exists() { dataset::load_dataset(path)? } else { Vec::new() };
    records.retain(|r| r.bug_id != record.bug_id);
    records.push(record);
    records.sort_by(|a, b| a.bug_id.cmp(&b.bug_id));
    dataset::save_dataset(path, &records)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFilters {
    pub methods: Vec<Method>,
    pub styles: Vec<PromptStyle>,
}

impl Default for RunFilters {
    fn default() -> Self {
        RunFilters { methods: Method::CATALOG.to_vec(), styles: PromptStyle::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    /// Units evaluated in this invocation.
    pub completed: usize,
    /// Units already in the ledger.
    pub skipped: usize,
    /// Units that failed and will be retried by the next run.
    pub failed: usize,
    pub entries_written: usize,
}

impl RunSummary {
    fn add(&mut self, other: &RunSummary) {
        self.completed += other.completed;
        self.skipped += other.skipped;
        self.failed += other.failed;
        self.entries_written += other.entries_written;
    }
}

struct RunContext<'a> {
    cfg: &'a RunConfig,
    filters: &'a RunFilters,
    specs: &'a SandboxSpecs,
    backend: &'a dyn Backend,
    ledger: &'a Ledger,
}

/// `git worktree` edits shared repository metadata; keep adds and removes apart.
static WORKTREE_LOCK: Mutex<()> = Mutex::new(());

struct Worktree<'r> {
    repo: &'r Repo,
    dir: PathBuf,
}

impl<'r> Worktree<'r> {
    fn add(repo: &'r Repo, dir: PathBuf, commit: &CommitId) -> Result<Self> {
        let _guard = WORKTREE_LOCK.lock().unwrap();
        if dir.exists() {
            let _ = repo.remove_worktree(&dir);
            if dir.exists() {
                fs::remove_dir_all(&dir).with_context(|| format!("clearing stale worktree {}", dir.display()))?;
            }
            let _ = repo.run(["worktree", "prune"]);
        }
        if let Some(parent) = dir.parent() {
            fs::create_dir_all(parent)?;
        }
        repo.add_worktree(&dir, commit)?;
        Ok(Worktree { repo, dir })
    }
}

impl Drop for Worktree<'_> {
    fn drop(&mut self) {
        let _guard = WORKTREE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = self.repo.remove_worktree(&self.dir) {
            log::warn!("could not remove worktree {}: {e}", self.dir.display());
        }
    }
}

fn dir_name(bug_id: &str) -> String {
    bug_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn oom_entries(key: &ReplayKey, n: usize, input_tokens: usize, latency: f64) -> Vec<RunLedgerEntry> {
    (0..n)
        .map(|i| RunLedgerEntry {
            bug_id: key.bug_id.clone(),
            heuristic: key.heuristic,
            style: key.style,
            sample_index: i,
            input_tokens,
            output_tokens: 0,
            latency_seconds: latency,
            status: SampleStatus::Oom,
            passed: false,
        })
        .collect()
}

fn run_bug(ctx: &RunContext<'_>, record: &BugRecord) -> (Vec<RunLedgerEntry>, RunSummary) {
    let mut summary = RunSummary::default();
    let mut units = Vec::new();
    for &method in &ctx.filters.methods {
        for &style in &ctx.filters.styles {
            if ctx.ledger.has_unit(&record.bug_id, method, style) {
                summary.skipped += 1;
            } else {
                units.push((method, style));
            }
        }
    }
    if units.is_empty() {
        return (Vec::new(), summary);
    }
    match run_units(ctx, record, &units, &mut summary) {
        Ok(entries) => {
            summary.entries_written = entries.len();
            (entries, summary)
        }
        Err(e) => {
            log::error!("{}: {e:#}", record.bug_id);
            summary.failed = units.len();
            summary.completed = 0;
            (Vec::new(), summary)
        }
    }
}

fn run_units(
    ctx: &RunContext<'_>,
    record: &BugRecord,
    units: &[(Method, PromptStyle)],
    summary: &mut RunSummary,
) -> Result<Vec<RunLedgerEntry>> {
    let repo_path = ctx.cfg.repos_root.join(&record.project_name);
    let repo = Repo::open(&repo_path).with_context(|| format!("opening {}", repo_path.display()))?;
    let fix = CommitId(record.commit.commit_id.clone());
    let baseline = BaselineContext::from_record(record);
    let snapshot = if units.iter().any(|(m, _)| m.heuristic().is_some()) {
        let chain = history::resolve_chain(&repo, &fix, &record.file.file_path, record.buggy_line_location)?;
        Some(BlameSnapshot::load(&repo, &chain)?)
    } else {
        None
    };
    let sandbox = ctx
        .specs
        .bugs
        .get(&record.bug_id)
        .map(|spec| Sandbox::new(spec.clone(), ctx.specs.runtime.clone()))
        .ok_or_else(|| anyhow!("no sandbox spec for bug {}", record.bug_id))?;
    let plan = PatchPlan::for_record(record);
    let n = ctx.cfg.sampling.n_samples;
    let mut worktree: Option<Worktree<'_>> = None;
    let mut entries = Vec::new();

    for &(method, style) in units {
        let key = ReplayKey { bug_id: record.bug_id.clone(), heuristic: method, style };
        let unit = (|| -> Result<Vec<RunLedgerEntry>> {
            let payload = match (method.heuristic(), &snapshot) {
                (Some(kind), Some(s)) => Some(s.payload(kind)?),
                _ => None,
            };
            let prompt = render_prompt(&baseline, payload.as_ref(), style, &LexicalTokenizer)?;
            let req = InferenceRequest { key: key.clone(), prompt: &prompt };
            let result = gateway::generate(&req, &ctx.cfg.sampling, ctx.backend)?;
            match result.status {
                InferenceStatus::TransportError => {
                    Err(anyhow!("inference failed: {}", result.error.unwrap_or_default()))
                }
                InferenceStatus::Oom => {
                    Ok(oom_entries(&key, n, result.input_token_count, result.latency_seconds))
                }
                InferenceStatus::Ok => {
                    if worktree.is_none() {
                        let dir = ctx.cfg.output_dir.join("worktrees").join(dir_name(&record.bug_id));
                        worktree = Some(Worktree::add(&repo, dir, &fix)?);
                    }
                    let wt = &worktree.as_ref().unwrap().dir;
                    let eval = evaluate_samples(&plan, &result.samples, wt, &sandbox)?;
                    Ok(eval
                        .verdicts
                        .iter()
                        .map(|v| RunLedgerEntry {
                            bug_id: key.bug_id.clone(),
                            heuristic: method,
                            style,
                            sample_index: v.index,
                            input_tokens: result.input_token_count,
                            output_tokens: result.output_token_counts[v.index],
                            latency_seconds: result.latency_seconds,
                            status: v.status,
                            passed: v.passed,
                        })
                        .collect())
                }
            }
        })();
        match unit {
            Ok(e) => {
                summary.completed += 1;
                entries.extend(e);
            }
            Err(e) => {
                summary.failed += 1;
                log::error!("{key}: {e:#}");
            }
        }
    }
    Ok(entries)
}

/// Evaluate every pending (bug, method, style) unit and append the results.
///
/// Bugs run in parallel up to `parallelism`; results are written in dataset
/// order, one bug at a time, so the ledger does not depend on scheduling.
pub fn cmd_run(cfg: &RunConfig, filters: &RunFilters) -> Result<RunSummary> {
    let records = dataset::load_dataset(&cfg.dataset_path)?;
    let specs = SandboxSpecs::load(&cfg.sandbox_specs)?;
    let backend = cfg.backend()?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let ledger = Ledger::open(cfg.ledger_path())?;
    let ctx = RunContext { cfg, filters, specs: &specs, backend: backend.as_ref(), ledger: &ledger };

    let next = AtomicUsize::new(0);
    let workers = cfg.parallelism.min(records.len()).max(1);
    let (tx, rx) = mpsc::channel::<(usize, Vec<RunLedgerEntry>, RunSummary)>();
    let mut total = RunSummary::default();
    thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (ctx, next, records) = (&ctx, &next, &records);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = records.get(i) else { break };
                let (entries, summary) = run_bug(ctx, record);
                if tx.send((i, entries, summary)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut flushed = 0;
        for (i, entries, summary) in rx {
            pending.insert(i, (entries, summary));
            while let Some((entries, summary)) = pending.remove(&flushed) {
                ledger.append_all(&entries)?;
                total.add(&summary);
                flushed += 1;
            }
        }
        Ok(())
    })?;
    Ok(total)
}

/// Build every table from the ledger and write `report.json` and `report.txt`.
pub fn cmd_report(cfg: &RunConfig, ks: Option<Vec<usize>>) -> Result<Report> {
    let ledger = dataset::read_ledger(cfg.ledger_path())?;
    let mut opts = cfg.report_options();
    if let Some(ks) = ks {
        opts.ks = ks;
    }
    let report = report::build_report(&ledger, &opts)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(cfg.output_dir.join("report.txt"), report::render_text(&report))?;
    Ok(report)
}

/// Replay the four scenarios over the ledger for one style and write `cost.json`.
pub fn cmd_simulate_cost(
    cfg: &RunConfig,
    style: Option<PromptStyle>,
    policy: Option<OrderPolicy>,
) -> Result<CostReport> {
    let ledger = dataset::read_ledger(cfg.ledger_path())?;
    let style = style.unwrap_or(cfg.report.cost_style);
    let units = summarize_units(&ledger, style)?;
    let report = report::cost_report(&units, style, &cfg.price, policy.unwrap_or(cfg.report.order_policy))?
        .ok_or_else(|| anyhow!("the ledger needs all eight methods under {style} to simulate scenarios"))?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("cost.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
