mod common;

use std::collections::BTreeSet;
use std::fs;

use common::git_fixture::Fixture;
use common::*;
use hafix_cli::commands::{cmd_mine, cmd_report, cmd_run, cmd_simulate_cost, merge_into_dataset, RunFilters};
use hafix_cli::config::RunConfig;
use hafix_core::cost::summarize_units;
use hafix_core::dataset::{self, SampleStatus};
use hafix_core::method::{Method, PromptStyle};
use hafix_core::mine::{MineOutcome, MineRequest};
use hafix_core::report::AGG_LABEL;

fn instruction(methods: &[Method]) -> RunFilters {
    RunFilters { methods: methods.to_vec(), styles: vec![PromptStyle::Instruction] }
}

fn all() -> RunFilters {
    instruction(&Method::CATALOG)
}

#[test]
fn replayed_units_score_as_designed() {
    let ws = Workspace::new();
    let cfg = RunConfig::load(ws.config("out", 1)).unwrap();
    let summary = cmd_run(&cfg, &all()).unwrap();
    assert_eq!((summary.completed, summary.skipped, summary.failed), (24, 0, 0));
    assert_eq!(summary.entries_written, 240);

    let ledger = dataset::read_ledger(cfg.ledger_path()).unwrap();
    let units = summarize_units(&ledger, PromptStyle::Instruction).unwrap();
    for p in projects() {
        for (mi, m) in Method::CATALOG.iter().enumerate() {
            let u = &units[&(p.bug_id.to_string(), *m)];
            assert_eq!(u.n, 10);
            match p.correct[mi] {
                Some(c) => assert_eq!((u.correct, u.oom), (c, false), "{} {m}", p.bug_id),
                None => assert!(u.oom && u.correct == 0),
            }
        }
    }
    // every third wrong sample is prose
    let prose = ledger.iter().filter(|e| e.status == SampleStatus::ParseError).count();
    let expected: usize = projects()
        .iter()
        .flat_map(|p| p.correct)
        .flatten()
        .map(|c| (0..10 - c).filter(|j| j % 3 == 2).count())
        .sum();
    assert_eq!(prose, expected);
    assert_eq!(ledger.iter().filter(|e| e.status == SampleStatus::Oom).count(), 10);

    let report = cmd_report(&cfg, None).unwrap();
    let s = &report.styles[0];
    assert_eq!((s.bugs, s.oom_units), (3, 1));
    let fixed = |name: &str| s.fixed.iter().find(|r| r.method == name).unwrap().fixed;
    assert_eq!(fixed("Baseline"), 1);
    assert_eq!(fixed("CFN-all"), 2);
    assert_eq!(fixed("FN-pair"), 3);
    assert_eq!(fixed(AGG_LABEL), 3);
    let baseline = &s.pass_at_k.iter().find(|r| r.method == "Baseline").unwrap().values;
    assert!((baseline[0] - 0.1).abs() < 1e-12);
    assert!(cfg.output_dir.join("report.txt").exists());

    let cost = cmd_simulate_cost(&cfg, None, None).unwrap();
    assert_eq!(cost.scenarios.len(), 4);
    assert_eq!(report.cost.unwrap(), cost);
}

#[test]
fn rerun_is_idempotent_and_resume_completes_the_grid() {
    let ws = Workspace::new();
    let full = RunConfig::load(ws.config("full", 1)).unwrap();
    cmd_run(&full, &all()).unwrap();
    let before = fs::read(full.ledger_path()).unwrap();
    let again = cmd_run(&full, &all()).unwrap();
    assert_eq!((again.completed, again.skipped, again.entries_written), (0, 24, 0));
    assert_eq!(fs::read(full.ledger_path()).unwrap(), before);

    let part = RunConfig::load(ws.config("part", 1)).unwrap();
    cmd_run(&part, &instruction(&[Method::Baseline])).unwrap();
    let only_baseline = cmd_report(&part, None).unwrap();
    assert_eq!(only_baseline.styles[0].pass_at_k.len(), 1);
    assert!(only_baseline.cost.is_none());
    assert!(cmd_simulate_cost(&part, None, None).is_err());

    let rest = cmd_run(&part, &all()).unwrap();
    assert_eq!((rest.completed, rest.skipped), (21, 3));
    let keys = |cfg: &RunConfig| -> BTreeSet<String> {
        dataset::read_ledger(cfg.ledger_path())
            .unwrap()
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .collect()
    };
    assert_eq!(keys(&part), keys(&full));
}

#[test]
fn parallel_run_writes_the_serial_ledger() {
    let ws = Workspace::new();
    let serial = RunConfig::load(ws.config("serial", 1)).unwrap();
    let parallel = RunConfig::load(ws.config("parallel", 3)).unwrap();
    cmd_run(&serial, &all()).unwrap();
    cmd_run(&parallel, &all()).unwrap();
    assert_eq!(fs::read(serial.ledger_path()).unwrap(), fs::read(parallel.ledger_path()).unwrap());
    assert!(!parallel.output_dir.join("worktrees").join("alpha-1").exists());
}

#[test]
fn missing_replay_entries_fail_without_writing() {
    let ws = Workspace::new();
    let cfg = RunConfig::load(ws.config("out", 1)).unwrap();
    let s = cmd_run(&cfg, &RunFilters { methods: vec![Method::Baseline], styles: vec![PromptStyle::InstructionMask] })
        .unwrap();
    assert_eq!((s.completed, s.failed, s.entries_written), (0, 3, 0));
}

fn request(name: &str, bug_id: &str, fix: &str) -> MineRequest {
    MineRequest {
        bug_id: bug_id.into(),
        project_name: name.into(),
        project_url: format!("https://example.org/synthetic/{name}.git"),
        bugsinpy_id: "1".into(),
        fix_commit: fix.into(),
    }
}

#[test]
fn mining_reproduces_the_bundled_record() {
    let ws = Workspace::new();
    let cfg = RunConfig::load(ws.config("out", 1)).unwrap();
    let bundled = dataset::load_dataset(&cfg.dataset_path).unwrap();
    let beta = bundled.iter().find(|r| r.bug_id == "beta-1").unwrap();
    let MineOutcome::Candidate { record, .. } =
        cmd_mine(&cfg, &request("beta", "beta-1", &beta.commit.commit_id), None).unwrap()
    else {
        panic!("rejected")
    };
    assert_eq!(&*record, beta);

    let fresh = ws.path().join("mined.json");
    merge_into_dataset(&fresh, *record.clone()).unwrap();
    merge_into_dataset(&fresh, *record).unwrap();
    assert_eq!(dataset::load_dataset(&fresh).unwrap().len(), 1);
}

#[test]
fn multi_file_fix_is_rejected() {
    let ws = Workspace::new();
    let f = Fixture::at(&ws.path().join("repos/delta"));
    f.write("a.py", "def f():\n    return 1\n");
    f.write("b.py", "def g():\n    return 2\n");
    f.commit("init", "2021-01-01T00:00:00+00:00");
    f.write("a.py", "def f():\n    return 10\n");
    f.write("b.py", "def g():\n    return 20\n");
    let fix = f.commit("fix both", "2021-01-02T00:00:00+00:00");
    let cfg = RunConfig::load(ws.config("out", 1)).unwrap();
    match cmd_mine(&cfg, &request("delta", "delta-1", &fix.0), None).unwrap() {
        MineOutcome::Rejected { reason, .. } => assert!(reason.contains("2 source file"), "{reason}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn binary_runs_the_whole_pipeline() {
    use std::process::Command;
    let ws = Workspace::new();
    let config = ws.config("out", 2);
    let hafix = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_hafix")).arg("--config").arg(&config).args(args).output().unwrap();
        (out.status.code(), String::from_utf8(out.stdout).unwrap())
    };
    let (code, text) = hafix(&["run", "--styles", "Instruction"]);
    assert_eq!(code, Some(0));
    assert!(text.starts_with("24 unit(s) completed, 0 skipped, 0 failed; 240 ledger entries written"), "{text}");
    let (code, text) = hafix(&["report", "--ks", "1,10"]);
    assert_eq!(code, Some(0));
    assert!(text.contains("HAFix-Agg"), "{text}");
    let (code, text) = hafix(&["simulate-cost", "--policy", "pinned", "--dp", "3"]);
    assert_eq!(code, Some(0));
    assert!(text.contains("ES-AccSorted") && text.contains("order: FLN-all, CFN-all, Baseline"), "{text}");
    let (code, _) = hafix(&["mine", "--project", "alpha", "--fix-commit", "HEAD~1", "--bug-id", "x"]);
    assert_eq!(code, Some(2));
}
