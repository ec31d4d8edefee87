mod common;

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use common::*;
use hafix_core::dataset::SampleStatus;
use hafix_core::harness::{
    evaluate_samples, hash_tree, HarnessError, Outcome, PatchPlan, Sandbox, SandboxRuntime, SandboxSpec, TestRunner,
};

const CALC: &str = "\
class Calc(object):
    def add(self, a, b):
        total = a - b
        return total

    def neg(self, a):
        return -a
";

const CHECK: &str = "python3 -c 'from calc import Calc; assert Calc().add(2, 3) == 5'";

fn host(command: &str) -> Sandbox {
    Sandbox::new(
        SandboxSpec { image: "unused".into(), test_command: command.into(), mount: "/workspace".into(), timeout_seconds: Some(20) },
        SandboxRuntime::Host,
    )
}

fn calc_tree() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("calc.py"), CALC).unwrap();
    fs::write(dir.path().join("README"), "calc\n").unwrap();
    dir
}

fn samples() -> Vec<String> {
    vec![
        "```python\ndef add(self, a, b):\n    total = a + b\n    return total\n```".into(),
        "```python\ndef add(self, a, b):\n    return a * b\n```".into(),
        "I am not sure how to fix this.".into(),
        "Here you go:\n```\n    def add(self, a, b):\n        return b + a\n```\nDone.".into(),
    ]
}

#[test]
fn host_evaluation_counts_passes_and_restores() {
    let dir = calc_tree();
    let before = hash_tree(dir.path()).unwrap();
    let plan = PatchPlan::new("calc.py", 2, 4);
    let eval = evaluate_samples(&plan, &samples(), dir.path(), &host(CHECK)).unwrap();
    assert_eq!(eval.correct, 2);
    let passed: Vec<bool> = eval.verdicts.iter().map(|v| v.passed).collect();
    assert_eq!(passed, vec![true, false, false, true]);
    assert_eq!(eval.verdicts[2].status, SampleStatus::ParseError);
    assert!(eval.verdicts[2].test.is_none());
    assert_eq!(eval.verdicts[1].test.as_ref().unwrap().outcome, Outcome::Fail);
    assert!(eval.verdicts[1].test.as_ref().unwrap().log_excerpt.contains("AssertionError"));
    assert_eq!(hash_tree(dir.path()).unwrap(), before);
    assert_eq!(fs::read_to_string(dir.path().join("calc.py")).unwrap(), CALC);
}

#[test]
fn planted_correct_sample_passes_in_luigi_worktree() {
    let l = luigi_chain(None);
    let wt = tempfile::tempdir().unwrap();
    let wt = wt.path().join("wt");
    l.fixture.repo().add_worktree(&wt, &l.d).unwrap();
    let before = hash_tree(&wt).unwrap();
    let plan = PatchPlan::new("luigi/scheduler.py", 295, 305);
    let check = "python3 -c 'import ast, sys; ast.parse(open(\"luigi/scheduler.py\").read()); \
                 sys.exit(0 if \"self.id in task.workers\" in open(\"luigi/scheduler.py\").read() else 1)'";
    let fixed = format!(
        "```python\ndef get_pending_tasks(self, state):\n    if len(self.tasks) < state.num_pending_tasks():\n        \
         return six.moves.filter(lambda task: task.status in [PENDING, RUNNING], self.tasks)\n    else:\n{}\n```",
        LUIGI_FIXED.replacen("    ", "", 1)
    );
    let broken = "```python\ndef get_pending_tasks(self, state):\n    return state.get_pending_tasks()\n```".to_string();
    let eval = evaluate_samples(&plan, &[broken, fixed], &wt, &host(check)).unwrap();
    assert_eq!(eval.correct, 1);
    assert!(eval.verdicts[1].passed);
    assert_eq!(hash_tree(&wt).unwrap(), before);
    l.fixture.repo().remove_worktree(&wt).unwrap();
}

#[test]
fn stale_backup_refuses_to_start() {
    let dir = calc_tree();
    fs::write(dir.path().join("calc.py.hafix-backup"), "x").unwrap();
    let plan = PatchPlan::new("calc.py", 2, 4);
    let err = evaluate_samples(&plan, &samples(), dir.path(), &host(CHECK)).unwrap_err();
    assert!(matches!(err, HarnessError::StaleBackup(_)));
}

#[test]
fn out_of_range_plan_is_an_error_and_leaves_tree() {
    let dir = calc_tree();
    let before = hash_tree(dir.path()).unwrap();
    let plan = PatchPlan::new("calc.py", 5, 40);
    let err = evaluate_samples(&plan, &samples()[..1], dir.path(), &host(CHECK)).unwrap_err();
    assert!(matches!(err, HarnessError::RangeOutOfBounds { len: 7, .. }));
    assert_eq!(hash_tree(dir.path()).unwrap(), before);
}

#[test]
fn timeout_fails_with_note() {
    let dir = calc_tree();
    let mut sandbox = host("sleep 5");
    sandbox.spec.timeout_seconds = Some(1);
    let v = sandbox.run_tests(dir.path()).unwrap();
    assert_eq!(v.outcome, Outcome::Fail);
    assert!(v.note.unwrap().contains("timed out"));
    assert!(v.duration_seconds < 4.0);
}

fn fake_runtime(dir: &Path) -> String {
    let script = dir.join("fake-oci");
    fs::write(
        &script,
        r#"#!/bin/sh
case "$1" in
  image)
    [ "$3" = "present:1" ] && exit 0
    exit 1 ;;
  rm) exit 0 ;;
  run)
    shift
    while [ $# -gt 0 ]; do
      case "$1" in
        -v) src="${2%%:*}"; shift 2 ;;
        sh) cd "$src" && exec sh -c "$3" ;;
        *) shift ;;
      esac
    done ;;
esac
exit 99
"#,
    )
    .unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    script.to_string_lossy().into_owned()
}

#[test]
fn container_runtime_checks_image_then_runs() {
    let bin = tempfile::tempdir().unwrap();
    let program = fake_runtime(bin.path());
    let dir = calc_tree();
    let spec = |image: &str| SandboxSpec {
        image: image.into(),
        test_command: "test -f calc.py && test {worktree} = /workspace".into(),
        mount: "/workspace".into(),
        timeout_seconds: Some(20),
    };
    let runtime = SandboxRuntime::Container { program: program.clone() };
    let missing = Sandbox::new(spec("missing:1"), runtime.clone()).run_tests(dir.path()).unwrap();
    assert_eq!(missing.outcome, Outcome::Error);
    assert!(missing.note.unwrap().contains("missing:1"));
    let ok = Sandbox::new(spec("present:1"), runtime.clone()).run_tests(dir.path()).unwrap();
    assert_eq!(ok.outcome, Outcome::Pass, "{}", ok.log_excerpt);

    let plan = PatchPlan::new("calc.py", 2, 4);
    let eval = evaluate_samples(&plan, &samples()[..1], dir.path(), &Sandbox::new(spec("missing:1"), runtime)).unwrap();
    assert_eq!(eval.verdicts[0].status, SampleStatus::TestError);
    assert_eq!(eval.correct, 0);
}

#[test]
fn absent_runtime_is_reported() {
    let dir = calc_tree();
    let sandbox = Sandbox::new(
        SandboxSpec { image: "x".into(), test_command: "true".into(), mount: "/workspace".into(), timeout_seconds: None },
        SandboxRuntime::Container { program: "/nonexistent/oci-runtime".into() },
    );
    assert!(matches!(sandbox.run_tests(dir.path()), Err(HarnessError::RuntimeUnavailable { .. })));
}
