mod common;

use std::fs;

use common::*;

fn generate() -> (String, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let fixes = build_repos(dir.path());
    let records = mine_dataset(dir.path(), &fixes);
    let corpus = build_corpus(dir.path(), &records);
    (dataset_text(&records), corpus.to_jsonl(), sandbox_specs())
}

/// Rewrites tests/data/replay; run with `--ignored` after changing the projects.
#[test]
#[ignore]
fn regenerate_replay_data() {
    let (dataset, corpus, specs) = generate();
    let dir = data_dir();
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("dataset.json"), dataset).unwrap();
    fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    fs::write(dir.join("sandboxes.toml"), specs).unwrap();
}

#[test]
fn bundled_replay_data_matches_projects() {
    let (dataset, corpus, specs) = generate();
    let dir = data_dir();
    assert_eq!(fs::read_to_string(dir.join("dataset.json")).unwrap(), dataset);
    assert_eq!(fs::read_to_string(dir.join("corpus.jsonl")).unwrap(), corpus);
    assert_eq!(fs::read_to_string(dir.join("sandboxes.toml")).unwrap(), specs);
}

#[test]
fn synthetic_fix_commits_pass_their_tests() {
    use hafix_core::harness::{Outcome, Sandbox, SandboxRuntime, TestRunner};
    let dir = tempfile::tempdir().unwrap();
    build_repos(dir.path());
    let specs: toml::Value = toml::from_str(&sandbox_specs()).unwrap();
    for p in projects() {
        let spec = specs["bugs"][p.bug_id].clone().try_into().unwrap();
        let sandbox = Sandbox::new(spec, SandboxRuntime::Host);
        let root = dir.path().join(p.name);
        assert_eq!(sandbox.run_tests(&root).unwrap().outcome, Outcome::Pass, "{}", p.bug_id);
        fs::write(root.join(p.module), p.snapshots[2]).unwrap();
        assert_eq!(sandbox.run_tests(&root).unwrap().outcome, Outcome::Fail, "{}", p.bug_id);
    }
}
