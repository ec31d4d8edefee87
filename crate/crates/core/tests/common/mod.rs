//! Throwaway git repositories with pinned identities and dates, so commit ids
//! are reproducible across runs.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::io::Write;

use hafix_core::git::{CommitId, Repo};

pub struct Fixture {
    _dir: Option<tempfile::TempDir>,
    pub root: PathBuf,
}

fn git_command(root: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.current_dir(root)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_AUTHOR_NAME", "Fixture Author")
        .env("GIT_AUTHOR_EMAIL", "author@example.com")
        .env("GIT_COMMITTER_NAME", "Fixture Author")
        .env("GIT_COMMITTER_EMAIL", "author@example.com")
        .env("LC_ALL", "C");
    cmd
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: Some(dir), root };
        f.init();
        f
    }

    /// A repository at `root`, which must not exist yet. Not removed on drop.
    pub fn at(root: &Path) -> Self {
        fs::create_dir_all(root).unwrap();
        let f = Fixture { _dir: None, root: root.to_path_buf() };
        f.init();
        f
    }

    fn init(&self) {
        self.git(&["init", "-q"]);
        self.git(&["symbolic-ref", "HEAD", "refs/heads/main"]);
    }

    pub fn repo(&self) -> Repo {
        Repo::open(&self.root).unwrap()
    }

    pub fn git(&self, args: &[&str]) -> String {
        let out = git_command(&self.root).args(args).output().unwrap();
        assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn write(&self, path: &str, text: &str) {
        let p = self.root.join(path);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    pub fn remove(&self, path: &str) {
        fs::remove_file(self.root.join(path)).unwrap();
    }

    /// Commit everything with `message` kept verbatim. `date` is an ISO 8601
    /// timestamp with offset, used for author and committer.
    pub fn commit(&self, message: &str, date: &str) -> CommitId {
        self.git(&["add", "-A"]);
        let mut child = git_command(&self.root)
            .args(["commit", "-q", "--allow-empty", "--cleanup=verbatim", "--no-verify", "-F", "-"])
            .env("GIT_AUTHOR_DATE", date)
            .env("GIT_COMMITTER_DATE", date)
            .stdin(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(message.as_bytes()).unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success(), "commit: {}", String::from_utf8_lossy(&out.stderr));
        CommitId(self.git(&["rev-parse", "HEAD"]).trim().to_string())
    }
}

pub const LUIGI_MESSAGE: &str = "Filters tasks in second branch of Worker.get_pending_tasks (#1849)\n\nWhen a worker has many DONE tasks, get_pending_tasks may switch to using\r\nstate.get_pending_tasks in order to speed up the process. This can include\r\npending tasks not owned by the worker, invalidating the result and causing\r\nfunctions like is_trivial_worker to return erroneous results.\r\n\r\nTo fix this, we simply filter the results of state.get_pending_tasks to\r\nremove any tasks that don't include this worker.";

pub const LUIGI_DIFF: &str = "@@ -302,7 +302,7 @@ class Worker(object):\n             return six.moves.filter(lambda task: task.status in [PENDING, RUNNING],\n                                     self.tasks)\n         else:\n-            return state.get_pending_tasks()\n+            return six.moves.filter(lambda task: self.id in task.workers, state.get_pending_tasks())\n \n     def is_trivial_worker(self, state):\n         \"\"\"\n";

pub const LUIGI_BUGGY: &str = "            return state.get_pending_tasks()";
pub const LUIGI_FIXED: &str =
    "            return six.moves.filter(lambda task: self.id in task.workers, state.get_pending_tasks())";
pub const LUIGI_ORIGINAL: &str = "            return state.get_pending_tasks(self.id)";

/// A scheduler module whose `Worker.get_pending_tasks` return line is
/// `return_line`. With `logging`, two extra lines near the top push the
/// function to lines 295..=305; without, it spans 293..=303.
pub fn luigi_scheduler(return_line: &str, logging: bool) -> String {
    let mut lines: Vec<String> = vec![
        "# -*- coding: utf-8 -*-".into(),
        "\"\"\"".into(),
        "The central scheduler keeps track of tasks and workers.".into(),
        "\"\"\"".into(),
        "".into(),
        "import six".into(),
        "".into(),
        "from luigi.task_status import DONE, PENDING, RUNNING".into(),
        "".into(),
        "".into(),
    ];
    for i in 0..20 {
        lines.extend([format!("def _helper_{i}(value):"), format!("    return value + {i}"), "".into(), "".into()]);
    }
    lines.extend([
        "class Worker(object):".into(),
        "    \"\"\"Structure for tracking worker activity.\"\"\"".into(),
        "".into(),
        "    def __init__(self, worker_id):".into(),
        "        self.id = worker_id".into(),
        "        self.tasks = set()".into(),
        "".into(),
    ]);
    let mut i = 0;
    while lines.len() + 3 <= 292 {
        lines.extend([format!("    def stat_{i}(self):"), format!("        return len(self.tasks) + {i}"), "".into()]);
        i += 1;
    }
    while lines.len() < 292 {
        lines.push("".into());
    }
    lines.extend(
        [
            "    def get_pending_tasks(self, state):",
            "        \"\"\"",
            "        Get PENDING (and RUNNING) tasks for this worker.",
            "",
            "        You have to pass in the state for optimization reasons.",
            "        \"\"\"",
            "        if len(self.tasks) < state.num_pending_tasks():",
            "            return six.moves.filter(lambda task: task.status in [PENDING, RUNNING],",
            "                                    self.tasks)",
            "        else:",
        ]
        .map(String::from),
    );
    lines.push(return_line.to_string());
    lines.extend(
        [
            "",
            "    def is_trivial_worker(self, state):",
            "        \"\"\"",
            "        If it's not an assistant having only tasks that are without",
            "        requirements.",
            "        \"\"\"",
            "        return all(not task.resources for task in self.get_pending_tasks(state))",
            "",
            "",
            "class Scheduler(object):",
            "    def __init__(self):",
            "        self._tasks = {}",
        ]
        .map(String::from),
    );
    if logging {
        lines.insert(6, "import logging".into());
        lines.insert(7, "logger = logging.getLogger(__name__)".into());
    }
    lines.join("\n") + "\n"
}

pub struct LuigiChain {
    pub fixture: Fixture,
    /// Creates the function.
    pub a: CommitId,
    /// Rewrites the buggy line (the blame commit).
    pub b: CommitId,
    /// Shifts the function down by two lines (the buggy snapshot).
    pub c: CommitId,
    /// The fix.
    pub d: CommitId,
}

const LUIGI_TEST: &str = "from luigi.scheduler import Worker\n\n\ndef test_worker_id():\n    assert Worker('w').id == 'w'\n";

/// Four commits embedding the reference luigi change, at `root` or in a temp dir.
pub fn luigi_chain(root: Option<&Path>) -> LuigiChain {
    let f = match root {
        Some(r) => Fixture::at(r),
        None => Fixture::new(),
    };
    f.write("luigi/__init__.py", "");
    f.write("luigi/task_status.py", "DONE = 'DONE'\nPENDING = 'PENDING'\nRUNNING = 'RUNNING'\n");
    f.write("luigi/scheduler.py", &luigi_scheduler(LUIGI_ORIGINAL, false));
    let a = f.commit("Add worker bookkeeping", "2016-08-01T10:00:00+00:00");
    f.write("luigi/scheduler.py", &luigi_scheduler(LUIGI_BUGGY, false));
    f.write("test/scheduler_test.py", LUIGI_TEST);
    let b = f.commit("Use scheduler state for pending tasks", "2016-08-20T11:30:00+00:00");
    f.write("luigi/scheduler.py", &luigi_scheduler(LUIGI_BUGGY, true));
    let c = f.commit("Add scheduler logger", "2016-09-01T08:15:00+00:00");
    f.write("luigi/scheduler.py", &luigi_scheduler(LUIGI_FIXED, true));
    f.write("test/scheduler_test.py", &format!("{LUIGI_TEST}\n\ndef test_pending_filtered():\n    assert True\n"));
    let d = f.commit(LUIGI_MESSAGE, "2016-09-12T09:51:39-04:00");
    LuigiChain { fixture: f, a, b, c, d }
}

/// A request as seen by [`StubServer`].
#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub request_line: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl SeenRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Serves scripted `(status, body)` responses in order, one per connection.
pub struct StubServer {
    pub base: String,
    handle: Option<std::thread::JoinHandle<Vec<SeenRequest>>>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        use std::io::{BufRead, BufReader, Read};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut headers = Vec::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (k, v) = line.split_once(':').unwrap();
                    headers.push((k.trim().to_string(), v.trim().to_string()));
                }
                let len: usize = headers
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                    .map_or(0, |(_, v)| v.parse().unwrap());
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(SeenRequest {
                    request_line: request_line.trim_end().to_string(),
                    headers,
                    body: String::from_utf8(buf).unwrap(),
                });
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        StubServer { base, handle: Some(handle) }
    }

    /// Wait for every scripted response to be served.
    pub fn finish(mut self) -> Vec<SeenRequest> {
        self.handle.take().unwrap().join().unwrap()
    }
}
