use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use fairrag::generation::{CachedGenerator, ExternalGenerator, Generator};
use fairrag::GenerationError;

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn generator(path: &Path, timeout_ms: u64) -> ExternalGenerator {
    ExternalGenerator::new(
        format!("python3 -u {}", path.display()),
        Duration::from_millis(timeout_ms),
    )
}

const PRELUDE: &str = "import json, sys\nprint(json.dumps({'ready': True}), flush=True)\n";

fn prompts(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn echo_worker_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "echo.py",
        &format!(
            "{PRELUDE}for line in sys.stdin:\n    r = json.loads(line)\n    print(json.dumps({{'id': r['id'], 'output': r['prompt'].upper()}}), flush=True)\n"
        ),
    );
    let g = generator(&path, 10_000);
    g.warm_up().unwrap();
    assert_eq!(
        g.generate_batch(&prompts(&["a", "b\nc", "ü"])).unwrap(),
        ["A", "B\nC", "Ü"]
    );
    assert_eq!(g.generate("again").unwrap(), "AGAIN");
    assert!(g.identity().starts_with("cmd:"));
}

#[test]
fn out_of_order_replies_are_matched_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "reverse.py",
        &format!(
            "{PRELUDE}pending = []\nfor line in sys.stdin:\n    pending.append(json.loads(line))\n    if len(pending) == 3:\n        for r in reversed(pending):\n            print(json.dumps({{'id': r['id'], 'output': r['prompt'] + '!'}}), flush=True)\n        pending = []\n"
        ),
    );
    let g = generator(&path, 10_000);
    assert_eq!(
        g.generate_batch(&prompts(&["x", "y", "z"])).unwrap(),
        ["x!", "y!", "z!"]
    );
}

#[test]
fn concurrent_batches_use_separate_workers() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "echo.py",
        &format!(
            "{PRELUDE}for line in sys.stdin:\n    r = json.loads(line)\n    print(json.dumps({{'id': r['id'], 'output': r['prompt'][::-1]}}), flush=True)\n"
        ),
    );
    let g = Arc::new(generator(&path, 10_000));
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let g = Arc::clone(&g);
            std::thread::spawn(move || {
                let batch: Vec<String> = (0..20).map(|i| format!("t{t}-{i}")).collect();
                let out = g.generate_batch(&batch).unwrap();
                for (p, o) in batch.iter().zip(out) {
                    assert_eq!(o, p.chars().rev().collect::<String>());
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn unknown_reply_id_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "wrong.py",
        &format!("{PRELUDE}for line in sys.stdin:\n    print(json.dumps({{'id': 999999, 'output': ''}}), flush=True)\n"),
    );
    let err = generator(&path, 10_000).generate("p").unwrap_err();
    assert!(
        matches!(err, GenerationError::IdMismatch { got: 999999, .. }),
        "{err:?}"
    );
}

#[test]
fn silent_worker_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "silent.py",
        &format!("{PRELUDE}import time\ntime.sleep(30)\n"),
    );
    let err = generator(&path, 300).generate("p").unwrap_err();
    assert!(matches!(err, GenerationError::Timeout { .. }), "{err:?}");
}

#[test]
fn exiting_worker_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "exit.py",
        &format!("{PRELUDE}sys.stdin.readline()\nsys.exit(3)\n"),
    );
    let err = generator(&path, 10_000).generate("p").unwrap_err();
    assert!(
        matches!(err, GenerationError::ProcessExited { .. }),
        "{err:?}"
    );
}

#[test]
fn malformed_reply_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(
        dir.path(),
        "garbage.py",
        &format!("{PRELUDE}for line in sys.stdin:\n    print('not json', flush=True)\n"),
    );
    let err = generator(&path, 10_000).generate("p").unwrap_err();
    assert!(matches!(err, GenerationError::Malformed { .. }), "{err:?}");
}

#[test]
fn worker_must_announce_readiness() {
    let dir = tempfile::tempdir().unwrap();
    let path = script(dir.path(), "noready.py", "print('hello', flush=True)\n");
    let err = generator(&path, 10_000).warm_up().unwrap_err();
    assert!(matches!(err, GenerationError::NotReady(_)), "{err:?}");
}

#[test]
fn cache_avoids_repeat_requests() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("calls.log");
    let path = script(
        dir.path(),
        "logging.py",
        &format!(
            "{PRELUDE}log = open({:?}, 'a')\nfor line in sys.stdin:\n    r = json.loads(line)\n    log.write(r['prompt'] + '\\n'); log.flush()\n    print(json.dumps({{'id': r['id'], 'output': 'ok'}}), flush=True)\n",
            log.display().to_string()
        ),
    );
    let cached = CachedGenerator::new(Arc::new(generator(&path, 10_000)));
    cached.generate_batch(&prompts(&["a", "b", "a"])).unwrap();
    cached.generate_batch(&prompts(&["b", "c"])).unwrap();
    let calls = std::fs::read_to_string(&log).unwrap();
    assert_eq!(calls.lines().collect::<Vec<_>>(), ["a", "b", "c"]);
}
