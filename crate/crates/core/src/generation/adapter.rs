//! Generator adapters.
//!
//! The external adapter talks line-delimited JSON to a worker process over
//! stdin/stdout. The worker must first print `{"ready":true}`; afterwards
//! each request `{"id":int,"prompt":str}` is answered by
//! `{"id":int,"output":str}`, possibly out of order.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collection::PAYLOAD_MARKER;
use crate::error::GenerationError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub trait Generator: Send + Sync {
    /// Stable identity used in cache keys and reports.
    fn identity(&self) -> &str;

    fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError>;

    fn generate(&self, prompt: &str) -> Result<String, GenerationError> {
        let mut out = self.generate_batch(&[prompt.to_owned()])?;
        Ok(out.pop().unwrap_or_default())
    }
}

/// Emits the sorted, de-duplicated payload tokens found in the prompt.
#[derive(Debug, Clone, Default)]
pub struct SyntheticGenerator;

impl SyntheticGenerator {
    pub fn respond(prompt: &str) -> String {
        let mut tokens: Vec<&str> = prompt
            .split_whitespace()
            .filter(|t| t.len() > PAYLOAD_MARKER.len_utf8() && t.starts_with(PAYLOAD_MARKER))
            .collect();
        tokens.sort_unstable();
        tokens.dedup();
        tokens.join(" ")
    }
}

impl Generator for SyntheticGenerator {
    fn identity(&self) -> &str {
        "synthetic"
    }

    fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
        Ok(prompts.iter().map(|p| Self::respond(p)).collect())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    id: u64,
    output: String,
}

#[derive(Deserialize)]
struct WireReady {
    ready: bool,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Worker {
    fn spawn(command: &str, timeout: Duration) -> Result<Self, GenerationError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| GenerationError::Spawn {
                command: command.to_owned(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let worker = Worker {
            child,
            stdin,
            lines,
        };
        match worker.lines.recv_timeout(timeout) {
            Ok(line) => match serde_json::from_str::<WireReady>(&line) {
                Ok(WireReady { ready: true }) => Ok(worker),
                _ => Err(GenerationError::NotReady(format!(
                    "unexpected first line `{line}`"
                ))),
            },
            Err(RecvTimeoutError::Timeout) => Err(GenerationError::NotReady(format!(
                "no ready line within {:.1}s",
                timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(GenerationError::NotReady(
                "worker exited before announcing readiness".into(),
            )),
        }
    }

    fn run(
        &mut self,
        requests: &[(u64, &str)],
        timeout: Duration,
    ) -> Result<Vec<String>, GenerationError> {
        let mut payload = Vec::new();
        for &(id, prompt) in requests {
            serde_json::to_writer(&mut payload, &WireRequest { id, prompt }).expect("serializable");
            payload.push(b'\n');
        }
        let first = requests.first().map_or(0, |r| r.0);
        self.stdin
            .write_all(&payload)
            .and_then(|()| self.stdin.flush())
            .map_err(|source| GenerationError::Write { id: first, source })?;

        let mut slots: HashMap<u64, usize> = requests
            .iter()
            .enumerate()
            .map(|(i, &(id, _))| (id, i))
            .collect();
        let mut outputs = vec![String::new(); requests.len()];
        while !slots.is_empty() {
            let waiting = *slots.keys().min().expect("non-empty");
            let line = match self.lines.recv_timeout(timeout) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(GenerationError::Timeout {
                        id: waiting,
                        secs: timeout.as_secs_f64(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(GenerationError::ProcessExited { id: waiting })
                }
            };
            let response: WireResponse =
                serde_json::from_str(&line).map_err(|_| GenerationError::Malformed {
                    id: waiting,
                    line: line.clone(),
                })?;
            let slot = slots
                .remove(&response.id)
                .ok_or(GenerationError::IdMismatch {
                    expected: waiting,
                    got: response.id,
                })?;
            outputs[slot] = response.output;
        }
        Ok(outputs)
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Generator backed by worker processes speaking the JSON-lines protocol.
///
/// Each batch runs on one worker; concurrent batches take separate workers
/// from a pool that grows on demand. A worker that fails is discarded.
pub struct ExternalGenerator {
    command: String,
    identity: String,
    timeout: Duration,
    next_id: AtomicU64,
    idle: Mutex<Vec<Worker>>,
}

impl ExternalGenerator {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        let command = command.into();
        Self {
            identity: format!("cmd:{command}"),
            command,
            timeout,
            next_id: AtomicU64::new(1),
            idle: Mutex::new(Vec::new()),
        }
    }

    /// Starts one worker eagerly so configuration problems surface early.
    pub fn warm_up(&self) -> Result<(), GenerationError> {
        let worker = Worker::spawn(&self.command, self.timeout)?;
        self.idle.lock().expect("pool lock").push(worker);
        Ok(())
    }
}

impl Generator for ExternalGenerator {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
        if prompts.is_empty() {
            return Ok(Vec::new());
        }
        let base = self
            .next_id
            .fetch_add(prompts.len() as u64, Ordering::Relaxed);
        let requests: Vec<(u64, &str)> = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (base + i as u64, p.as_str()))
            .collect();
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut worker = match pooled {
            Some(w) => w,
            None => Worker::spawn(&self.command, self.timeout)?,
        };
        let outputs = worker.run(&requests, self.timeout)?;
        self.idle.lock().expect("pool lock").push(worker);
        Ok(outputs)
    }
}

/// Memoizes another generator keyed by `(identity, sha256(prompt))`.
pub struct CachedGenerator {
    inner: Arc<dyn Generator>,
    cache: RwLock<HashMap<[u8; 32], String>>,
}

impl CachedGenerator {
    pub fn new(inner: Arc<dyn Generator>) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    fn key(&self, prompt: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.identity().as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&hasher.finalize());
        key
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Generator for CachedGenerator {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
        let keys: Vec<[u8; 32]> = prompts.iter().map(|p| self.key(p)).collect();
        let mut outputs: Vec<Option<String>> = {
            let cache = self.cache.read().expect("cache lock");
            keys.iter().map(|k| cache.get(k).cloned()).collect()
        };
        let mut seen = HashSet::new();
        let misses: Vec<usize> = (0..prompts.len())
            .filter(|&i| outputs[i].is_none() && seen.insert(keys[i]))
            .collect();
        if !misses.is_empty() {
            let batch: Vec<String> = misses.iter().map(|&i| prompts[i].clone()).collect();
            let fresh = self.inner.generate_batch(&batch)?;
            let mut cache = self.cache.write().expect("cache lock");
            for (&i, out) in misses.iter().zip(fresh) {
                cache.insert(keys[i], out);
            }
            for (slot, key) in outputs.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = cache.get(key).cloned();
                }
            }
        }
        Ok(outputs.into_iter().map(|o| o.expect("filled")).collect())
    }
}
