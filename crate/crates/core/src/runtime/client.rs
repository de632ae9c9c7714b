//! Client side of the stdio wire protocol: spawns a bundle's `main.py` and
//! speaks newline-delimited JSON-RPC to it.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::process::Sandboxed;

use super::RuntimeError;

/// How to start one generated service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchSpec {
    pub python: PathBuf,
    pub bundle_dir: PathBuf,
    pub source_dir: PathBuf,
    pub allowed_roots: Vec<PathBuf>,
    #[serde(default = "default_call_timeout")]
    pub call_timeout_secs: u64,
}

fn default_call_timeout() -> u64 {
    120
}

impl LaunchSpec {
    pub fn new(python: &Path, bundle_dir: &Path, source_dir: &Path, allowed_roots: Vec<PathBuf>) -> Self {
        Self {
            python: python.to_path_buf(),
            bundle_dir: bundle_dir.to_path_buf(),
            source_dir: source_dir.to_path_buf(),
            allowed_roots,
            call_timeout_secs: default_call_timeout(),
        }
    }

    /// Environment shared by the service process and the test runner.
    pub fn environment(&self) -> Vec<(String, String)> {
        let join = |paths: &[&Path]| {
            std::env::join_paths(paths)
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        let roots: Vec<&Path> = self.allowed_roots.iter().map(PathBuf::as_path).collect();
        vec![
            ("PYTHONPATH".into(), join(&[&self.bundle_dir, &self.source_dir])),
            ("PYTHONHASHSEED".into(), "0".into()),
            ("PYTHONDONTWRITEBYTECODE".into(), "1".into()),
            ("PYTHONIOENCODING".into(), "utf-8".into()),
            ("TOOLSMITH_ALLOWED_ROOTS".into(), join(&roots)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    /// The adapter envelope: `{ok, result}` or `{ok: false, error}`.
    pub envelope: Value,
    pub is_error: bool,
}

impl ToolResult {
    /// Well-formed, non-error result whose text content agrees with the
    /// structured content.
    pub fn is_valid_success(&self, raw: &Value) -> bool {
        let text_matches = raw["content"][0]["text"]
            .as_str()
            .and_then(|t| serde_json::from_str::<Value>(t).ok())
            .is_some_and(|v| v == self.envelope);
        !self.is_error && self.envelope["ok"] == json!(true) && self.envelope.get("result").is_some() && text_matches
    }
}

pub struct ServiceProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
    next_id: u64,
    timeout: Duration,
    name: String,
}

impl std::fmt::Debug for ServiceProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceProcess").field("name", &self.name).finish()
    }
}

impl ServiceProcess {
    /// Start the service and perform the `initialize` handshake.
    pub fn spawn(launch: &LaunchSpec) -> Result<Self, RuntimeError> {
        let mut sandbox = Sandboxed::new(&launch.python).arg("main.py").cwd(&launch.bundle_dir);
        for (k, v) in launch.environment() {
            sandbox = sandbox.env(k, v);
        }
        let mut child = sandbox
            .command()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| RuntimeError::Launch(format!("{}: {e}", launch.python.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().expect("stderr lock").push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });

        let mut process = Self {
            child,
            stdin,
            lines,
            stderr,
            next_id: 1,
            timeout: Duration::from_secs(launch.call_timeout_secs),
            name: launch.bundle_dir.display().to_string(),
        };
        process.request("initialize", json!({"protocolVersion": "2024-11-05", "capabilities": {}}))?;
        Ok(process)
    }

    pub fn stderr(&self) -> String {
        self.stderr.lock().expect("stderr lock").clone()
    }

    /// One request/response exchange. JSON-RPC errors become `RuntimeError::Rpc`.
    pub fn request(&mut self, method: &str, params: Value) -> Result<Value, RuntimeError> {
        let id = self.next_id;
        self.next_id += 1;
        let message = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let io_err = |e: std::io::Error| RuntimeError::Transport(e.to_string());
        writeln!(self.stdin, "{message}").map_err(io_err)?;
        self.stdin.flush().map_err(io_err)?;
        loop {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(RuntimeError::Transport(format!("no reply to {method} within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    // Give the stderr reader a moment to collect the exit message.
                    let _ = self.child.wait();
                    std::thread::sleep(Duration::from_millis(20));
                    return Err(RuntimeError::Transport(format!(
                        "service exited: {}",
                        self.stderr().trim()
                    )));
                }
            };
            let Ok(reply) = serde_json::from_str::<Value>(&line) else {
                // Stray output from library code; not part of the protocol.
                continue;
            };
            if reply.get("id") != Some(&json!(id)) {
                continue;
            }
            if let Some(err) = reply.get("error") {
                return Err(RuntimeError::Rpc {
                    code: err["code"].as_i64().unwrap_or(0),
                    message: err["message"].as_str().unwrap_or_default().to_string(),
                });
            }
            return Ok(reply.get("result").cloned().unwrap_or(Value::Null));
        }
    }

    pub fn list_tools(&mut self) -> Result<Vec<Value>, RuntimeError> {
        let result = self.request("tools/list", json!({}))?;
        Ok(result["tools"].as_array().cloned().unwrap_or_default())
    }

    /// Returns the decoded result and the raw wire reply.
    pub fn call_tool_raw(&mut self, name: &str, arguments: &Map<String, Value>) -> Result<(ToolResult, Value), RuntimeError> {
        let raw = self.request("tools/call", json!({"name": name, "arguments": arguments}))?;
        let envelope = raw
            .get("structuredContent")
            .cloned()
            .ok_or_else(|| RuntimeError::Transport(format!("reply to {name} has no structured content")))?;
        let is_error = raw["isError"].as_bool().unwrap_or(true);
        Ok((ToolResult { envelope, is_error }, raw))
    }

    pub fn call_tool(&mut self, name: &str, arguments: &Map<String, Value>) -> Result<ToolResult, RuntimeError> {
        self.call_tool_raw(name, arguments).map(|(r, _)| r)
    }
}

impl Drop for ServiceProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
