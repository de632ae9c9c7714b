//! MCP serving layer over the registry: newline-delimited JSON-RPC on stdio
//! or a local socket. Every call goes through the governor.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Map, Value};

use crate::security::{Confirmation, Governor, RiskTier};

use super::session::{cap_result, ToolExecutor};
use super::{Registry, RuntimeError};

pub const PROTOCOL_VERSION: &str = "2024-11-05";
pub const DEFAULT_RESULT_CAP: usize = 1 << 20;

pub struct ServerState {
    pub registry: Arc<Registry>,
    pub governor: Arc<Mutex<Governor>>,
    pub result_cap: usize,
    pub spill_dir: PathBuf,
    spill_seq: AtomicU64,
}

impl ServerState {
    pub fn new(registry: Arc<Registry>, governor: Arc<Mutex<Governor>>, spill_dir: &Path) -> Self {
        Self {
            registry,
            governor,
            result_cap: DEFAULT_RESULT_CAP,
            spill_dir: spill_dir.to_path_buf(),
            spill_seq: AtomicU64::new(1),
        }
    }
}

fn error_envelope(kind: &str, message: impl Into<String>) -> Value {
    json!({"ok": false, "error": {"type": kind, "message": message.into(), "traceback": ""}})
}

fn tool_reply(envelope: Value) -> Value {
    let is_error = !envelope["ok"].as_bool().unwrap_or(false);
    json!({
        "content": [{"type": "text", "text": serde_json::to_string(&envelope).unwrap_or_default()}],
        "structuredContent": envelope,
        "isError": is_error,
    })
}

pub fn list_tools(registry: &Registry) -> Value {
    let tools: Vec<Value> = registry
        .tools
        .values()
        .map(|d| {
            json!({
                "name": d.tool_name,
                "description": d.description,
                "inputSchema": d.input_schema,
                "annotations": {"riskTier": d.tier.as_str(), "service": d.service},
            })
        })
        .collect();
    json!({ "tools": tools })
}

/// `tools/call`: schema gate, preview, authorization, execution, size cap.
pub fn call_tool(state: &ServerState, executor: &mut dyn ToolExecutor, params: &Value) -> Value {
    let name = params["name"].as_str().unwrap_or_default();
    let Some(descriptor) = state.registry.descriptor(name) else {
        return tool_reply(error_envelope("UnknownTool", name));
    };
    let arguments: Map<String, Value> = params["arguments"].as_object().cloned().unwrap_or_default();
    let parameters = &descriptor.endpoint.parameters;
    let missing: Vec<&str> = parameters
        .iter()
        .filter(|p| p.required && !arguments.contains_key(&p.name))
        .map(|p| p.name.as_str())
        .collect();
    let unknown: Vec<&str> = arguments
        .keys()
        .filter(|k| !parameters.iter().any(|p| &p.name == *k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return tool_reply(error_envelope(
            "InvalidArguments",
            format!("missing: {}; unexpected: {}", missing.join(", "), unknown.join(", ")),
        ));
    }
    let confirmation = match params["_meta"]["confirmation"].as_str() {
        Some("granted") => Confirmation::Granted,
        _ => Confirmation::Withheld,
    };
    let mut governor = state.governor.lock().unwrap_or_else(|p| p.into_inner());
    let prepared = governor.prepare(&descriptor.endpoint, &arguments);
    let preview = match governor.surface(prepared) {
        Ok(p) => p,
        Err(e) => return tool_reply(error_envelope("GovernanceError", format!("decision log: {e}"))),
    };
    let confirmation = if preview.tier == RiskTier::High { confirmation } else { Confirmation::Granted };
    let executed = governor.execute(&preview, confirmation, || {
        let result = executor.call(descriptor, &arguments);
        let ok = matches!(&result, Ok(r) if !r.is_error);
        (result, ok)
    });
    drop(governor);
    let envelope = match executed {
        Err(decision) => error_envelope("Denied", format!("{}: {}", decision.reason.as_str(), decision.detail)),
        Ok(Err(e)) => error_envelope("ServiceError", e.to_string()),
        Ok(Ok(result)) => result.envelope,
    };
    let seq = state.spill_seq.fetch_add(1, Ordering::Relaxed);
    tool_reply(cap_result(envelope, state.result_cap, &state.spill_dir, &format!("{name}-{seq}")))
}

/// One message in, at most one reply out. `None` for notifications.
pub fn handle_message(state: &ServerState, executor: &mut dyn ToolExecutor, message: &Value) -> Option<Value> {
    let id = message.get("id")?.clone();
    let params = message.get("params").cloned().unwrap_or(Value::Null);
    let result = match message["method"].as_str().unwrap_or_default() {
        "initialize" => Ok(json!({
            "protocolVersion": PROTOCOL_VERSION,
            "serverInfo": {"name": "toolsmith", "version": env!("CARGO_PKG_VERSION")},
            "capabilities": {"tools": {}},
        })),
        "tools/list" => Ok(list_tools(&state.registry)),
        "tools/call" => Ok(call_tool(state, executor, &params)),
        "ping" | "shutdown" => Ok(json!({})),
        other => Err(json!({"code": -32601, "message": format!("method not found: {other}")})),
    };
    Some(match result {
        Ok(r) => json!({"jsonrpc": "2.0", "id": id, "result": r}),
        Err(e) => json!({"jsonrpc": "2.0", "id": id, "error": e}),
    })
}

/// Serve one connection until end of input or a `shutdown` request. Calls
/// are handled one at a time, so returning means nothing is in flight.
pub fn serve_connection(
    state: &ServerState,
    executor: &mut dyn ToolExecutor,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(message) => {
                let shutdown = message["method"] == "shutdown";
                let reply = handle_message(state, executor, &message);
                if let Some(reply) = &reply {
                    writeln!(output, "{reply}")?;
                    output.flush()?;
                }
                if shutdown {
                    return Ok(());
                }
                continue;
            }
            Err(e) => json!({"jsonrpc": "2.0", "id": null, "error": {"code": -32700, "message": e.to_string()}}),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(state: &ServerState, executor: &mut dyn ToolExecutor) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    serve_connection(state, executor, stdin.lock(), std::io::stdout().lock())
}

/// A running socket server. `shutdown` stops accepting and waits for open
/// connections to finish their current call.
pub struct ServerHandle {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        #[cfg(unix)]
        let _ = std::os::unix::net::UnixStream::connect(&self.path);
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_and_join();
        }
    }
}

/// Listen on a local socket; each connection is its own session with its own executor.
#[cfg(unix)]
pub fn serve_socket<F>(state: Arc<ServerState>, path: &Path, make_executor: F) -> Result<ServerHandle, RuntimeError>
where
    F: Fn() -> Box<dyn ToolExecutor + Send> + Send + Sync + 'static,
{
    use std::os::unix::net::UnixListener;
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| RuntimeError::TransportBind(format!("{}: {e}", path.display())))?;
    }
    let listener = UnixListener::bind(path).map_err(|e| RuntimeError::TransportBind(format!("{}: {e}", path.display())))?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let make_executor = Arc::new(make_executor);
    let acceptor = std::thread::spawn(move || {
        let mut workers = Vec::new();
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let (Ok(reader), Ok(control)) = (stream.try_clone(), stream.try_clone()) else { continue };
            let state = state.clone();
            let make_executor = make_executor.clone();
            let worker = std::thread::spawn(move || {
                let mut executor = make_executor();
                let _ = serve_connection(&state, executor.as_mut(), BufReader::new(reader), stream);
            });
            workers.push((control, worker));
        }
        // Idle connections see end of input; a call in progress finishes first.
        for (control, worker) in workers {
            let _ = control.shutdown(std::net::Shutdown::Read);
            let _ = worker.join();
        }
    });
    Ok(ServerHandle {
        path: path.to_path_buf(),
        stop,
        acceptor: Some(acceptor),
    })
}
