//! Fixed skeletons for the five bundle files. Only the marked holes vary.

use crate::python::python_literal;

use super::{ToolEndpoint, ToolParameter};

pub const MAIN_PY: &str = "main.py";
pub const START_MCP_PY: &str = "start_mcp.py";
pub const SERVICE_PY: &str = "mcp_service.py";
pub const ADAPTER_PY: &str = "adapter.py";
pub const TEST_PY: &str = "test_adapter.py";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const BUNDLE_FILES: [&str; 5] = [MAIN_PY, START_MCP_PY, SERVICE_PY, ADAPTER_PY, TEST_PY];

/// Names the adapter template defines itself; tools may not shadow them.
pub const ADAPTER_RESERVED: &[&str] = &[
    "asyncio", "dataclasses", "os", "pathlib", "traceback", "ALLOWED_ROOTS", "adapter", "tool",
];

pub fn main_py(service: &str) -> String {
    format!(
        r#""""Entry point for the {service} MCP service."""
import sys


def check_dependencies():
    try:
        import adapter  # noqa: F401
    except ImportError as exc:
        sys.stderr.write("missing dependency: %s\n" % exc)
        sys.exit(3)


def main():
    check_dependencies()
    import mcp_service  # noqa: F401  (registers the tools)
    import start_mcp

    start_mcp.serve()


if __name__ == "__main__":
    main()
"#
    )
}

pub fn start_mcp_py(service: &str) -> String {
    START_MCP_TEMPLATE.replace("{{SERVICE}}", service)
}

const START_MCP_TEMPLATE: &str = r#""""Minimal MCP server: newline-delimited JSON-RPC 2.0 over stdio."""
import asyncio
import inspect
import json
import sys

SERVICE = "{{SERVICE}}"
PROTOCOL_VERSION = "2024-11-05"
TOOLS = {}

JSON_TYPES = {
    "text": {"type": "string"},
    "integer": {"type": "integer"},
    "real": {"type": "number"},
    "boolean": {"type": "boolean"},
    "list-of-text": {"type": "array", "items": {"type": "string"}},
    "opaque-file-path": {"type": "string", "format": "path"},
}


def tool(name, description, wire):
    def register(fn):
        params = inspect.signature(fn).parameters
        required = [p for p, v in params.items() if v.default is inspect.Parameter.empty]
        TOOLS[name] = {"fn": fn, "description": description, "wire": wire, "required": required}
        return fn

    return register


def input_schema(entry):
    props = {p: dict(JSON_TYPES.get(w, {"type": "string"}), **{"x-wire-type": w}) for p, w in entry["wire"].items()}
    return {"type": "object", "properties": props, "required": entry["required"]}


def _text_result(envelope):
    return {
        "content": [{"type": "text", "text": json.dumps(envelope, sort_keys=True)}],
        "structuredContent": envelope,
        "isError": not envelope.get("ok", False),
    }


async def call_tool(name, arguments):
    entry = TOOLS.get(name)
    if entry is None:
        return _text_result({"ok": False, "error": {"type": "UnknownTool", "message": name, "traceback": ""}})
    missing = [p for p in entry["required"] if p not in arguments]
    unknown = [p for p in arguments if p not in entry["wire"]]
    if missing or unknown:
        message = "missing: %s; unexpected: %s" % (", ".join(missing), ", ".join(unknown))
        return _text_result({"ok": False, "error": {"type": "InvalidArguments", "message": message, "traceback": ""}})
    envelope = await entry["fn"](**arguments)
    return _text_result(envelope)


async def handle(message):
    method = message.get("method")
    params = message.get("params") or {}
    if method == "initialize":
        return {
            "protocolVersion": PROTOCOL_VERSION,
            "serverInfo": {"name": SERVICE, "version": "0.1.0"},
            "capabilities": {"tools": {}},
        }
    if method == "tools/list":
        tools = [
            {"name": n, "description": e["description"], "inputSchema": input_schema(e)}
            for n, e in sorted(TOOLS.items())
        ]
        return {"tools": tools}
    if method == "tools/call":
        return await call_tool(params.get("name"), params.get("arguments") or {})
    if method == "ping":
        return {}
    raise LookupError(method)


def serve(stream_in=None, stream_out=None):
    stream_in = stream_in or sys.stdin
    stream_out = stream_out or sys.stdout
    for line in stream_in:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except ValueError as exc:
            reply = {"jsonrpc": "2.0", "id": None, "error": {"code": -32700, "message": str(exc)}}
        else:
            if "id" not in message:
                continue
            reply = {"jsonrpc": "2.0", "id": message["id"]}
            try:
                reply["result"] = asyncio.run(handle(message))
            except LookupError as exc:
                reply["error"] = {"code": -32601, "message": "method not found: %s" % exc}
            except Exception as exc:
                reply["error"] = {"code": -32603, "message": "%s: %s" % (type(exc).__name__, exc)}
        stream_out.write(json.dumps(reply, sort_keys=True) + "\n")
        stream_out.flush()
"#;

fn signature(params: &[ToolParameter]) -> String {
    let mut ordered: Vec<&ToolParameter> = params.iter().filter(|p| p.required).collect();
    ordered.extend(params.iter().filter(|p| !p.required));
    ordered
        .iter()
        .map(|p| match (&p.default, p.required) {
            (_, true) => p.name.clone(),
            (Some(d), false) => format!("{}={}", p.name, python_literal(d)),
            (None, false) => format!("{}=None", p.name),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn wire_dict(params: &[ToolParameter]) -> String {
    let inner: Vec<String> = params
        .iter()
        .map(|p| format!("{}: {}", py_str(&p.name), py_str(&p.wire_type)))
        .collect();
    format!("{{{}}}", inner.join(", "))
}

pub fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// `service_body` replaces the forwarding line when present.
pub fn service_py(service: &str, endpoints: &[(ToolEndpoint, Option<String>)]) -> String {
    let mut out = format!(
        "\"\"\"MCP tool layer for {service}. Decorators and parameter forwarding only.\"\"\"\nimport adapter\nfrom start_mcp import tool\n"
    );
    for (ep, body) in endpoints {
        let forward: Vec<String> = ep.parameters.iter().map(|p| format!("{0}={0}", p.name)).collect();
        let body = match body {
            Some(custom) => indent(custom, "    "),
            None => format!("    return await adapter.{}({})\n", ep.tool_name, forward.join(", ")),
        };
        out.push_str(&format!(
            "\n\n@tool({}, {}, {})\nasync def {}({}):\n{}",
            py_str(&ep.tool_name),
            py_str(&ep.description),
            wire_dict(&ep.parameters),
            ep.tool_name,
            signature(&ep.parameters),
            body
        ));
    }
    out
}

const ADAPTER_HEAD: &str = r#"import asyncio
import dataclasses
import os
import pathlib
import traceback
"#;

const ADAPTER_HELPERS: &str = r#"ALLOWED_ROOTS = [
    pathlib.Path(p).resolve()
    for p in os.environ.get("TOOLSMITH_ALLOWED_ROOTS", os.getcwd()).split(os.pathsep)
    if p
]


def _resolve_path(value):
    path = pathlib.Path(str(value)).expanduser()
    if not path.is_absolute():
        path = ALLOWED_ROOTS[0] / path
    path = path.resolve()
    for root in ALLOWED_ROOTS:
        if path == root or root in path.parents:
            return str(path)
    raise PermissionError("path outside the allowed roots: %s" % value)


def _convert(value, wire):
    if value is None:
        return None
    if wire == "text":
        return str(value)
    if wire == "integer":
        if isinstance(value, bool):
            raise TypeError("expected an integer, got a boolean")
        return int(value)
    if wire == "real":
        return float(value)
    if wire == "boolean":
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes")
        return bool(value)
    if wire == "list-of-text":
        if isinstance(value, str):
            return [value]
        return [str(v) for v in value]
    if wire == "opaque-file-path":
        return _resolve_path(value)
    raise TypeError("unsupported wire type: %s" % wire)


def _jsonable(value):
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        return [_jsonable(v) for v in sorted(value, key=repr)]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _jsonable(dataclasses.asdict(value))
    if hasattr(value, "__dict__"):
        return {k: _jsonable(v) for k, v in vars(value).items() if not k.startswith("_")}
    return repr(value)


def _ok(result):
    return {"ok": True, "result": _jsonable(result)}


def _error(exc):
    return {
        "ok": False,
        "error": {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()},
    }
"#;

pub struct AdapterOp<'a> {
    pub endpoint: &'a ToolEndpoint,
    pub call: &'a str,
}

pub fn adapter_py(service: &str, imports: &[String], ops: &[AdapterOp<'_>]) -> String {
    let mut out = format!(
        "\"\"\"Adapter layer for {service}.\n\nEach operation converts its wire arguments, runs the repository call in a\nworker thread and returns an envelope. Operations share no mutable state.\n\"\"\"\n{ADAPTER_HEAD}"
    );
    if !imports.is_empty() {
        out.push('\n');
        for line in imports {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("\n\n");
    out.push_str(ADAPTER_HELPERS);
    for op in ops {
        let ep = op.endpoint;
        out.push_str(&format!("\n\nasync def {}({}):\n    try:\n", ep.tool_name, signature(&ep.parameters)));
        for p in &ep.parameters {
            out.push_str(&format!("        {0} = _convert({0}, {1})\n", p.name, py_str(&p.wire_type)));
        }
        out.push_str(&format!(
            "        result = await asyncio.to_thread(lambda: {})\n        if asyncio.iscoroutine(result):\n            result = await result\n        return _ok(result)\n    except Exception as exc:\n        return _error(exc)\n",
            op.call
        ));
    }
    out
}

pub struct TestCase<'a> {
    pub tool: &'a str,
    pub name: String,
    pub arguments: &'a serde_json::Map<String, serde_json::Value>,
    pub check: Option<&'a str>,
}

pub fn test_py(service: &str, cases: &[TestCase<'_>]) -> String {
    let mut out = format!("\"\"\"Adapter tests for {service}: at least one per endpoint.\"\"\"\nimport asyncio\n\nimport adapter\n");
    for case in cases {
        let args: Vec<String> = case
            .arguments
            .iter()
            .map(|(k, v)| format!("{k}={}", python_literal(v)))
            .collect();
        out.push_str(&format!(
            "\n\ndef test_{}_{}():\n    envelope = asyncio.run(adapter.{}({}))\n    assert envelope[\"ok\"], envelope[\"error\"][\"traceback\"]\n",
            case.tool,
            case.name,
            case.tool,
            args.join(", ")
        ));
        if let Some(check) = case.check {
            out.push_str(&format!("    result = envelope[\"result\"]\n    assert {check}\n"));
        }
    }
    out
}

fn indent(text: &str, prefix: &str) -> String {
    let mut out = String::new();
    for line in text.trim_end().lines() {
        if line.trim().is_empty() {
            out.push('\n');
        } else {
            out.push_str(prefix);
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
