//! Sessions and governed plan execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::search::UserQuery;
use crate::security::{Confirmation, DecisionReason, ExecutionPreview, Governor, RiskTier};

use super::planning::{reference, InvocationPlan};
use super::{Registry, RuntimeError, ServiceProcess, ToolDescriptor, ToolResult};

/// Runs one tool call. Implemented over live service processes and by test doubles.
pub trait ToolExecutor {
    fn call(&mut self, descriptor: &ToolDescriptor, arguments: &Map<String, Value>) -> Result<ToolResult, RuntimeError>;
}

/// Asked before a high-tier call that is not pre-granted.
pub trait Confirmer {
    fn confirm(&mut self, preview: &ExecutionPreview) -> Confirmation;
}

/// Fixed answer, for non-interactive use.
pub struct StaticConfirmer(pub Confirmation);

impl Confirmer for StaticConfirmer {
    fn confirm(&mut self, _preview: &ExecutionPreview) -> Confirmation {
        self.0
    }
}

/// One service process per registered service, started on first use.
pub struct ServicePool {
    registry: Arc<Registry>,
    running: BTreeMap<String, ServiceProcess>,
}

impl ServicePool {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self {
            registry,
            running: BTreeMap::new(),
        }
    }
}

impl ToolExecutor for ServicePool {
    fn call(&mut self, descriptor: &ToolDescriptor, arguments: &Map<String, Value>) -> Result<ToolResult, RuntimeError> {
        if !self.running.contains_key(&descriptor.service) {
            let service = self
                .registry
                .services
                .get(&descriptor.service)
                .ok_or_else(|| RuntimeError::UnknownTool(descriptor.tool_name.clone()))?;
            let process = ServiceProcess::spawn(&service.launch)?;
            self.running.insert(descriptor.service.clone(), process);
        }
        let process = self.running.get_mut(&descriptor.service).expect("inserted");
        let result = process.call_tool(&descriptor.service_tool, arguments);
        if matches!(result, Err(RuntimeError::Transport(_))) {
            // A dead process is restarted on the next call.
            self.running.remove(&descriptor.service);
        }
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub tool: String,
    pub tier: RiskTier,
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview_id: Option<u64>,
    pub envelope: Value,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepAbort {
    Denied { step: usize, tool: String, reason: DecisionReason, detail: String },
    Failed { step: usize, tool: String, message: String },
}

impl StepAbort {
    pub fn describe(&self) -> String {
        match self {
            StepAbort::Denied { step, tool, reason, detail } => {
                format!("step {step} ({tool}) denied: {} ({detail})", reason.as_str())
            }
            StepAbort::Failed { step, tool, message } => format!("step {step} ({tool}) failed: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub request: String,
    pub plan: InvocationPlan,
    pub results: Vec<StepResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<StepAbort>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub original_query: UserQuery,
    pub history: Vec<HistoryEntry>,
    pub variables: BTreeMap<String, Value>,
}

impl SessionState {
    pub fn new(query: UserQuery) -> Self {
        Self {
            original_query: query,
            history: Vec::new(),
            variables: BTreeMap::new(),
        }
    }

    /// Short history listing for replanning prompts.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for (i, entry) in self.history.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, entry.request));
            for r in &entry.results {
                out.push_str(&format!("   {} -> {}\n", r.tool, if r.ok { "ok" } else { "error" }));
            }
            if let Some(abort) = &entry.aborted {
                out.push_str(&format!("   aborted: {}\n", abort.describe()));
            }
        }
        out
    }
}

/// Replace `$ref` arguments with bound values.
pub fn resolve_arguments(arguments: &Map<String, Value>, variables: &BTreeMap<String, Value>) -> Result<Map<String, Value>, String> {
    let mut out = Map::new();
    for (name, value) in arguments {
        let resolved = match reference(value) {
            Some(var) => {
                let mut current = variables.get(var).ok_or_else(|| format!("variable `{var}` is not bound"))?;
                let path = value.get("path").and_then(Value::as_array).cloned().unwrap_or_default();
                for key in &path {
                    current = match key {
                        Value::String(k) => current.get(k.as_str()),
                        Value::Number(n) => n.as_u64().and_then(|i| current.get(i as usize)),
                        _ => None,
                    }
                    .ok_or_else(|| format!("`{var}` has no element {key}"))?;
                }
                current.clone()
            }
            None => value.clone(),
        };
        out.insert(name.clone(), resolved);
    }
    Ok(out)
}

const ANSWER_ITEM_LIMIT: usize = 400;

fn clip(text: &str) -> String {
    if text.chars().count() <= ANSWER_ITEM_LIMIT {
        text.to_string()
    } else {
        let head: String = text.chars().take(ANSWER_ITEM_LIMIT).collect();
        format!("{head}...")
    }
}

/// Deterministic answer text: goal, each step's result, and the abort if any.
pub fn assemble_answer(plan: &InvocationPlan, results: &[StepResult], aborted: Option<&StepAbort>) -> String {
    let mut out = format!("{}\n", plan.goal_summary);
    for (i, r) in results.iter().enumerate() {
        let body = if r.ok { &r.envelope["result"] } else { &r.envelope["error"] };
        out.push_str(&format!("{}. {}: {}\n", i + 1, r.tool, clip(&body.to_string())));
    }
    if let Some(abort) = aborted {
        out.push_str(&format!("Stopped: {}\n", abort.describe()));
    }
    out
}

/// Execute the steps in order through the governor. A denial or a failed
/// step stops the plan; the entry is appended to the session either way.
pub fn execute_plan(
    request: &str,
    plan: &InvocationPlan,
    session: &mut SessionState,
    registry: &Registry,
    governor: &mut Governor,
    executor: &mut dyn ToolExecutor,
    confirmer: &mut dyn Confirmer,
) -> Result<HistoryEntry, RuntimeError> {
    let mut results = Vec::new();
    let mut aborted = None;
    for (index, step) in plan.steps.iter().enumerate() {
        let number = index + 1;
        let descriptor = registry
            .descriptor(&step.tool)
            .ok_or_else(|| RuntimeError::UnknownTool(step.tool.clone()))?;
        let arguments = match resolve_arguments(&step.arguments, &session.variables) {
            Ok(a) => a,
            Err(message) => {
                aborted = Some(StepAbort::Failed { step: number, tool: step.tool.clone(), message });
                break;
            }
        };
        let preview = governor
            .surface(governor.prepare(&descriptor.endpoint, &arguments))
            .map_err(|e| RuntimeError::Transport(format!("decision log: {e}")))?;
        let confirmation = if preview.tier == RiskTier::High && !governor.is_pre_granted(&descriptor.endpoint.tool_name) {
            confirmer.confirm(&preview)
        } else {
            Confirmation::Granted
        };
        let executed = governor.execute(&preview, confirmation, || {
            let result = executor.call(descriptor, &arguments);
            let ok = matches!(&result, Ok(r) if !r.is_error);
            (result, ok)
        });
        let result = match executed {
            Err(decision) => {
                aborted = Some(StepAbort::Denied {
                    step: number,
                    tool: step.tool.clone(),
                    reason: decision.reason,
                    detail: decision.detail,
                });
                break;
            }
            Ok(Err(e)) => {
                aborted = Some(StepAbort::Failed { step: number, tool: step.tool.clone(), message: e.to_string() });
                break;
            }
            Ok(Ok(result)) => result,
        };
        let ok = !result.is_error;
        results.push(StepResult {
            tool: step.tool.clone(),
            tier: preview.tier,
            arguments,
            preview_id: Some(preview.id),
            envelope: result.envelope.clone(),
            ok,
        });
        if !ok {
            let message = result.envelope["error"]["message"].as_str().unwrap_or("error envelope").to_string();
            aborted = Some(StepAbort::Failed { step: number, tool: step.tool.clone(), message });
            break;
        }
        if let Some(var) = &step.binds_output_to {
            session.variables.insert(var.clone(), result.envelope["result"].clone());
        }
    }
    let answer = assemble_answer(plan, &results, aborted.as_ref());
    let entry = HistoryEntry {
        request: request.to_string(),
        plan: plan.clone(),
        results,
        aborted,
        answer,
    };
    session.history.push(entry.clone());
    Ok(entry)
}

/// Replace a result larger than `cap` bytes with a pointer to a spill file.
pub fn cap_result(envelope: Value, cap: usize, spill_dir: &Path, name: &str) -> Value {
    let text = envelope.to_string();
    if text.len() <= cap {
        return envelope;
    }
    let path: PathBuf = spill_dir.join(format!("{name}.json"));
    let written = std::fs::create_dir_all(spill_dir).and_then(|_| std::fs::write(&path, &text));
    match written {
        Ok(()) => json!({
            "ok": envelope["ok"].clone(),
            "spilled": {"path": path.display().to_string(), "bytes": text.len()},
        }),
        Err(e) => json!({
            "ok": false,
            "error": {"type": "ResultTooLarge", "message": format!("{} bytes; spill failed: {e}", text.len()), "traceback": ""},
        }),
    }
}
