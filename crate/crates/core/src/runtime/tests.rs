use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::{json, Map, Value};

use super::*;
use crate::gateway::{Gateway, PurposeTag, Reply, ScriptedBackend};
use crate::generator::{Manifest, ServiceBundle, ToolEndpoint};
use crate::search::UserQuery;
use crate::security::{Confirmation, DecisionLog, Governor, LogKind, ManualClock, SecurityPolicy, SecurityReport};

fn endpoint(name: &str, effects: &[&str], params: &[&str]) -> ToolEndpoint {
    serde_json::from_value(json!({
        "tool_name": name,
        "description": format!("{name} tool"),
        "parameters": params.iter().map(|p| json!({"name": p, "wire_type": "text"})).collect::<Vec<_>>(),
        "target": {"module": "pkg.core", "name": name},
        "risk_annotations": effects,
    }))
    .unwrap()
}

fn finalized(root: &Path, service: &str, endpoints: Vec<ToolEndpoint>, report: &SecurityReport) -> std::path::PathBuf {
    let dir = root.join(service);
    let bundle = ServiceBundle {
        files: BTreeMap::new(),
        manifest: Manifest {
            service_name: service.into(),
            description: String::new(),
            run_id: "r".into(),
            endpoints,
            dependencies: vec![],
            usage: String::new(),
            example_calls: vec![],
        },
        run_id: "r".into(),
        extra_files: vec![],
    };
    bundle.write_to(&dir).unwrap();
    report.write(&dir.join("security_report.json")).unwrap();
    let launch = LaunchSpec::new(Path::new("/usr/bin/python3"), &dir, root, vec![root.to_path_buf()]);
    crate::write_versioned_json(&dir.join("launch.json"), &launch).unwrap();
    dir
}

fn clear() -> SecurityReport {
    SecurityReport { findings: vec![], waived: vec![] }
}

#[test]
fn registration_tiers_and_collisions() {
    let tmp = tempfile::tempdir().unwrap();
    let a = finalized(
        tmp.path(),
        "alpha",
        vec![
            endpoint("stats", &[], &["x"]),
            endpoint("save", &["writes-fs"], &["x"]),
            endpoint("post", &["network"], &["x"]),
            endpoint("read", &["reads-fs"], &["x"]),
        ],
        &clear(),
    );
    let b = finalized(tmp.path(), "beta", vec![endpoint("stats", &[], &["x"])], &clear());
    let mut registry = Registry::default();
    let added = registry.register_bundle(&a).unwrap();
    assert_eq!(added.len(), 4);
    let tiers: BTreeMap<&str, &str> = added.iter().map(|d| (d.tool_name.as_str(), d.tier.as_str())).collect();
    assert_eq!(tiers["save"], "medium");
    assert_eq!(tiers["post"], "high");
    assert_eq!(tiers["stats"], "low");

    registry.register_bundle(&b).unwrap();
    assert!(registry.descriptor("stats").is_none());
    assert_eq!(registry.descriptor("alpha_stats").unwrap().service_tool, "stats");
    assert_eq!(registry.descriptor("beta_stats").unwrap().service, "beta");
    assert_eq!(registry.tools.len(), 5);

    let path = tmp.path().join(REGISTRY_FILE);
    registry.save(&path).unwrap();
    assert_eq!(Registry::load(&path).unwrap(), registry);
}

#[test]
fn blocking_findings_refuse_registration() {
    let tmp = tempfile::tempdir().unwrap();
    let finding: crate::security::SecurityFinding = serde_json::from_value(json!({
        "axis": "integrity", "rule_id": "command-injection", "file": "adapter.py", "line": 3,
        "severity": "blocking", "detail": "shell"
    }))
    .unwrap();
    let dir = finalized(
        tmp.path(),
        "bad",
        vec![endpoint("run", &[], &["cmd"])],
        &SecurityReport { findings: vec![finding], waived: vec![] },
    );
    let err = Registry::default().register_bundle(&dir).unwrap_err();
    assert!(matches!(err, RuntimeError::UnscannedBundle(_)));

    std::fs::remove_file(dir.join("security_report.json")).unwrap();
    assert!(matches!(Registry::default().register_bundle(&dir), Err(RuntimeError::UnscannedBundle(_))));
}

fn registry() -> (tempfile::TempDir, Registry) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = finalized(
        tmp.path(),
        "health",
        vec![
            endpoint("load_cohort", &[], &["name"]),
            endpoint("risk_model", &[], &["cohort"]),
            endpoint("publish", &["network"], &["report"]),
        ],
        &clear(),
    );
    let mut r = Registry::default();
    r.register_bundle(&dir).unwrap();
    (tmp, r)
}

fn plan(steps: Value) -> InvocationPlan {
    serde_json::from_value(json!({"goal_summary": "analysis", "steps": steps})).unwrap()
}

#[test]
fn plan_validation_rules() {
    let (_tmp, r) = registry();
    let none = BTreeSet::new();
    let good = plan(json!([
        {"tool": "load_cohort", "arguments": {"name": "stroke"}, "binds_output_to": "cohort"},
        {"tool": "risk_model", "arguments": {"cohort": {"$ref": "cohort"}}}
    ]));
    validate_plan(&good, &r, &none).unwrap();

    let ghost = plan(json!([{"tool": "ghost", "arguments": {}}]));
    assert!(matches!(validate_plan(&ghost, &r, &none), Err(RuntimeError::UnknownTool(_))));

    let unbound = plan(json!([{"tool": "risk_model", "arguments": {"cohort": {"$ref": "later"}}}]));
    assert!(matches!(validate_plan(&unbound, &r, &none), Err(RuntimeError::UnboundVariable(_))));
    let pre: BTreeSet<String> = ["later".to_string()].into();
    validate_plan(&unbound, &r, &pre).unwrap();

    let missing = plan(json!([{"tool": "risk_model", "arguments": {}}]));
    assert!(matches!(validate_plan(&missing, &r, &none), Err(RuntimeError::InvalidPlan(_))));
}

#[test]
fn planning_needs_tools_and_history() {
    let gw = Gateway::replay(Default::default());
    let q = UserQuery::new("analyse stroke risk").unwrap();
    assert!(matches!(plan_invocation(&gw, &q, &Registry::default()), Err(RuntimeError::Precondition(_))));
    let (_tmp, r) = registry();
    let session = SessionState::new(q.clone());
    assert!(matches!(replan(&gw, &session, &q, &r), Err(RuntimeError::Precondition(_))));
}

#[test]
fn scripted_plan_binds_step_outputs() {
    let (_tmp, r) = registry();
    let backend = Arc::new(ScriptedBackend::new());
    backend.push(
        PurposeTag::Planning,
        Reply::json(&json!({"goal_summary": "stroke risk", "steps": [
            {"tool": "load_cohort", "arguments": {"name": "stroke"}, "binds_output_to": "cohort"},
            {"tool": "risk_model", "arguments": {"cohort": {"$ref": "cohort"}}}
        ]})),
    );
    let gw = Gateway::live(backend);
    let p = plan_invocation(&gw, &UserQuery::new("stroke risk").unwrap(), &r).unwrap();
    assert_eq!(p.steps.len(), 2);
    assert_eq!(reference(&p.steps[1].arguments["cohort"]), p.steps[0].binds_output_to.as_deref());
}

/// Returns `{"tool": name, "args": arguments}` for every call.
#[derive(Default)]
struct Echo {
    calls: Vec<String>,
}

impl ToolExecutor for Echo {
    fn call(&mut self, d: &ToolDescriptor, arguments: &Map<String, Value>) -> Result<ToolResult, RuntimeError> {
        self.calls.push(d.tool_name.clone());
        Ok(ToolResult {
            envelope: json!({"ok": true, "result": {"tool": d.tool_name, "args": arguments}}),
            is_error: false,
        })
    }
}

fn governor(policy: &SecurityPolicy) -> Governor {
    Governor::new(policy, DecisionLog::in_memory(), Box::new(ManualClock::new(0.0)))
}

#[test]
fn plan_execution_resolves_references_and_stops_at_denial() {
    let (_tmp, r) = registry();
    let mut session = SessionState::new(UserQuery::new("stroke").unwrap());
    let mut gov = governor(&SecurityPolicy::default());
    let mut echo = Echo::default();
    let p = plan(json!([
        {"tool": "load_cohort", "arguments": {"name": "stroke"}, "binds_output_to": "cohort"},
        {"tool": "publish", "arguments": {"report": {"$ref": "cohort", "path": ["args", "name"]}}},
        {"tool": "risk_model", "arguments": {"cohort": "x"}}
    ]));
    let entry = execute_plan("stroke", &p, &mut session, &r, &mut gov, &mut echo, &mut StaticConfirmer(Confirmation::Withheld)).unwrap();
    assert_eq!(entry.results.len(), 1);
    assert!(matches!(entry.aborted, Some(StepAbort::Denied { step: 2, .. })));
    assert_eq!(echo.calls, ["load_cohort"]);
    assert_eq!(session.history.len(), 1);

    let entry = execute_plan("again", &p, &mut session, &r, &mut gov, &mut echo, &mut StaticConfirmer(Confirmation::Granted)).unwrap();
    assert!(entry.aborted.is_none());
    assert_eq!(entry.results[1].arguments["report"], json!("stroke"));
    assert_eq!(session.history.len(), 2);

    let empty = plan(json!([]));
    let entry = execute_plan("none", &empty, &mut session, &r, &mut gov, &mut echo, &mut StaticConfirmer(Confirmation::Withheld)).unwrap();
    assert!(entry.results.is_empty() && entry.aborted.is_none());

    // Every execution has an allow decision and a preview before it.
    let log = gov.log().entries();
    for (i, e) in log.iter().enumerate().filter(|(_, e)| e.kind == LogKind::Execution) {
        assert_eq!(log[i - 1].kind, LogKind::Decision);
        assert_eq!(log[i - 1].allow, Some(true));
        assert!(log[..i].iter().any(|p| p.kind == LogKind::Preview && p.preview_id == e.preview_id));
    }
}

#[test]
fn server_gates_arguments_and_lists_tools() {
    let (tmp, r) = registry();
    let state = ServerState::new(Arc::new(r), Arc::new(Mutex::new(governor(&SecurityPolicy::default()))), tmp.path());
    let mut echo = Echo::default();
    let input = [
        json!({"jsonrpc": "2.0", "id": 1, "method": "tools/list"}),
        json!({"jsonrpc": "2.0", "id": 2, "method": "tools/call", "params": {"name": "risk_model", "arguments": {}}}),
        json!({"jsonrpc": "2.0", "id": 3, "method": "tools/call", "params": {"name": "risk_model", "arguments": {"cohort": "c"}}}),
        json!({"jsonrpc": "2.0", "id": 4, "method": "tools/call", "params": {"name": "publish", "arguments": {"report": "c"}}}),
        json!({"jsonrpc": "2.0", "id": 5, "method": "nope"}),
    ]
    .iter()
    .map(|m| m.to_string())
    .collect::<Vec<_>>()
    .join("\n");
    let mut out = Vec::new();
    serve_connection(&state, &mut echo, input.as_bytes(), &mut out).unwrap();
    let replies: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies[0]["result"]["tools"].as_array().unwrap().len(), 3);
    assert_eq!(replies[1]["result"]["structuredContent"]["error"]["type"], "InvalidArguments");
    assert_eq!(replies[2]["result"]["structuredContent"]["result"]["args"]["cohort"], "c");
    assert_eq!(replies[3]["result"]["structuredContent"]["error"]["type"], "Denied");
    assert_eq!(replies[4]["error"]["code"], -32601);
    assert_eq!(echo.calls, ["risk_model"]);
}

#[test]
fn oversized_results_spill_to_files() {
    let tmp = tempfile::tempdir().unwrap();
    let big = json!({"ok": true, "result": "x".repeat(100)});
    let capped = cap_result(big.clone(), 50, tmp.path(), "t");
    let path = capped["spilled"]["path"].as_str().unwrap();
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(stored, big);
    assert_eq!(cap_result(big.clone(), 1000, tmp.path(), "u"), big);
}
