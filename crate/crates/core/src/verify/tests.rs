use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::analysis::build_symbol_table;
use crate::bench::{classify_failure, FailureCategory};
use crate::gateway::{Reply, ScriptedBackend};
use crate::generator::{render_bundle, BundleDraft};

fn repo() -> (tempfile::TempDir, SymbolTable) {
    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("analytics");
    std::fs::create_dir_all(&pkg).unwrap();
    std::fs::write(pkg.join("__init__.py"), "").unwrap();
    std::fs::write(pkg.join("core.py"), "def run_pca(rows):\n    return rows\n\n\ndef run_tsne(rows):\n    return rows\n").unwrap();
    std::fs::write(pkg.join("empty.py"), "_private = 1\n").unwrap();
    let table = build_symbol_table(dir.path()).table;
    (dir, table)
}

fn bundle(imports: &[&str], table: &SymbolTable) -> ServiceBundle {
    let draft: BundleDraft = serde_json::from_value(json!({
        "service_name": "analytics",
        "description": "d",
        "usage": "",
        "endpoints": [{
            "tool_name": "pca",
            "description": "pca",
            "module": "analytics.core",
            "symbol": "run_pca",
            "imports": imports,
            "parameters": [{"name": "rows", "wire_type": "list-of-text"}],
            "call": "run_pca(rows)",
            "example_arguments": {"rows": ["a"]},
            "tests": [{"name": "basic", "arguments": {"rows": ["a"]}, "check": "result == ['a']"}]
        }]
    }))
    .unwrap();
    render_bundle(&draft, table, "run", &[])
}

#[test]
fn import_predicate_cases() {
    let (_dir, table) = repo();
    let ok = bundle(&["from analytics.core import run_pca", "import numpy", "from json import dumps"], &table);
    assert!(validate_imports(&ok, &table).is_empty());

    let typo = bundle(&["from analytics.core import run_tsnee"], &table);
    let findings = validate_imports(&typo, &table);
    assert_eq!(findings.len(), 1);
    assert_eq!(findings[0].kind, FindingKind::MissingSymbol);

    let missing = bundle(&["from analytics.missing import f"], &table);
    assert_eq!(validate_imports(&missing, &table)[0].kind, FindingKind::MissingModule);

    let sub = bundle(&["from analytics import core", "import analytics.core"], &table);
    assert!(validate_imports(&sub, &table).is_empty());
}

#[test]
fn private_names_are_not_in_the_table() {
    let (_dir, table) = repo();
    let b = bundle(&["from analytics.empty import _private"], &table);
    assert_eq!(validate_imports(&b, &table)[0].kind, FindingKind::MissingSymbol);
}

#[test]
fn repair_requires_findings() {
    let (dir, table) = repo();
    let b = bundle(&["from analytics.core import run_pca"], &table);
    let gw = Gateway::replay(Default::default());
    let err = repair_imports(&gw, &[], &b, &table, dir.path()).unwrap_err();
    assert!(matches!(err, VerifyError::Precondition(_)));
}

#[test]
fn seeded_typo_is_repaired() {
    let (dir, table) = repo();
    let b = bundle(&["from analytics.core import run_tsnee"], &table);
    let findings = validate_imports(&b, &table);
    let line = findings[0].binding.line;
    let backend = Arc::new(ScriptedBackend::new());
    backend.push(
        PurposeTag::ImportRepair,
        Reply::json(&json!({
            "steps": [{"file": "adapter.py", "start_line": line, "end_line": line,
                       "replacement": "from analytics.core import run_tsne", "explanation": "misspelled name"}],
            "root_cause": "typo"
        })),
    );
    let gw = Gateway::live(backend);
    let repaired = repair_imports(&gw, &findings, &b, &table, dir.path()).unwrap();
    assert!(validate_imports(&repaired, &table).is_empty());
}

#[test]
fn repair_without_progress_is_reported() {
    let (dir, table) = repo();
    let b = bundle(&["from analytics.core import run_tsnee"], &table);
    let findings = validate_imports(&b, &table);
    let line = findings[0].binding.line;
    let backend = Arc::new(ScriptedBackend::new());
    backend.push(
        PurposeTag::ImportRepair,
        Reply::json(&json!({
            "steps": [{"file": "adapter.py", "start_line": line, "end_line": line,
                       "replacement": "from analytics.core import run_tsnf", "explanation": "guess"}],
            "root_cause": "typo"
        })),
    );
    let err = repair_imports(&Gateway::live(backend), &findings, &b, &table, dir.path()).unwrap_err();
    assert!(matches!(err, VerifyError::NoProgress { before: 1, after: 1 }));
}

#[test]
fn dropping_the_only_bad_endpoint_clears_findings() {
    let (dir, table) = repo();
    let b = bundle(&["from analytics.missing import f"], &table);
    let findings = validate_imports(&b, &table);
    let backend = Arc::new(ScriptedBackend::new());
    backend.push(
        PurposeTag::ImportRepair,
        Reply::json(&json!({"drop_endpoints": ["pca"], "root_cause": "module has no public symbols"})),
    );
    let repaired = repair_imports(&Gateway::live(backend), &findings, &b, &table, dir.path()).unwrap();
    assert!(repaired.manifest.endpoints.is_empty());
    assert!(validate_imports(&repaired, &table).is_empty());
}

const JUNIT: &str = r#"<?xml version="1.0" encoding="utf-8"?><testsuites><testsuite name="pytest" errors="0" failures="2" skipped="0" tests="3"><testcase classname="test_adapter" name="test_avg_basic" time="0.01"><failure message="AssertionError">test_adapter.py:5: in test_avg_basic
    assert envelope["ok"], envelope["error"]["traceback"]
E   AssertionError: Traceback (most recent call last):
E       File "/w/bundle/adapter.py", line 5, in avg
E         result = await asyncio.to_thread(lambda: mean(values))
E       File "/usr/lib/python3.10/asyncio/threads.py", line 25, in to_thread
E         return await loop.run_in_executor(None, func_call)
E       File "/w/source/pkg/core.py", line 2, in mean
E         return sum(xs) / len(xs)
E     ZeroDivisionError: division by zero
E   assert False</failure></testcase><testcase classname="test_adapter" name="test_avg_check" time="0.01"><failure message="assert 1.5 == 2.0">test_adapter.py:9: in test_avg_check
    assert result == 2.0
E   assert 1.5 == 2.0</failure></testcase><testcase classname="test_adapter" name="test_ok" time="0.01" /></testsuite></testsuites>"#;

fn launch() -> crate::runtime::LaunchSpec {
    crate::runtime::LaunchSpec::new(
        Path::new("/usr/bin/python3"),
        Path::new("/w/bundle"),
        Path::new("/w/source"),
        vec!["/w/source".into()],
    )
}

#[test]
fn junit_counts_and_texts() {
    let (results, failures) = parse_junit(JUNIT);
    assert_eq!(results.len(), 3);
    assert_eq!(results.values().filter(|p| **p).count(), 1);
    assert_eq!(failures.len(), 2);
    let outcome = RunOutcome::from_counts(results, Some(failures.join("\n")), 0.1);
    assert_eq!(outcome.status, RunStatus::Fail);
    assert!(outcome.traceback.as_deref().unwrap().contains("assert 1.5 == 2.0"));
}

#[test]
fn empty_suite_fails() {
    let outcome = RunOutcome::from_counts(Default::default(), None, 0.0);
    assert_eq!(outcome.status, RunStatus::Fail);
    assert!(outcome.traceback.is_some());
}

#[test]
fn sanitized_traceback_names_the_source_frame() {
    let (_, failures) = parse_junit(JUNIT);
    let text = sanitize_traceback(&failures.join("\n"), &launch(), Path::new("/w/env"));
    assert!(text.contains("<source>/pkg/core.py"));
    assert!(text.contains("<bundle>/adapter.py"));
    assert!(!text.contains("/usr/lib/python3.10"));
    let summary = summarize_traceback(&text);
    assert_eq!(summary.exception.as_deref(), Some("ZeroDivisionError"));
    assert_eq!(summary.innermost_file.as_deref(), Some("<source>/pkg/core.py"));
}

#[test]
fn collection_errors_and_bare_asserts_summarize() {
    let collection = "test_adapter:\nadapter.py:7: in <module>\n    from nope import f\nE   ModuleNotFoundError: No module named 'nope'";
    let s = summarize_traceback(collection);
    assert_eq!(s.exception.as_deref(), Some("ModuleNotFoundError"));
    assert_eq!(s.innermost_file.as_deref(), Some("<bundle>/adapter.py"));

    let check = "test_avg_check:\ntest_adapter.py:9: in test_avg_check\n    assert result == 2.0\nE   assert 1.5 == 2.0";
    assert_eq!(summarize_traceback(check).exception.as_deref(), Some("AssertionError"));
}

fn failed_record(traceback: &str) -> ConversionRecord {
    let mut r = ConversionRecord::started("r", "file:///x", "c", &["download"], 3);
    r.outcomes.push(RunOutcome::synthetic_failure(traceback.into()));
    r
}

#[test]
fn taxonomy_rule_order() {
    let mut r = failed_record("x");
    r.env_failed = true;
    r.untoolable = true;
    assert_eq!(classify_failure(&r), Ok(FailureCategory::EnvironmentSetup));

    let typeerr = "t:\nE   AssertionError: Traceback (most recent call last):\nE       File \"<bundle>/adapter.py\", line 40, in <lambda>\nE         result = await asyncio.to_thread(lambda: mean(v, extra=1))\nE     TypeError: mean() got an unexpected keyword argument 'extra'";
    assert_eq!(classify_failure(&failed_record(typeerr)), Ok(FailureCategory::ApiInferenceError));

    let name = typeerr.replace("TypeError: mean() got an unexpected keyword argument 'extra'", "NameError: name 'mean' is not defined");
    assert_eq!(classify_failure(&failed_record(&name)), Ok(FailureCategory::ImportError));

    let mut shape = failed_record("CodeCheckError: the bundle did not pass the static checks");
    assert!(classify_failure(&shape).is_err());
    shape.shape_findings.push(crate::generator::ShapeFinding {
        rule: crate::generator::ShapeRule::SyncAdapter,
        file: "adapter.py".into(),
        line: Some(3),
        detail: "sync".into(),
    });
    assert_eq!(classify_failure(&shape), Ok(FailureCategory::McpSpecViolation));
}
