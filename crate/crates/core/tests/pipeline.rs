//! End-to-end conversions of corpus fixtures under replay.

use std::path::{Path, PathBuf};

use toolsmith_core::bench::FailureCategory;
use toolsmith_core::fixtures::materialize_repo;
use toolsmith_core::gateway::{Gateway, GatewayError};
use toolsmith_core::generator::check_bundle_shape;
use toolsmith_core::pipeline::{convert, ConvertOptions, PipelineError};
use toolsmith_core::verify::{ConversionRecord, FinalStatus};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn setup(case: &str) -> (tempfile::TempDir, String, Gateway) {
    let dir = tempfile::tempdir().unwrap();
    let repo = materialize_repo(&corpus().join("repos").join(case), &dir.path().join("repo")).unwrap();
    let gateway = Gateway::replay_file(&corpus().join("transcripts").join(format!("{case}.json"))).unwrap();
    (dir, repo.display().to_string(), gateway)
}

#[test]
fn clean_repository_converts_and_finalizes() {
    let (dir, repo, gateway) = setup("stats_clean");
    let mut opts = ConvertOptions::new(dir.path().join("runs"), "stats");
    opts.output_root = Some(dir.path().join("out"));
    let conversion = convert(&gateway, &repo, &opts, None).unwrap();

    assert!(conversion.succeeded(), "{:?}", conversion.record.notes);
    assert_eq!(conversion.record.rounds_used, 0);
    assert_eq!(conversion.record.generate_calls, 1);
    assert!(conversion.record.validated_endpoints >= 3);
    assert_eq!(
        &conversion.record.node_trace[..4],
        &["download", "analysis", "environment", "generate"].map(String::from)
    );

    let reports = conversion.workspace.reports_dir();
    for name in ["code_report.json", "symbols.json", "environment_spec.json", "security_report.json"] {
        assert!(reports.join(name).is_file(), "{name} missing");
    }
    let saved: ConversionRecord =
        serde_json::from_str(&std::fs::read_to_string(conversion.record_path()).unwrap()).unwrap();
    assert_eq!(saved.final_status, FinalStatus::Success);
    assert_eq!(saved.validated_endpoints, conversion.record.validated_endpoints);

    let finalized = conversion.finalized.expect("finalized bundle");
    assert!(finalized.dir.join("launch.json").is_file());
    assert!(!finalized.commit.is_empty());
    assert!(check_bundle_shape(conversion.bundle.as_ref().unwrap()).is_empty());
}

#[test]
fn untoolable_repository_stops_after_analysis() {
    let (dir, repo, gateway) = setup("gui_only");
    let conversion = convert(&gateway, &repo, &ConvertOptions::new(dir.path().join("runs"), "gui"), None).unwrap();
    assert!(!conversion.succeeded());
    assert!(conversion.record.untoolable);
    assert_eq!(conversion.record.failure_category, Some(FailureCategory::UntoolableStructure));
    assert!(!conversion.record.node_trace.iter().any(|n| n == "environment"));
    assert_eq!(conversion.record.generate_calls, 0);
}

#[test]
fn pinned_unavailable_runtime_is_an_environment_failure() {
    let (dir, repo, gateway) = setup("env_pinned_runtime");
    let conversion = convert(&gateway, &repo, &ConvertOptions::new(dir.path().join("runs"), "env"), None).unwrap();
    assert!(conversion.record.env_failed);
    assert_eq!(conversion.record.failure_category, Some(FailureCategory::EnvironmentSetup));
    assert!(conversion.workspace.reports_dir().join("install.log").is_file());
}

#[test]
fn unrecorded_prompt_is_a_harness_error() {
    // The transcript of a different repository has no answer for this one.
    let (dir, repo, _) = setup("text_clean");
    let gateway = Gateway::replay_file(&corpus().join("transcripts/stats_clean.json")).unwrap();
    let err = convert(&gateway, &repo, &ConvertOptions::new(dir.path().join("runs"), "miss"), None).unwrap_err();
    assert!(matches!(err, PipelineError::Gateway(GatewayError::ReplayMiss { .. })), "{err}");
}

#[test]
fn reused_run_id_is_refused() {
    let (dir, repo, gateway) = setup("gui_only");
    let opts = ConvertOptions::new(dir.path().join("runs"), "same");
    convert(&gateway, &repo, &opts, None).unwrap();
    assert!(matches!(convert(&gateway, &repo, &opts, None), Err(PipelineError::Clone(_))));
}
