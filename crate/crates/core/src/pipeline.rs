//! End-to-end conversion of one repository: clone, analysis, environment,
//! the repair loop and, on success, finalization.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::analysis::{
    analyze_repository, build_symbol_table, clone_repository, write_reports, AnalysisError, RepositoryWorkspace,
};
use crate::env::{extract_dependencies, provision_environment, EnvConfig, EnvError};
use crate::gateway::{Gateway, GatewayError};
use crate::generator::{GenerationRules, ServiceBundle};
use crate::security::{scan_bundle, SecurityPolicy, SecurityReport};
use crate::verify::{
    finalize_bundle, run_rrf_loop, ConversionRecord, FinalStatus, FinalizedBundle, LoopInputs, PullRequestHook,
    VerifyError, DEFAULT_MAX_ROUNDS, TEST_TIMEOUT,
};

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    pub workspace_root: PathBuf,
    pub run_id: String,
    /// Finalized bundles are committed here; `None` skips finalization.
    pub output_root: Option<PathBuf>,
    pub env: EnvConfig,
    pub max_rounds: usize,
    pub rules: GenerationRules,
    pub security: SecurityPolicy,
    pub test_timeout: Duration,
}

impl ConvertOptions {
    pub fn new(workspace_root: impl Into<PathBuf>, run_id: impl Into<String>) -> Self {
        Self {
            workspace_root: workspace_root.into(),
            run_id: run_id.into(),
            output_root: None,
            env: EnvConfig::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            rules: GenerationRules::standard(),
            security: SecurityPolicy::default(),
            test_timeout: TEST_TIMEOUT,
        }
    }
}

#[derive(Debug)]
pub struct Conversion {
    pub record: ConversionRecord,
    pub workspace: RepositoryWorkspace,
    pub bundle: Option<ServiceBundle>,
    pub security: Option<SecurityReport>,
    pub finalized: Option<FinalizedBundle>,
}

impl Conversion {
    pub fn succeeded(&self) -> bool {
        self.record.final_status == FinalStatus::Success
    }

    pub fn record_path(&self) -> PathBuf {
        self.workspace.reports_dir().join("conversion_record.json")
    }
}

/// Problems with the harness itself, as opposed to a conversion that failed.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Clone(AnalysisError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("i/o: {0}")]
    Io(String),
}

fn io(e: std::io::Error) -> PipelineError {
    PipelineError::Io(e.to_string())
}

/// Convert the repository at `repo_url`. A failed conversion is an `Ok` with a
/// failed record; errors are reserved for clone failures, replay misses and
/// transport problems.
pub fn convert(
    gateway: &Gateway,
    repo_url: &str,
    opts: &ConvertOptions,
    hook: Option<&dyn PullRequestHook>,
) -> Result<Conversion, PipelineError> {
    let started = Instant::now();
    let workspace = clone_repository(repo_url, &opts.workspace_root, &opts.run_id).map_err(PipelineError::Clone)?;
    let source = workspace.source_dir();
    let reports = workspace.reports_dir();
    let scan = build_symbol_table(&source);

    let failed_early = |workspace: RepositoryWorkspace, mut record: ConversionRecord, note: String| {
        record.fail(note);
        record.wall_time_secs = started.elapsed().as_secs_f64();
        record.write(&workspace.reports_dir().join("conversion_record.json")).map_err(io)?;
        Ok(Conversion {
            record,
            workspace,
            bundle: None,
            security: None,
            finalized: None,
        })
    };
    let early_record = |trace: &[&str]| {
        ConversionRecord::started(&workspace.run_id, &workspace.source_url, &workspace.commit_id, trace, opts.max_rounds)
    };

    let report = match analyze_repository(gateway, &workspace, &scan.table) {
        Ok(report) => report,
        Err(AnalysisError::Untoolable(reason)) => {
            write_reports(&reports, &scan, None).map_err(io)?;
            let mut record = early_record(&["download", "analysis"]);
            record.untoolable = true;
            return failed_early(workspace.clone(), record, format!("untoolable: {reason}"));
        }
        Err(AnalysisError::Gateway(e)) if e.is_infrastructure() => return Err(e.into()),
        Err(e) => {
            write_reports(&reports, &scan, None).map_err(io)?;
            let record = early_record(&["download", "analysis"]);
            return failed_early(workspace.clone(), record, format!("analysis failed: {e}"));
        }
    };
    write_reports(&reports, &scan, Some(&report)).map_err(io)?;

    let spec = extract_dependencies(&source);
    crate::write_versioned_json(&reports.join("environment_spec.json"), &spec).map_err(io)?;
    let env = match provision_environment(&spec, &workspace.env_dir(), &opts.env) {
        Ok(handle) => handle,
        Err(e @ (EnvError::RuntimeUnavailable(_) | EnvError::InstallFailed { .. })) => {
            let log = match e.handle() {
                Some(handle) => handle.install_log.clone(),
                None => format!("{e}\n"),
            };
            std::fs::write(reports.join("install.log"), log).map_err(io)?;
            let mut record = early_record(&["download", "analysis", "environment"]);
            record.env_failed = true;
            return failed_early(workspace.clone(), record, format!("environment: {e}"));
        }
        Err(e) => return Err(PipelineError::Io(e.to_string())),
    };
    std::fs::write(reports.join("install.log"), &env.install_log).map_err(io)?;

    let inputs = LoopInputs {
        gateway,
        workspace: &workspace,
        table: &scan.table,
        report: &report,
        env: &env,
        max_rounds: opts.max_rounds,
        rules: &opts.rules,
        security: &opts.security,
        test_timeout: opts.test_timeout,
    };
    let (mut record, bundle) = run_rrf_loop(&inputs)?;
    record.wall_time_secs = started.elapsed().as_secs_f64();

    let security = match &bundle {
        Some(b) => {
            let paths = opts
                .security
                .path_policy(&source)
                .map_err(|e| PipelineError::Verify(VerifyError::Precondition(e.to_string())))?;
            let report = scan_bundle(b, &paths, &opts.security.waivers);
            report.write(&reports.join("security_report.json")).map_err(io)?;
            Some(report)
        }
        None => None,
    };
    record.write(&reports.join("conversion_record.json")).map_err(io)?;

    let finalized = match (&opts.output_root, &bundle, &security) {
        (Some(output), Some(b), Some(s)) if record.final_status == FinalStatus::Success => {
            Some(finalize_bundle(&record, b, s, &inputs.launch()?, output, hook)?)
        }
        _ => None,
    };
    Ok(Conversion {
        record,
        workspace,
        bundle,
        security,
        finalized,
    })
}
