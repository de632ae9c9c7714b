//! The review/revise/fix loop and the finish node.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{CodeReport, RepositoryWorkspace, SymbolTable};
use crate::bench::{classify_failure, FailureCategory};
use crate::env::EnvironmentHandle;
use crate::gateway::Gateway;
use crate::generator::{
    check_shape_with, generate_bundle, regenerate_with_plan, tool_for_test, GenerateError, GenerationRules,
    RepairPlan, ServiceBundle, ShapeFinding,
};
use crate::process::Sandboxed;
use crate::runtime::{LaunchSpec, ServiceProcess};
use crate::security::{scan_bundle, SecurityFinding, SecurityPolicy, SecurityReport};

use super::{repair_imports, review_failure, run_tests, validate_imports, RunOutcome, ValidationFinding, VerifyError};

pub const DEFAULT_MAX_ROUNDS: usize = 3;
pub use crate::bench::MIN_VALIDATED_ENDPOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionRecord {
    pub run_id: String,
    pub repo: String,
    #[serde(default)]
    pub commit_id: String,
    pub node_trace: Vec<String>,
    pub rounds_used: usize,
    pub max_rounds: usize,
    pub outcomes: Vec<RunOutcome>,
    pub repair_plans: Vec<RepairPlan>,
    pub final_status: FinalStatus,
    pub validated_endpoints: usize,
    #[serde(default)]
    pub validated_tools: Vec<String>,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_category: Option<FailureCategory>,
    /// Model calls that produced or revised the bundle (first draft plus plans).
    pub generate_calls: usize,
    #[serde(default)]
    pub env_failed: bool,
    #[serde(default)]
    pub untoolable: bool,
    /// Findings from the last code check.
    #[serde(default)]
    pub import_findings: Vec<ValidationFinding>,
    #[serde(default)]
    pub shape_findings: Vec<ShapeFinding>,
    #[serde(default)]
    pub security_findings: Vec<SecurityFinding>,
    #[serde(default)]
    pub diffs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ConversionRecord {
    /// A record for a run whose upstream nodes already ran.
    pub fn started(run_id: &str, repo: &str, commit_id: &str, trace: &[&str], max_rounds: usize) -> Self {
        Self {
            run_id: run_id.into(),
            repo: repo.into(),
            commit_id: commit_id.into(),
            node_trace: trace.iter().map(|s| s.to_string()).collect(),
            rounds_used: 0,
            max_rounds,
            outcomes: Vec::new(),
            repair_plans: Vec::new(),
            final_status: FinalStatus::Failure,
            validated_endpoints: 0,
            validated_tools: Vec::new(),
            wall_time_secs: 0.0,
            failure_category: None,
            generate_calls: 0,
            env_failed: false,
            untoolable: false,
            import_findings: Vec::new(),
            shape_findings: Vec::new(),
            security_findings: Vec::new(),
            diffs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn enter(&mut self, node: &str) {
        self.node_trace.push(node.into());
    }

    pub fn last_outcome(&self) -> Option<&RunOutcome> {
        self.outcomes.last()
    }

    /// Close a failed record: trace node and category.
    pub fn fail(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !note.is_empty() {
            self.notes.push(note);
        }
        self.final_status = FinalStatus::Failure;
        self.enter("failed");
        match classify_failure(self) {
            Ok(category) => self.failure_category = Some(category),
            Err(e) => self.notes.push(e.to_string()),
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        crate::write_versioned_json(path, self)
    }
}

pub struct LoopInputs<'a> {
    pub gateway: &'a Gateway,
    pub workspace: &'a RepositoryWorkspace,
    pub table: &'a SymbolTable,
    pub report: &'a CodeReport,
    pub env: &'a EnvironmentHandle,
    pub max_rounds: usize,
    pub rules: &'a GenerationRules,
    pub security: &'a SecurityPolicy,
    pub test_timeout: Duration,
}

impl LoopInputs<'_> {
    pub fn launch(&self) -> Result<LaunchSpec, VerifyError> {
        let source = self.workspace.source_dir();
        let paths = self
            .security
            .path_policy(&source)
            .map_err(|e| VerifyError::Precondition(e.to_string()))?;
        Ok(LaunchSpec::new(
            &self.env.python,
            &self.workspace.bundle_dir(),
            &source,
            paths.whitelist_roots,
        ))
    }
}

/// Result of the code check node for one bundle.
struct Check {
    imports: Vec<ValidationFinding>,
    shape: Vec<ShapeFinding>,
    security: SecurityReport,
}

impl Check {
    fn clean(&self) -> bool {
        self.imports.is_empty() && self.shape.is_empty() && self.security.is_clear()
    }

    fn summary(&self) -> String {
        let mut lines = vec!["CodeCheckError: the bundle did not pass the static checks".to_string()];
        lines.extend(self.imports.iter().map(|f| {
            format!(
                "ImportError: {}:{}: {}",
                f.binding.importing_file, f.binding.line, f.detail
            )
        }));
        lines.extend(self.shape.iter().map(|f| format!("ShapeError: {f}")));
        lines.extend(self.security.unwaived_blocking().iter().map(|f| {
            format!("SecurityError: {}:{}: {} {}", f.file, f.line, f.rule_id, f.detail)
        }));
        lines.join("\n")
    }
}

/// Generate, check, run, and on failure review and revise, at most
/// `max_rounds` times. Conversion failures land in the record; only harness
/// problems (replay misses, transport) are errors.
pub fn run_rrf_loop(inputs: &LoopInputs<'_>) -> Result<(ConversionRecord, Option<ServiceBundle>), VerifyError> {
    let started = Instant::now();
    let ws = inputs.workspace;
    let mut record = ConversionRecord::started(
        &ws.run_id,
        &ws.source_url,
        &ws.commit_id,
        &["download", "analysis", "environment"],
        inputs.max_rounds,
    );
    let launch = inputs.launch()?;
    let source = ws.source_dir();
    let paths = inputs
        .security
        .path_policy(&source)
        .map_err(|e| VerifyError::Precondition(e.to_string()))?;

    record.enter("generate");
    record.generate_calls += 1;
    let dependencies = inputs.env.spec.packages.clone();
    let mut bundle = match generate_bundle(inputs.gateway, &ws.run_id, inputs.report, inputs.table, inputs.rules, &dependencies) {
        Ok(b) => b,
        Err(GenerateError::TemplateViolation { bundle, .. }) => *bundle,
        Err(GenerateError::Gateway(e)) if e.is_infrastructure() => return Err(VerifyError::Gateway(e)),
        Err(GenerateError::Gateway(e)) => {
            record.fail(format!("generation failed: {e}"));
            record.wall_time_secs = started.elapsed().as_secs_f64();
            return Ok((record, None));
        }
        Err(e) => {
            record.fail(format!("generation failed: {e}"));
            record.wall_time_secs = started.elapsed().as_secs_f64();
            return Ok((record, None));
        }
    };

    loop {
        record.enter("code_check");
        let mut check = Check {
            imports: validate_imports(&bundle, inputs.table),
            shape: check_shape_with(&bundle, inputs.rules),
            security: scan_bundle(&bundle, &paths, &inputs.security.waivers),
        };
        if !check.imports.is_empty() {
            record.enter("import_repair");
            match repair_imports(inputs.gateway, &check.imports, &bundle, inputs.table, &source) {
                Ok(repaired) => {
                    bundle = repaired;
                    check = Check {
                        imports: validate_imports(&bundle, inputs.table),
                        shape: check_shape_with(&bundle, inputs.rules),
                        security: scan_bundle(&bundle, &paths, &inputs.security.waivers),
                    };
                }
                Err(VerifyError::Gateway(e)) if e.is_infrastructure() => return Err(VerifyError::Gateway(e)),
                Err(e) => record.notes.push(format!("import repair failed: {e}")),
            }
        }
        record.import_findings = check.imports.clone();
        record.shape_findings = check.shape.clone();
        record.security_findings = check.security.unwaived_blocking().into_iter().cloned().collect();

        record.enter("run");
        let outcome = if check.clean() {
            run_tests(&bundle, inputs.env, &launch, inputs.test_timeout)?
        } else {
            RunOutcome::synthetic_failure(check.summary())
        };
        let passed = outcome.passed();
        record.outcomes.push(outcome);

        if passed {
            record.enter("validate");
            let validated = live_validate(&bundle, &record.outcomes[record.outcomes.len() - 1], &launch, &mut record.notes);
            record.validated_endpoints = validated.len();
            record.validated_tools = validated;
            if record.validated_endpoints >= MIN_VALIDATED_ENDPOINTS {
                record.final_status = FinalStatus::Success;
                record.enter("finish");
            } else {
                record.fail(format!(
                    "{} validated endpoints, {MIN_VALIDATED_ENDPOINTS} required",
                    record.validated_endpoints
                ));
            }
            break;
        }
        if record.rounds_used >= inputs.max_rounds {
            record.fail(format!("still failing after {} repair rounds", record.rounds_used));
            break;
        }

        record.enter("review");
        let outcome = record.last_outcome().expect("pushed").clone();
        let plan = match review_failure(inputs.gateway, &outcome, &bundle, inputs.table, &source) {
            Ok(plan) => plan,
            Err(VerifyError::Gateway(e)) if e.is_infrastructure() => return Err(VerifyError::Gateway(e)),
            Err(e) => {
                record.fail(format!("review failed: {e}"));
                break;
            }
        };
        record.repair_plans.push(plan.clone());
        record.rounds_used += 1;

        record.enter("regenerate");
        record.generate_calls += 1;
        match regenerate_with_plan(&bundle, &plan, inputs.rules) {
            Ok((next, diff)) => {
                bundle = next;
                record.diffs.push(diff);
            }
            // The violating bundle is kept; the next code check reports it.
            Err(GenerateError::TemplateViolation { bundle: next, .. }) => bundle = *next,
            Err(e) => record.notes.push(format!("round {}: {e}", record.rounds_used)),
        }
    }

    write_diff_history(&ws.bundle_dir(), &record.diffs).map_err(|e| VerifyError::Io(e.to_string()))?;
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((record, Some(bundle)))
}

fn write_diff_history(bundle_dir: &Path, diffs: &[String]) -> std::io::Result<()> {
    if diffs.is_empty() {
        return Ok(());
    }
    let dir = bundle_dir.join("diff_history");
    std::fs::create_dir_all(&dir)?;
    for (i, diff) in diffs.iter().enumerate() {
        std::fs::write(dir.join(format!("round_{}.diff", i + 1)), diff)?;
    }
    Ok(())
}

/// Tools whose tests all pass and whose live call through the served
/// interface returns a schema-valid success.
pub fn live_validate(
    bundle: &ServiceBundle,
    outcome: &RunOutcome,
    launch: &LaunchSpec,
    notes: &mut Vec<String>,
) -> Vec<String> {
    let tools = bundle.tool_names();
    let mut tested: BTreeMap<&str, bool> = BTreeMap::new();
    for (test, passed) in &outcome.test_results {
        if let Some(tool) = tool_for_test(test, &tools) {
            let entry = tested.entry(tool).or_insert(true);
            *entry &= *passed;
        }
    }
    if let Err(e) = bundle.write_to(&launch.bundle_dir) {
        notes.push(format!("validation: {e}"));
        return Vec::new();
    }
    let mut service = match ServiceProcess::spawn(launch) {
        Ok(s) => s,
        Err(e) => {
            notes.push(format!("validation: service did not start: {e}"));
            return Vec::new();
        }
    };
    let listed: BTreeSet<String> = match service.list_tools() {
        Ok(list) => list.iter().filter_map(|t| t["name"].as_str().map(String::from)).collect(),
        Err(e) => {
            notes.push(format!("validation: tools/list failed: {e}"));
            return Vec::new();
        }
    };
    let mut validated = Vec::new();
    for tool in &tools {
        if tested.get(tool.as_str()) != Some(&true) || !listed.contains(tool) {
            continue;
        }
        let Some(call) = bundle.manifest.example_calls.iter().find(|c| &c.tool == tool) else {
            notes.push(format!("validation: {tool} has no example call"));
            continue;
        };
        match service.call_tool_raw(tool, &call.arguments) {
            Ok((result, raw)) if result.is_valid_success(&raw) => validated.push(tool.clone()),
            Ok((result, _)) => notes.push(format!(
                "validation: {tool} returned an error: {}",
                result.envelope["error"]["message"].as_str().unwrap_or("invalid result")
            )),
            Err(e) => notes.push(format!("validation: {tool}: {e}")),
        }
    }
    validated
}

/// Optional remote step after the local commit.
pub trait PullRequestHook: Send + Sync {
    fn open(&self, repo_dir: &Path, service_dir: &Path, commit: &str, record: &ConversionRecord) -> Result<String, String>;
}

/// Posts `{title, commit, service, run_id}` to a URL with a bearer token read
/// from an environment variable.
pub struct HttpPullRequestHook {
    pub url: String,
    pub token_env: String,
}

impl PullRequestHook for HttpPullRequestHook {
    fn open(&self, _repo_dir: &Path, service_dir: &Path, commit: &str, record: &ConversionRecord) -> Result<String, String> {
        let token = std::env::var(&self.token_env).map_err(|_| format!("{} is not set", self.token_env))?;
        let service = service_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let body = json!({
            "title": format!("Add MCP service {service}"),
            "commit": commit,
            "service": service,
            "run_id": record.run_id,
        });
        let reply = reqwest::blocking::Client::new()
            .post(&self.url)
            .bearer_auth(token)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !reply.status().is_success() {
            return Err(format!("pull request hook returned {}", reply.status()));
        }
        reply.text().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizedBundle {
    pub dir: PathBuf,
    pub commit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pull_request: Option<String>,
}

/// Serializes commits from concurrent finalizations into the same output repo.
static COMMIT_LOCK: Mutex<()> = Mutex::new(());

fn git(dir: &Path, args: &[&str]) -> Result<String, VerifyError> {
    let out = Sandboxed::new("git")
        .args(["-c", "user.name=toolsmith", "-c", "user.email=toolsmith@localhost", "-c", "commit.gpgsign=false"])
        .args(args.iter().copied())
        .cwd(dir)
        .env("PATH", std::env::var("PATH").unwrap_or_default())
        .run()
        .map_err(|e| VerifyError::CommitFailed(e.to_string()))?;
    if !out.success() {
        return Err(VerifyError::CommitFailed(format!("git {}: {}", args.join(" "), out.combined().trim())));
    }
    Ok(out.stdout.trim().to_string())
}

/// Copy the bundle to `<output_root>/<service>/` with its reports and commit
/// it as one commit.
pub fn finalize_bundle(
    record: &ConversionRecord,
    bundle: &ServiceBundle,
    security: &SecurityReport,
    launch: &LaunchSpec,
    output_root: &Path,
    hook: Option<&dyn PullRequestHook>,
) -> Result<FinalizedBundle, VerifyError> {
    if record.final_status != FinalStatus::Success {
        return Err(VerifyError::Precondition("only successful conversions are finalized".into()));
    }
    let service = bundle.manifest.service_name.clone();
    let dir = output_root.join(&service);
    let io = |e: std::io::Error| VerifyError::Io(e.to_string());

    let _guard = COMMIT_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    std::fs::create_dir_all(output_root).map_err(io)?;
    if !output_root.join(".git").exists() {
        git(output_root, &["init", "-q"])?;
    }
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io)?;
    }
    bundle.write_to(&dir).map_err(io)?;
    security.write(&dir.join("security_report.json")).map_err(io)?;
    record.write(&dir.join("conversion_record.json")).map_err(io)?;
    let mut served = launch.clone();
    served.bundle_dir = dir.clone();
    crate::write_versioned_json(&dir.join("launch.json"), &served).map_err(io)?;

    git(output_root, &["add", "-A", "--", &service])?;
    let message = format!("Add MCP service {service}\n\nRun {} from {}", record.run_id, record.repo);
    git(output_root, &["commit", "-q", "-m", &message, "--", &service])?;
    let commit = git(output_root, &["rev-parse", "HEAD"])?;
    drop(_guard);

    let pull_request = match hook {
        Some(h) => Some(
            h.open(output_root, &dir, &commit, record)
                .map_err(|e| VerifyError::CommitFailed(format!("pull request hook: {e}")))?,
        ),
        None => None,
    };
    Ok(FinalizedBundle {
        dir,
        commit,
        pull_request,
    })
}
