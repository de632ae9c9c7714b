//! Success judgment and the six-way failure taxonomy.

use serde::{Deserialize, Serialize};

use crate::verify::{summarize_traceback, ConversionRecord, FinalStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCategory {
    EnvironmentSetup,
    UntoolableStructure,
    ImportError,
    RepositoryBug,
    ApiInferenceError,
    McpSpecViolation,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 6] = [
        FailureCategory::EnvironmentSetup,
        FailureCategory::UntoolableStructure,
        FailureCategory::ImportError,
        FailureCategory::RepositoryBug,
        FailureCategory::ApiInferenceError,
        FailureCategory::McpSpecViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::EnvironmentSetup => "environment-setup",
            FailureCategory::UntoolableStructure => "untoolable-structure",
            FailureCategory::ImportError => "import-error",
            FailureCategory::RepositoryBug => "repository-bug",
            FailureCategory::ApiInferenceError => "api-inference-error",
            FailureCategory::McpSpecViolation => "mcp-spec-violation",
        }
    }
}

impl std::fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClassifyError {
    #[error("record is a success; nothing to classify")]
    NotAFailure,
    #[error("unclassifiable failure: {0}")]
    Unclassifiable(String),
}

pub const MIN_VALIDATED_ENDPOINTS: usize = 3;

pub fn judge_success(record: &ConversionRecord) -> bool {
    let last_pass = record.outcomes.last().is_some_and(|o| o.passed());
    record.final_status == FinalStatus::Success && last_pass && record.validated_endpoints >= MIN_VALIDATED_ENDPOINTS
}

const RESOLUTION_ERRORS: [&str; 3] = ["ModuleNotFoundError", "ImportError", "NameError"];

/// First matching rule wins: environment, structure, imports, repository
/// source, adapter call signature, service shape.
pub fn classify_failure(record: &ConversionRecord) -> Result<FailureCategory, ClassifyError> {
    if judge_success(record) {
        return Err(ClassifyError::NotAFailure);
    }
    if record.env_failed {
        return Ok(FailureCategory::EnvironmentSetup);
    }
    if record.untoolable {
        return Ok(FailureCategory::UntoolableStructure);
    }
    let summary = record
        .outcomes
        .last()
        .and_then(|o| o.traceback.as_deref())
        .map(summarize_traceback)
        .unwrap_or_default();
    let exception = summary.exception.as_deref().unwrap_or("");
    let innermost = summary.innermost_file.as_deref().unwrap_or("");
    if !record.import_findings.is_empty() || RESOLUTION_ERRORS.contains(&exception) {
        return Ok(FailureCategory::ImportError);
    }
    if innermost.starts_with("<source>/") {
        return Ok(FailureCategory::RepositoryBug);
    }
    if exception == "TypeError" && innermost == "<bundle>/adapter.py" {
        return Ok(FailureCategory::ApiInferenceError);
    }
    if !record.shape_findings.is_empty() || !record.security_findings.is_empty() {
        return Ok(FailureCategory::McpSpecViolation);
    }
    Err(ClassifyError::Unclassifiable(match summary.exception {
        Some(e) => format!("last failure {e} in {}", if innermost.is_empty() { "unknown frame" } else { innermost }),
        None if record.outcomes.last().is_some_and(|o| o.passed()) => format!(
            "tests pass but {} endpoints validated",
            record.validated_endpoints
        ),
        None => "no traceback to classify".into(),
    }))
}
