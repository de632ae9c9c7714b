//! Build-time CIA scans and run-time risk-tiered execution governance.

mod governor;
mod scan;

pub use governor::{
    authorize, build_preview, classify_risk, estimate_cost, AuthorizationDecision, BreakerThresholds, CircuitBreakerState,
    Clock, Confirmation, CostBasis, CostEstimate, CostHistory, DecisionLog, DecisionReason, ExecutionPreview,
    Governor, LogEntry, LogKind, ManualClock, Quota, RiskTier, SystemClock, TierAssignment, WindowEvent,
};
pub use scan::{normalize, scan_availability, scan_confidentiality, scan_integrity};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::SideEffect;
use crate::generator::ServiceBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Confidentiality,
    Integrity,
    Availability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Advisory,
    Blocking,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SecurityFinding {
    pub axis: Axis,
    pub rule_id: String,
    pub file: String,
    pub line: usize,
    pub severity: Severity,
    pub detail: String,
}

impl SecurityFinding {
    pub fn is_blocking(&self) -> bool {
        self.severity == Severity::Blocking
    }
}

impl std::fmt::Display for SecurityFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}:{}: {}", self.rule_id, self.file, self.line, self.detail)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SecurityError {
    #[error("invalid path policy: {0}")]
    InvalidPolicy(String),
    #[error("cannot read policy {path}: {message}")]
    PolicyFile { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPolicy {
    pub whitelist_roots: Vec<PathBuf>,
    /// Glob patterns refused even inside a root.
    #[serde(default)]
    pub deny_overrides: Vec<String>,
}

impl PathPolicy {
    pub fn new(roots: Vec<PathBuf>, deny_overrides: Vec<String>) -> Result<Self, SecurityError> {
        if roots.is_empty() {
            return Err(SecurityError::InvalidPolicy("no whitelist roots".into()));
        }
        if let Some(r) = roots.iter().find(|r| !r.is_absolute()) {
            return Err(SecurityError::InvalidPolicy(format!("root {} is not absolute", r.display())));
        }
        for pattern in &deny_overrides {
            glob::Pattern::new(pattern)
                .map_err(|e| SecurityError::InvalidPolicy(format!("bad deny pattern {pattern}: {e}")))?;
        }
        Ok(Self {
            whitelist_roots: roots.iter().map(|r| normalize(r)).collect(),
            deny_overrides,
        })
    }

    /// Inside some root (boundary inclusive) after lexical normalization,
    /// and not matched by a deny override.
    pub fn permits(&self, path: &Path) -> bool {
        let absolute = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.whitelist_roots[0].join(path)
        };
        let normal = normalize(&absolute);
        let inside = self.whitelist_roots.iter().any(|root| normal.starts_with(root));
        let denied = self.deny_overrides.iter().any(|p| {
            glob::Pattern::new(p).is_ok_and(|pat| pat.matches_path(&normal))
        });
        inside && !denied
    }

    /// Literal from generated code. Home-relative paths are never provable.
    pub fn permits_literal(&self, literal: &str) -> bool {
        !literal.starts_with('~') && self.permits(Path::new(literal))
    }
}

/// A blocking finding accepted on purpose, with the reason recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waiver {
    pub rule_id: String,
    pub file: String,
    pub justification: String,
}

impl Waiver {
    pub fn covers(&self, finding: &SecurityFinding) -> bool {
        self.rule_id == finding.rule_id && self.file == finding.file && !self.justification.trim().is_empty()
    }
}

/// The policy file: roots, quotas, breaker thresholds, waivers and
/// pre-granted confirmations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct SecurityPolicy {
    pub whitelist_roots: Vec<PathBuf>,
    pub deny_overrides: Vec<String>,
    pub quota: Quota,
    pub thresholds: BreakerThresholds,
    pub waivers: Vec<Waiver>,
    /// Tools whose high-tier calls are confirmed in advance.
    pub pre_granted: BTreeSet<String>,
    /// Side effects with a registered undo, per tool.
    pub undo: BTreeMap<String, BTreeSet<SideEffect>>,
}


impl SecurityPolicy {
    pub fn load(path: &Path) -> Result<Self, SecurityError> {
        let text = std::fs::read_to_string(path).map_err(|e| SecurityError::PolicyFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| SecurityError::PolicyFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Path policy, falling back to `default_root` when none is configured.
    pub fn path_policy(&self, default_root: &Path) -> Result<PathPolicy, SecurityError> {
        let roots = if self.whitelist_roots.is_empty() {
            vec![default_root.to_path_buf()]
        } else {
            self.whitelist_roots.clone()
        };
        PathPolicy::new(roots, self.deny_overrides.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub findings: Vec<SecurityFinding>,
    /// Blocking findings covered by a waiver.
    pub waived: Vec<SecurityFinding>,
}

impl SecurityReport {
    pub fn unwaived_blocking(&self) -> Vec<&SecurityFinding> {
        self.findings.iter().filter(|f| f.is_blocking() && !self.waived.contains(f)).collect()
    }

    pub fn is_clear(&self) -> bool {
        self.unwaived_blocking().is_empty()
    }

    pub fn by_axis(&self) -> BTreeMap<Axis, Vec<&SecurityFinding>> {
        let mut out: BTreeMap<Axis, Vec<&SecurityFinding>> = BTreeMap::new();
        for f in &self.findings {
            out.entry(f.axis).or_default().push(f);
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let by_axis: BTreeMap<&str, Vec<&SecurityFinding>> = [Axis::Confidentiality, Axis::Integrity, Axis::Availability]
            .into_iter()
            .map(|a| {
                let name = match a {
                    Axis::Confidentiality => "confidentiality",
                    Axis::Integrity => "integrity",
                    Axis::Availability => "availability",
                };
                (name, self.findings.iter().filter(|f| f.axis == a).collect())
            })
            .collect();
        crate::write_versioned_json(
            path,
            &serde_json::json!({
                "findings": by_axis,
                "waived": self.waived,
                "blocking": self.unwaived_blocking().len(),
            }),
        )
    }

    /// Read back a report written by [`SecurityReport::write`].
    pub fn load(path: &Path) -> std::io::Result<Self> {
        #[derive(Deserialize)]
        struct Stored {
            findings: BTreeMap<String, Vec<SecurityFinding>>,
            #[serde(default)]
            waived: Vec<SecurityFinding>,
        }
        let text = std::fs::read_to_string(path)?;
        let stored: Stored =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut findings: Vec<SecurityFinding> = stored.findings.into_values().flatten().collect();
        findings.sort();
        Ok(Self {
            findings,
            waived: stored.waived,
        })
    }
}

/// All three scans, with waivers applied.
pub fn scan_bundle(bundle: &ServiceBundle, paths: &PathPolicy, waivers: &[Waiver]) -> SecurityReport {
    let mut findings = scan_confidentiality(bundle, paths);
    findings.extend(scan_integrity(bundle));
    findings.extend(scan_availability(bundle));
    findings.sort();
    let waived = findings
        .iter()
        .filter(|f| f.is_blocking() && waivers.iter().any(|w| w.covers(f)))
        .cloned()
        .collect();
    SecurityReport { findings, waived }
}

#[cfg(test)]
mod tests;
