//! Run-time governance: risk tiers, cost estimates, previews and the
//! authorize gate with its circuit breaker and append-only decision log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::SecurityPolicy;
use crate::analysis::SideEffect;
use crate::generator::ToolEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl RiskTier {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::Low => "low",
            RiskTier::Medium => "medium",
            RiskTier::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub tier: RiskTier,
    pub rationale: String,
}

/// Highest applicable tier wins. An empty annotation set means "none".
pub fn classify_risk(endpoint: &ToolEndpoint) -> TierAssignment {
    let tags = &endpoint.risk_annotations;
    let high: Vec<&str> = tags
        .iter()
        .filter(|t| {
            matches!(
                t,
                SideEffect::WritesFsOutside
                    | SideEffect::Network
                    | SideEffect::ExecutesSubprocess
                    | SideEffect::Delete
                    | SideEffect::Commit
                    | SideEffect::Payment
            )
        })
        .map(|t| t.as_str())
        .collect();
    if !high.is_empty() {
        return TierAssignment {
            tier: RiskTier::High,
            rationale: format!("irreversible or external effects: {}", high.join(", ")),
        };
    }
    if tags.contains(&SideEffect::WritesFs) {
        return TierAssignment {
            tier: RiskTier::Medium,
            rationale: "modifies files inside the workspace".into(),
        };
    }
    TierAssignment {
        tier: RiskTier::Low,
        rationale: if tags.is_empty() {
            "no side effects".into()
        } else {
            "retrieval only".into()
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostBasis {
    StaticHeuristic,
    Historical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub predicted_cpu_seconds: f64,
    pub predicted_memory_bytes: f64,
    pub predicted_call_count: u64,
    pub basis: CostBasis,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Observed run times per tool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostHistory {
    pub runs: BTreeMap<String, Vec<f64>>,
}

pub const HISTORY_THRESHOLD: usize = 5;
const BASE_CPU: f64 = 0.05;
const BASE_MEMORY: f64 = 32.0 * 1024.0 * 1024.0;
const SIZE_WORDS: &[&str] = &[
    "n", "num", "size", "count", "samples", "rows", "length", "limit", "iterations", "epochs", "k", "steps",
    "depth", "repeats",
];

impl CostHistory {
    pub fn record(&mut self, tool: &str, cpu_seconds: f64) {
        self.runs.entry(tool.to_string()).or_default().push(cpu_seconds.max(0.0));
    }

    pub fn median(&self, tool: &str) -> Option<f64> {
        let runs = self.runs.get(tool).filter(|r| r.len() >= HISTORY_THRESHOLD)?;
        let mut sorted = runs.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        Some(if sorted.len() % 2 == 0 {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        })
    }
}

fn is_size_parameter(name: &str) -> bool {
    name.to_ascii_lowercase().split('_').any(|w| SIZE_WORDS.contains(&w))
}

/// Static heuristic from annotations and argument magnitudes; historical
/// median once the tool has enough recorded runs.
pub fn estimate_cost(endpoint: &ToolEndpoint, arguments: &Map<String, Value>, history: &CostHistory) -> CostEstimate {
    let mut cpu = BASE_CPU;
    let mut memory = BASE_MEMORY;
    let mut notes = Vec::new();
    for effect in &endpoint.risk_annotations {
        cpu += match effect {
            SideEffect::ReadsFs => 0.05,
            SideEffect::Network | SideEffect::ExecutesSubprocess => 1.0,
            _ => 0.1,
        };
    }
    for (name, value) in arguments {
        match value {
            Value::Number(n) if is_size_parameter(name) => {
                let v = n.as_f64().unwrap_or(0.0);
                if v < 0.0 {
                    notes.push(format!("negative size argument `{name}` clamped to baseline"));
                } else {
                    cpu += v * 1e-5;
                    memory += v * 64.0;
                }
            }
            Value::Array(items) => memory += items.len() as f64 * 256.0,
            Value::String(s) => memory += s.len() as f64,
            _ => {}
        }
    }
    let (cpu, basis) = match history.median(&endpoint.tool_name) {
        Some(median) => (median, CostBasis::Historical),
        None => (cpu, CostBasis::StaticHeuristic),
    };
    CostEstimate {
        predicted_cpu_seconds: cpu,
        predicted_memory_bytes: memory,
        predicted_call_count: 1,
        basis,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPreview {
    /// Assigned when the preview is persisted; 0 before.
    pub id: u64,
    pub endpoint: String,
    pub tier: RiskTier,
    pub expected_scope: String,
    pub affected_objects: Vec<String>,
    pub reversible: bool,
    pub side_effects: Vec<SideEffect>,
    pub estimated_cost: CostEstimate,
    #[serde(default)]
    pub surfaced: bool,
}

/// Affected objects come from path-typed arguments. Reversible only when
/// every side effect has a registered undo.
pub fn build_preview(
    endpoint: &ToolEndpoint,
    tier: RiskTier,
    arguments: &Map<String, Value>,
    estimate: CostEstimate,
    undo: Option<&BTreeSet<SideEffect>>,
) -> ExecutionPreview {
    let mut affected = Vec::new();
    for p in endpoint.parameters.iter().filter(|p| p.wire_type == "opaque-file-path") {
        match arguments.get(&p.name) {
            Some(Value::String(s)) => affected.push(s.clone()),
            Some(Value::Array(items)) => affected.extend(items.iter().filter_map(|v| v.as_str().map(str::to_string))),
            _ => {}
        }
    }
    let effects: Vec<SideEffect> = endpoint.risk_annotations.iter().copied().collect();
    let reversible = effects.iter().all(|e| undo.is_some_and(|u| u.contains(e)));
    let effect_text = if effects.is_empty() {
        "none".to_string()
    } else {
        effects.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(", ")
    };
    ExecutionPreview {
        id: 0,
        endpoint: endpoint.tool_name.clone(),
        tier,
        expected_scope: format!(
            "calls {}.{} ({} tier; effects: {effect_text})",
            endpoint.target.module,
            endpoint.target.name,
            tier.as_str()
        ),
        affected_objects: affected,
        reversible,
        side_effects: effects,
        estimated_cost: estimate,
        surfaced: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Quota {
    pub max_cpu_seconds: f64,
    pub max_memory_bytes: f64,
    pub max_call_count: u64,
}

impl Default for Quota {
    fn default() -> Self {
        Self {
            max_cpu_seconds: 60.0,
            max_memory_bytes: 4.0 * 1024.0 * 1024.0 * 1024.0,
            max_call_count: 100,
        }
    }
}

impl Quota {
    pub fn exceeded_by(&self, estimate: &CostEstimate) -> Option<String> {
        if estimate.predicted_cpu_seconds > self.max_cpu_seconds {
            Some(format!("{:.2}s cpu over {:.2}s", estimate.predicted_cpu_seconds, self.max_cpu_seconds))
        } else if estimate.predicted_memory_bytes > self.max_memory_bytes {
            Some(format!("{:.0} bytes over {:.0}", estimate.predicted_memory_bytes, self.max_memory_bytes))
        } else if estimate.predicted_call_count > self.max_call_count {
            Some(format!("{} calls over {}", estimate.predicted_call_count, self.max_call_count))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreakerThresholds {
    pub max_high_per_window: usize,
    pub max_denials_per_window: usize,
    /// Summed predicted cpu seconds of allowed calls.
    pub max_cost_per_window: f64,
    pub window_seconds: f64,
}

impl Default for BreakerThresholds {
    fn default() -> Self {
        Self {
            max_high_per_window: 5,
            max_denials_per_window: 3,
            max_cost_per_window: 600.0,
            window_seconds: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvent {
    pub at: f64,
    pub tier: RiskTier,
    pub allowed: bool,
    pub quota_denied: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitBreakerState {
    pub window: Vec<WindowEvent>,
    pub tripped: bool,
    pub trip_reason: Option<String>,
    pub thresholds: BreakerThresholds,
}

impl CircuitBreakerState {
    pub fn new(thresholds: BreakerThresholds) -> Self {
        Self {
            window: Vec::new(),
            tripped: false,
            trip_reason: None,
            thresholds,
        }
    }

    fn prune(&mut self, now: f64) {
        let horizon = now - self.thresholds.window_seconds;
        self.window.retain(|e| e.at > horizon);
    }

    fn trip(&mut self, reason: String) {
        self.tripped = true;
        self.trip_reason = Some(reason);
    }

    /// Manual reset: clears the trip and the window.
    pub fn reset(&mut self) {
        self.tripped = false;
        self.trip_reason = None;
        self.window.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confirmation {
    Granted,
    Withheld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionReason {
    Allowed,
    BreakerTripped,
    QuotaExceeded,
    ConfirmationRequired,
    PreviewRequired,
}

impl DecisionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionReason::Allowed => "allowed",
            DecisionReason::BreakerTripped => "breaker-tripped",
            DecisionReason::QuotaExceeded => "quota-exceeded",
            DecisionReason::ConfirmationRequired => "confirmation-required",
            DecisionReason::PreviewRequired => "preview-required",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorizationDecision {
    pub allow: bool,
    pub reason: DecisionReason,
    pub detail: String,
}

impl AuthorizationDecision {
    fn deny(reason: DecisionReason, detail: impl Into<String>) -> Self {
        Self {
            allow: false,
            reason,
            detail: detail.into(),
        }
    }
}

/// The gate. Every decision lands in the breaker window. A tripped breaker
/// denies every tier until reset.
pub fn authorize(
    preview: &ExecutionPreview,
    quota: &Quota,
    breaker: &mut CircuitBreakerState,
    confirmation: Confirmation,
    now: f64,
) -> AuthorizationDecision {
    breaker.prune(now);
    let cost = preview.estimated_cost.predicted_cpu_seconds;
    let mut event = WindowEvent {
        at: now,
        tier: preview.tier,
        allowed: false,
        quota_denied: false,
        cost,
    };
    let t = breaker.thresholds.clone();
    let decision = if breaker.tripped {
        AuthorizationDecision::deny(
            DecisionReason::BreakerTripped,
            breaker.trip_reason.clone().unwrap_or_default(),
        )
    } else if let Some(over) = quota.exceeded_by(&preview.estimated_cost) {
        event.quota_denied = true;
        let denials = breaker.window.iter().filter(|e| e.quota_denied).count() + 1;
        if denials >= t.max_denials_per_window {
            breaker.trip(format!("{denials} quota denials within {}s", t.window_seconds));
        }
        AuthorizationDecision::deny(DecisionReason::QuotaExceeded, over)
    } else if preview.tier == RiskTier::High
        && breaker.window.iter().filter(|e| e.tier == RiskTier::High).count() >= t.max_high_per_window
    {
        breaker.trip(format!("more than {} high-tier attempts within {}s", t.max_high_per_window, t.window_seconds));
        AuthorizationDecision::deny(DecisionReason::BreakerTripped, breaker.trip_reason.clone().unwrap_or_default())
    } else if breaker.window.iter().filter(|e| e.allowed).map(|e| e.cost).sum::<f64>() + cost > t.max_cost_per_window {
        breaker.trip(format!("window cost above {:.1}s", t.max_cost_per_window));
        AuthorizationDecision::deny(DecisionReason::BreakerTripped, breaker.trip_reason.clone().unwrap_or_default())
    } else if preview.tier == RiskTier::High && confirmation == Confirmation::Withheld {
        AuthorizationDecision::deny(DecisionReason::ConfirmationRequired, "high-tier call needs explicit approval")
    } else if preview.tier != RiskTier::Low && !preview.surfaced {
        AuthorizationDecision::deny(DecisionReason::PreviewRequired, "no execution preview was surfaced")
    } else {
        AuthorizationDecision {
            allow: true,
            reason: DecisionReason::Allowed,
            detail: String::new(),
        }
    };
    event.allowed = decision.allow;
    breaker.window.push(event);
    decision
}

pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary epoch.
    fn now(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    }
}

/// Clock advanced by hand, for tests and deterministic replays.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<Mutex<f64>>);

impl ManualClock {
    pub fn new(start: f64) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, seconds: f64) {
        *self.0.lock().expect("clock lock") += seconds;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogKind {
    Preview,
    Decision,
    Execution,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: f64,
    pub kind: LogKind,
    #[serde(default)]
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<RiskTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<DecisionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<ExecutionPreview>,
}

/// Append-only; mirrored to a JSONL file when a path is set.
#[derive(Debug, Default)]
pub struct DecisionLog {
    entries: Vec<LogEntry>,
    path: Option<PathBuf>,
}

impl DecisionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Self {
        Self {
            entries: Vec::new(),
            path: Some(path.to_path_buf()),
        }
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    fn append(&mut self, mut entry: LogEntry) -> std::io::Result<u64> {
        entry.seq = self.entries.len() as u64 + 1;
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            writeln!(file, "{line}")?;
        }
        let seq = entry.seq;
        self.entries.push(entry);
        Ok(seq)
    }

    pub fn load(path: &Path) -> std::io::Result<Vec<LogEntry>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
            .collect()
    }
}

/// The single serialized authority over previews, decisions and executions.
/// Share it behind a mutex.
pub struct Governor {
    pub quota: Quota,
    pub breaker: CircuitBreakerState,
    pub history: CostHistory,
    pre_granted: BTreeSet<String>,
    undo: BTreeMap<String, BTreeSet<SideEffect>>,
    log: DecisionLog,
    clock: Box<dyn Clock>,
    next_preview: u64,
}

impl std::fmt::Debug for Governor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Governor")
            .field("tripped", &self.breaker.tripped)
            .field("log_entries", &self.log.entries.len())
            .finish()
    }
}

impl Governor {
    pub fn new(policy: &SecurityPolicy, log: DecisionLog, clock: Box<dyn Clock>) -> Self {
        Self {
            quota: policy.quota.clone(),
            breaker: CircuitBreakerState::new(policy.thresholds.clone()),
            history: CostHistory::default(),
            pre_granted: policy.pre_granted.clone(),
            undo: policy.undo.clone(),
            log,
            clock,
            next_preview: 1,
        }
    }

    pub fn is_pre_granted(&self, tool: &str) -> bool {
        self.pre_granted.contains(tool)
    }

    pub fn log(&self) -> &DecisionLog {
        &self.log
    }

    /// Tier, estimate and preview for a prospective call (not yet surfaced).
    pub fn prepare(&self, endpoint: &ToolEndpoint, arguments: &Map<String, Value>) -> ExecutionPreview {
        let tier = classify_risk(endpoint).tier;
        let estimate = estimate_cost(endpoint, arguments, &self.history);
        build_preview(endpoint, tier, arguments, estimate, self.undo.get(&endpoint.tool_name))
    }

    /// Persist the preview to the log; only then does it count as surfaced.
    pub fn surface(&mut self, mut preview: ExecutionPreview) -> std::io::Result<ExecutionPreview> {
        preview.id = self.next_preview;
        self.next_preview += 1;
        preview.surfaced = true;
        self.log.append(LogEntry {
            seq: 0,
            at: self.clock.now(),
            kind: LogKind::Preview,
            tool: preview.endpoint.clone(),
            tier: Some(preview.tier),
            preview_id: Some(preview.id),
            allow: None,
            reason: None,
            ok: None,
            preview: Some(preview.clone()),
        })?;
        Ok(preview)
    }

    pub fn authorize(&mut self, preview: &ExecutionPreview, confirmation: Confirmation) -> AuthorizationDecision {
        let confirmation = if self.pre_granted.contains(&preview.endpoint) {
            Confirmation::Granted
        } else {
            confirmation
        };
        let now = self.clock.now();
        let decision = authorize(preview, &self.quota, &mut self.breaker, confirmation, now);
        let _ = self.log.append(LogEntry {
            seq: 0,
            at: now,
            kind: LogKind::Decision,
            tool: preview.endpoint.clone(),
            tier: Some(preview.tier),
            preview_id: (preview.id > 0).then_some(preview.id),
            allow: Some(decision.allow),
            reason: Some(decision.reason),
            ok: None,
            preview: None,
        });
        decision
    }

    /// The only path to execution: authorize, run, record.
    pub fn execute<T>(
        &mut self,
        preview: &ExecutionPreview,
        confirmation: Confirmation,
        run: impl FnOnce() -> (T, bool),
    ) -> Result<T, AuthorizationDecision> {
        let decision = self.authorize(preview, confirmation);
        if !decision.allow {
            return Err(decision);
        }
        let started = std::time::Instant::now();
        let (value, ok) = run();
        self.history.record(&preview.endpoint, started.elapsed().as_secs_f64());
        let _ = self.log.append(LogEntry {
            seq: 0,
            at: self.clock.now(),
            kind: LogKind::Execution,
            tool: preview.endpoint.clone(),
            tier: Some(preview.tier),
            preview_id: (preview.id > 0).then_some(preview.id),
            allow: None,
            reason: None,
            ok: Some(ok),
            preview: None,
        });
        Ok(value)
    }

    pub fn reset(&mut self) {
        self.breaker.reset();
        let _ = self.log.append(LogEntry {
            seq: 0,
            at: self.clock.now(),
            kind: LogKind::Reset,
            tool: String::new(),
            tier: None,
            preview_id: None,
            allow: None,
            reason: None,
            ok: None,
            preview: None,
        });
    }
}
