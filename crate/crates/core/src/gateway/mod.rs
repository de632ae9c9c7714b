//! Single entry point for every model call.
//!
//! All agent steps talk to a [`Gateway`]. In replay mode the gateway answers
//! from a frozen [`Transcript`] keyed by a content hash of the request, so the
//! whole pipeline is a pure function of its inputs. Live mode forwards to a
//! [`CompletionBackend`]; record mode does the same and appends every new
//! answer to the transcript file.

mod backend;
mod extract;
mod schema;
mod transcript;

pub use backend::{CompletionBackend, HttpBackend, HttpBackendConfig, Reply, ScriptedBackend};
pub use extract::extract_json;
pub use schema::{is_registered, registered_schema_ids, validate_against, StructuredOutput};
pub use transcript::{Provenance, Transcript, TranscriptEntry};

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// What a model call is for. Closed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PurposeTag {
    TopicExtraction,
    RepoEvaluation,
    CodeReport,
    BundleGeneration,
    ImportRepair,
    FailureReview,
    Planning,
}

impl PurposeTag {
    pub const ALL: [PurposeTag; 7] = [
        PurposeTag::TopicExtraction,
        PurposeTag::RepoEvaluation,
        PurposeTag::CodeReport,
        PurposeTag::BundleGeneration,
        PurposeTag::ImportRepair,
        PurposeTag::FailureReview,
        PurposeTag::Planning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PurposeTag::TopicExtraction => "topic-extraction",
            PurposeTag::RepoEvaluation => "repo-evaluation",
            PurposeTag::CodeReport => "code-report",
            PurposeTag::BundleGeneration => "bundle-generation",
            PurposeTag::ImportRepair => "import-repair",
            PurposeTag::FailureReview => "failure-review",
            PurposeTag::Planning => "planning",
        }
    }
}

impl std::fmt::Display for PurposeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PurposeTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PurposeTag::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown purpose tag `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub purpose: PurposeTag,
    pub system_text: String,
    pub user_text: String,
    pub schema_id: String,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(
        purpose: PurposeTag,
        schema_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        Self {
            purpose,
            system_text: system_text.into(),
            user_text: user_text.into(),
            schema_id: schema_id.into(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if !is_registered(&self.schema_id) {
            return Err(GatewayError::UnknownSchema(self.schema_id.clone()));
        }
        Ok(())
    }
}

/// Content hash of a canonicalized request.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranscriptKey(pub String);

impl std::fmt::Display for TranscriptKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Stable key over (purpose, system text, user text, schema id). Temperature
/// is deliberately left out so replay does not depend on sampling settings.
pub fn transcript_key(request: &PromptRequest) -> TranscriptKey {
    let canonical = serde_json::to_string(&(
        request.purpose.as_str(),
        &request.system_text,
        &request.user_text,
        &request.schema_id,
    ))
    .expect("tuple of strings serializes");
    TranscriptKey(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub parsed: Option<serde_json::Value>,
    pub backend: BackendKind,
    pub transcript_key: TranscriptKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayMode {
    Live,
    #[default]
    Replay,
    Record,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "replay" => Ok(GatewayMode::Replay),
            "record" => Ok(GatewayMode::Record),
            other => Err(format!("unknown gateway mode `{other}` (live|replay|record)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("schema `{0}` is not registered")]
    UnknownSchema(String),
    #[error("replay miss for {purpose} request {key}")]
    ReplayMiss { key: TranscriptKey, purpose: PurposeTag },
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("output does not satisfy schema `{schema}`: {detail}")]
    SchemaViolation { schema: String, detail: String },
    #[error("transcript error: {0}")]
    Transcript(String),
}

impl GatewayError {
    /// Errors that come from the harness (missing recordings, unreachable
    /// backends) rather than from a bad model answer.
    pub fn is_infrastructure(&self) -> bool {
        matches!(
            self,
            GatewayError::ReplayMiss { .. }
                | GatewayError::BackendUnreachable(_)
                | GatewayError::Transcript(_)
                | GatewayError::UnknownSchema(_)
                | GatewayError::InvalidRequest(_)
        )
    }
}

/// One entry of the in-memory call log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub purpose: PurposeTag,
    pub key: TranscriptKey,
    pub backend: BackendKind,
}

pub struct Gateway {
    mode: GatewayMode,
    transcript: RwLock<Transcript>,
    record_path: Option<PathBuf>,
    backend: Option<Arc<dyn CompletionBackend>>,
    calls: Mutex<Vec<CallRecord>>,
    append_lock: Mutex<()>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("mode", &self.mode).finish()
    }
}

impl Gateway {
    pub fn replay(transcript: Transcript) -> Self {
        Self::build(GatewayMode::Replay, transcript, None, None)
    }

    pub fn replay_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::replay(Transcript::load(path)?))
    }

    pub fn live(backend: Arc<dyn CompletionBackend>) -> Self {
        Self::build(GatewayMode::Live, Transcript::default(), None, Some(backend))
    }

    /// Live calls whose answers are appended to `path`. Entries already in the
    /// file are served without calling the backend.
    pub fn recording(
        backend: Arc<dyn CompletionBackend>,
        path: &Path,
        provenance: Provenance,
    ) -> Result<Self, GatewayError> {
        let transcript = if path.exists() {
            Transcript::load(path)?
        } else {
            let t = Transcript::new(provenance);
            t.save(path)?;
            t
        };
        Ok(Self::build(
            GatewayMode::Record,
            transcript,
            Some(path.to_path_buf()),
            Some(backend),
        ))
    }

    fn build(
        mode: GatewayMode,
        transcript: Transcript,
        record_path: Option<PathBuf>,
        backend: Option<Arc<dyn CompletionBackend>>,
    ) -> Self {
        Self {
            mode,
            transcript: RwLock::new(transcript),
            record_path,
            backend,
            calls: Mutex::new(Vec::new()),
            append_lock: Mutex::new(()),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let key = transcript_key(request);

        let (raw_text, backend) = match self.mode {
            GatewayMode::Replay => {
                let transcript = self.transcript.read().expect("transcript lock");
                match transcript.get(&key) {
                    Some(entry) => (entry.text.clone(), BackendKind::Replay),
                    None => {
                        return Err(GatewayError::ReplayMiss {
                            key,
                            purpose: request.purpose,
                        })
                    }
                }
            }
            GatewayMode::Live => (self.call_backend(request)?, BackendKind::Live),
            GatewayMode::Record => {
                let cached = self
                    .transcript
                    .read()
                    .expect("transcript lock")
                    .get(&key)
                    .map(|e| e.text.clone());
                match cached {
                    Some(text) => (text, BackendKind::Replay),
                    None => {
                        let text = self.call_backend(request)?;
                        self.append(&key, request.purpose, &text)?;
                        (text, BackendKind::Live)
                    }
                }
            }
        };

        self.calls.lock().expect("call log").push(CallRecord {
            purpose: request.purpose,
            key: key.clone(),
            backend,
        });

        let parsed = extract_json(&raw_text)
            .into_iter()
            .find(|candidate| validate_against(&request.schema_id, candidate).is_ok());
        Ok(CompletionResult {
            raw_text,
            parsed,
            backend,
            transcript_key: key,
        })
    }

    fn call_backend(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| GatewayError::BackendUnreachable("no live backend configured".into()))?;
        backend.complete(request)
    }

    fn append(&self, key: &TranscriptKey, purpose: PurposeTag, text: &str) -> Result<(), GatewayError> {
        let _guard = self.append_lock.lock().expect("append lock");
        let entry = TranscriptEntry {
            key: key.clone(),
            purpose,
            text: text.to_string(),
        };
        if let Some(path) = &self.record_path {
            Transcript::append_entry(path, &entry)?;
        }
        self.transcript.write().expect("transcript lock").insert(entry);
        Ok(())
    }

    /// Decode a completion into `T`. On failure, one reformat request is sent
    /// through [`Gateway::complete`] before giving up.
    pub fn parse_structured<T: StructuredOutput>(
        &self,
        result: &CompletionResult,
        request: &PromptRequest,
    ) -> Result<T, GatewayError> {
        if !is_registered(T::SCHEMA_ID) {
            return Err(GatewayError::UnknownSchema(T::SCHEMA_ID.to_string()));
        }
        let first_error = match decode::<T>(&result.raw_text) {
            Ok(value) => return Ok(value),
            Err(detail) => detail,
        };

        let retry = PromptRequest::new(
            request.purpose,
            T::SCHEMA_ID,
            format!(
                "Reformat the previous answer as a single JSON document matching schema `{}`. \
                 Output only the JSON.",
                T::SCHEMA_ID
            ),
            format!(
                "Previous answer:\n{}\n\nProblem: {}",
                result.raw_text, first_error
            ),
        );
        let second = match self.complete(&retry) {
            Ok(second) => second,
            Err(err) if err.is_infrastructure() && self.mode == GatewayMode::Replay => {
                // No recorded reformat: the original failure is the answer.
                return Err(GatewayError::SchemaViolation {
                    schema: T::SCHEMA_ID.to_string(),
                    detail: first_error,
                });
            }
            Err(err) => return Err(err),
        };
        decode::<T>(&second.raw_text).map_err(|detail| GatewayError::SchemaViolation {
            schema: T::SCHEMA_ID.to_string(),
            detail,
        })
    }

    /// Build a request for `T`, complete it and decode the answer.
    pub fn ask<T: StructuredOutput>(
        &self,
        purpose: PurposeTag,
        system_text: &str,
        user_text: &str,
    ) -> Result<T, GatewayError> {
        let request = PromptRequest::new(purpose, T::SCHEMA_ID, system_text, user_text);
        let result = self.complete(&request)?;
        self.parse_structured(&result, &request)
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log").clone()
    }

    pub fn calls_for(&self, purpose: PurposeTag) -> usize {
        self.calls
            .lock()
            .expect("call log")
            .iter()
            .filter(|c| c.purpose == purpose)
            .count()
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.read().expect("transcript lock").clone()
    }
}

fn decode<T: StructuredOutput>(raw: &str) -> Result<T, String> {
    let candidates = extract_json(raw);
    if candidates.is_empty() {
        return Err("no JSON document found in the answer".into());
    }
    let mut last = String::new();
    for candidate in candidates {
        match serde_json::from_value::<T>(candidate) {
            Ok(value) => match value.check() {
                Ok(()) => return Ok(value),
                Err(e) => last = e,
            },
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::TopicDraft;

    fn request(user: &str) -> PromptRequest {
        PromptRequest::new(PurposeTag::TopicExtraction, TopicDraft::SCHEMA_ID, "sys", user)
    }

    fn replay_with(req: &PromptRequest, text: &str) -> Gateway {
        let mut t = Transcript::new(Provenance::hand_authored());
        t.insert(TranscriptEntry {
            key: transcript_key(req),
            purpose: req.purpose,
            text: text.to_string(),
        });
        Gateway::replay(t)
    }

    #[test]
    fn empty_prompt_is_rejected_before_lookup() {
        let gw = Gateway::replay(Transcript::default());
        let err = gw.complete(&request("   ")).unwrap_err();
        assert!(matches!(err, GatewayError::EmptyPrompt));
    }

    #[test]
    fn replay_is_byte_identical() {
        let req = request("analyze stroke risk factors");
        let gw = replay_with(&req, "{\"keywords\": [\"stroke\"]}");
        let a = gw.complete(&req).unwrap();
        let b = gw.complete(&req).unwrap();
        assert_eq!(a.raw_text, b.raw_text);
        assert_eq!(a.backend, BackendKind::Replay);
        assert!(a.parsed.is_some());
    }

    #[test]
    fn replay_miss_is_reported() {
        let gw = Gateway::replay(Transcript::default());
        let err = gw.complete(&request("anything")).unwrap_err();
        assert!(matches!(err, GatewayError::ReplayMiss { .. }));
        assert!(err.is_infrastructure());
    }

    #[test]
    fn key_ignores_temperature() {
        let a = request("q");
        let mut b = a.clone();
        b.temperature = 0.9;
        assert_eq!(transcript_key(&a), transcript_key(&b));
        assert_eq!(transcript_key(&a), transcript_key(&a.clone()));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let gw = Gateway::replay(Transcript::default());
        let req = PromptRequest::new(PurposeTag::Planning, "no-such-schema", "s", "u");
        assert!(matches!(gw.complete(&req), Err(GatewayError::UnknownSchema(_))));
    }

    #[test]
    fn parse_structured_extracts_fenced_block() {
        let req = request("q");
        let wrapped = "Sure! Here it is:\n```json\n{\"keywords\": [\"pca\", \"clustering\"]}\n```\nHope this helps.";
        let gw = replay_with(&req, wrapped);
        let result = gw.complete(&req).unwrap();
        let draft: TopicDraft = gw.parse_structured(&result, &req).unwrap();
        assert_eq!(draft.keywords, vec!["pca", "clustering"]);
    }

    #[test]
    fn parse_structured_refusal_is_schema_violation() {
        let req = request("q");
        let gw = replay_with(&req, "I cannot help");
        let result = gw.complete(&req).unwrap();
        assert!(result.parsed.is_none());
        let err = gw.parse_structured::<TopicDraft>(&result, &req).unwrap_err();
        assert!(matches!(err, GatewayError::SchemaViolation { .. }));
    }

    #[test]
    fn reformat_retry_is_used_once() {
        let backend = Arc::new(ScriptedBackend::new());
        backend.push(PurposeTag::TopicExtraction, Reply::text("not json at all"));
        backend.push(PurposeTag::TopicExtraction, Reply::text("{\"keywords\": [\"ok\"]}"));
        let gw = Gateway::live(backend.clone());
        let draft: TopicDraft = gw.ask(PurposeTag::TopicExtraction, "s", "u").unwrap();
        assert_eq!(draft.keywords, vec!["ok"]);
        assert_eq!(gw.calls_for(PurposeTag::TopicExtraction), 2);

        backend.push(PurposeTag::TopicExtraction, Reply::text("nope"));
        backend.push(PurposeTag::TopicExtraction, Reply::text("still nope"));
        backend.push(PurposeTag::TopicExtraction, Reply::text("{\"keywords\": [\"late\"]}"));
        let err = gw.ask::<TopicDraft>(PurposeTag::TopicExtraction, "s", "u2").unwrap_err();
        assert!(matches!(err, GatewayError::SchemaViolation { .. }));
    }

    #[test]
    fn record_mode_appends_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let backend = Arc::new(ScriptedBackend::new());
        backend.push(PurposeTag::TopicExtraction, Reply::text("{\"keywords\": [\"a\"]}"));
        let gw = Gateway::recording(backend, &path, Provenance::hand_authored()).unwrap();
        let req = request("record me");
        let live = gw.complete(&req).unwrap();
        assert_eq!(live.backend, BackendKind::Live);
        // Served from the transcript the second time; the script is empty now.
        let again = gw.complete(&req).unwrap();
        assert_eq!(again.backend, BackendKind::Replay);

        let replay = Gateway::replay_file(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap().raw_text, live.raw_text);
    }
}
