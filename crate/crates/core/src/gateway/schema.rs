use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::analysis::CodeReportDraft;
use crate::generator::{BundleDraft, RepairPlan};
use crate::runtime::InvocationPlan;
use crate::verify::ImportRepairDraft;
use crate::search::{EvaluationReport, RefinedQuery, TopicDraft};

/// A typed model output with a registered schema id.
pub trait StructuredOutput: DeserializeOwned + Serialize {
    const SCHEMA_ID: &'static str;

    /// Invariants beyond what deserialization enforces.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

type Validator = fn(&Value) -> Result<(), String>;

fn validate_as<T: StructuredOutput>(value: &Value) -> Result<(), String> {
    let typed: T = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    typed.check()
}

fn registry() -> [(&'static str, Validator); 8] {
    [
        (TopicDraft::SCHEMA_ID, validate_as::<TopicDraft>),
        (RefinedQuery::SCHEMA_ID, validate_as::<RefinedQuery>),
        (EvaluationReport::SCHEMA_ID, validate_as::<EvaluationReport>),
        (CodeReportDraft::SCHEMA_ID, validate_as::<CodeReportDraft>),
        (BundleDraft::SCHEMA_ID, validate_as::<BundleDraft>),
        (RepairPlan::SCHEMA_ID, validate_as::<RepairPlan>),
        (ImportRepairDraft::SCHEMA_ID, validate_as::<ImportRepairDraft>),
        (InvocationPlan::SCHEMA_ID, validate_as::<InvocationPlan>),
    ]
}

pub fn registered_schema_ids() -> Vec<&'static str> {
    registry().iter().map(|(id, _)| *id).collect()
}

pub fn is_registered(schema_id: &str) -> bool {
    registry().iter().any(|(id, _)| *id == schema_id)
}

pub fn validate_against(schema_id: &str, value: &Value) -> Result<(), String> {
    match registry().iter().find(|(id, _)| *id == schema_id) {
        Some((_, validate)) => validate(value),
        None => Err(format!("schema `{schema_id}` is not registered")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_ids_are_unique() {
        let mut ids = registered_schema_ids();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }
}
