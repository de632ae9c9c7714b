//! Planning agent: straight-line invocation plans with variable bindings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::gateway::{Gateway, PurposeTag, StructuredOutput};
use crate::python::is_identifier;
use crate::search::UserQuery;

use super::{Registry, RuntimeError, SessionState};

/// An argument of the form `{"$ref": "var"}` or `{"$ref": "var", "path": ["k", 0]}`
/// reads a variable bound by an earlier step.
pub const REF_KEY: &str = "$ref";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binds_output_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationPlan {
    pub steps: Vec<PlanStep>,
    pub goal_summary: String,
}

impl StructuredOutput for InvocationPlan {
    const SCHEMA_ID: &'static str = "invocation-plan/v1";

    fn check(&self) -> Result<(), String> {
        for step in &self.steps {
            if step.tool.trim().is_empty() {
                return Err("plan step without a tool".into());
            }
            if let Some(var) = &step.binds_output_to {
                if !is_identifier(var) {
                    return Err(format!("`{var}` is not a valid variable name"));
                }
            }
        }
        Ok(())
    }
}

/// Variable name referenced by an argument value, if it is a reference.
pub fn reference(value: &Value) -> Option<&str> {
    value.as_object()?.get(REF_KEY)?.as_str()
}

/// Every tool registered, every reference bound earlier (or pre-bound), every
/// required parameter supplied and no unknown parameter.
pub fn validate_plan(plan: &InvocationPlan, registry: &Registry, prebound: &BTreeSet<String>) -> Result<(), RuntimeError> {
    let mut bound = prebound.clone();
    for (i, step) in plan.steps.iter().enumerate() {
        let descriptor = registry
            .descriptor(&step.tool)
            .ok_or_else(|| RuntimeError::UnknownTool(step.tool.clone()))?;
        let params = &descriptor.endpoint.parameters;
        for p in params.iter().filter(|p| p.required) {
            if !step.arguments.contains_key(&p.name) {
                return Err(RuntimeError::InvalidPlan(format!(
                    "step {} ({}) is missing required argument `{}`",
                    i + 1,
                    step.tool,
                    p.name
                )));
            }
        }
        for (name, value) in &step.arguments {
            if !params.iter().any(|p| &p.name == name) {
                return Err(RuntimeError::InvalidPlan(format!(
                    "step {} ({}) has unknown argument `{name}`",
                    i + 1,
                    step.tool
                )));
            }
            if let Some(var) = reference(value) {
                if !bound.contains(var) {
                    return Err(RuntimeError::UnboundVariable(var.to_string()));
                }
            }
        }
        if let Some(var) = &step.binds_output_to {
            bound.insert(var.clone());
        }
    }
    Ok(())
}

const PLANNING_SYSTEM: &str = "You are a planning agent. Pick tools from the registry and \
write a straight-line invocation plan that answers the user's request. A step may bind its \
result to a variable with binds_output_to; later steps use it as an argument value \
{\"$ref\": \"name\"} or {\"$ref\": \"name\", \"path\": [key or index, ...]}. Use only listed tools \
and their parameters. Answer with JSON {\"goal_summary\", \"steps\": [{\"tool\", \"arguments\", \
\"binds_output_to\"}]}.";

pub fn plan_invocation(gateway: &Gateway, query: &UserQuery, registry: &Registry) -> Result<InvocationPlan, RuntimeError> {
    if registry.is_empty() {
        return Err(RuntimeError::Precondition("the registry has no tools".into()));
    }
    let prompt = format!("Request: {}\n\nTools:\n{}", query.text, registry.digest());
    let plan: InvocationPlan = gateway.ask(PurposeTag::Planning, PLANNING_SYSTEM, &prompt)?;
    validate_plan(&plan, registry, &BTreeSet::new())?;
    Ok(plan)
}

/// Plan a follow-up inside a session; the plan may use the session's variables.
pub fn replan(
    gateway: &Gateway,
    session: &SessionState,
    sub_request: &UserQuery,
    registry: &Registry,
) -> Result<InvocationPlan, RuntimeError> {
    if session.history.is_empty() {
        return Err(RuntimeError::Precondition("replanning needs an earlier request in the session".into()));
    }
    if registry.is_empty() {
        return Err(RuntimeError::Precondition("the registry has no tools".into()));
    }
    let prompt = format!(
        "Original request: {}\n\nSession so far:\n{}\nAvailable variables: {}\n\nNew request: {}\n\nTools:\n{}",
        session.original_query.text,
        session.digest(),
        session.variables.keys().cloned().collect::<Vec<_>>().join(", "),
        sub_request.text,
        registry.digest()
    );
    let plan: InvocationPlan = gateway.ask(PurposeTag::Planning, PLANNING_SYSTEM, &prompt)?;
    let prebound: BTreeSet<String> = session.variables.keys().cloned().collect();
    validate_plan(&plan, registry, &prebound)?;
    Ok(plan)
}
