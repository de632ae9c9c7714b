//! Registry, planning agent, plan execution and the MCP serving layer.

mod client;
mod planning;
mod registry;
mod server;
mod session;

pub use client::{LaunchSpec, ServiceProcess, ToolResult};
pub use planning::{plan_invocation, reference, replan, validate_plan, InvocationPlan, PlanStep, REF_KEY};
pub use registry::{input_schema, RegisteredService, Registry, ToolDescriptor, REGISTRY_FILE};
#[cfg(unix)]
pub use server::serve_socket;
pub use server::{
    call_tool, handle_message, list_tools, serve_connection, serve_stdio, ServerHandle, ServerState, DEFAULT_RESULT_CAP,
    PROTOCOL_VERSION,
};
pub use session::{
    assemble_answer, cap_result, execute_plan, resolve_arguments, Confirmer, HistoryEntry, ServicePool, SessionState,
    StaticConfirmer, StepAbort, StepResult, ToolExecutor,
};

use crate::gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("cannot launch service: {0}")]
    Launch(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot bind transport: {0}")]
    TransportBind(String),
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("bundle was not cleared by the security scan: {0}")]
    UnscannedBundle(String),
    #[error("tool name collision cannot be resolved: {0}")]
    CollisionUnresolvable(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("unbound variable: {0}")]
    UnboundVariable(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[cfg(test)]
mod tests;
