//! Registered tools across finalized bundles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::generator::{ServiceBundle, ToolEndpoint, ToolParameter};
use crate::security::{classify_risk, RiskTier, SecurityReport};

use super::{LaunchSpec, RuntimeError};

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    /// Unique across the registry; may carry a service prefix.
    pub tool_name: String,
    /// Name inside the service.
    pub service_tool: String,
    pub description: String,
    pub input_schema: Value,
    pub service: String,
    pub tier: RiskTier,
    pub endpoint: ToolEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredService {
    pub service: String,
    pub dir: PathBuf,
    pub launch: LaunchSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub services: BTreeMap<String, RegisteredService>,
    pub tools: BTreeMap<String, ToolDescriptor>,
}

fn json_type(wire: &str) -> Value {
    match wire {
        "integer" => json!({"type": "integer"}),
        "real" => json!({"type": "number"}),
        "boolean" => json!({"type": "boolean"}),
        "list-of-text" => json!({"type": "array", "items": {"type": "string"}}),
        "opaque-file-path" => json!({"type": "string", "format": "path"}),
        _ => json!({"type": "string"}),
    }
}

/// JSON schema for the parameters, matching what the generated server lists.
pub fn input_schema(parameters: &[ToolParameter]) -> Value {
    let mut props = Map::new();
    for p in parameters {
        let mut schema = json_type(&p.wire_type);
        schema["x-wire-type"] = json!(p.wire_type);
        props.insert(p.name.clone(), schema);
    }
    let required: Vec<&str> = parameters.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
    json!({"type": "object", "properties": props, "required": required})
}

impl Registry {
    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuntimeError::Registry(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| RuntimeError::Registry(format!("{}: {e}", path.display())))
    }

    /// The registry at `path`, or an empty one when the file does not exist.
    pub fn load_or_default(path: &Path) -> Result<Self, RuntimeError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        crate::write_versioned_json(path, self).map_err(|e| RuntimeError::Registry(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn descriptor(&self, tool: &str) -> Option<&ToolDescriptor> {
        self.tools.get(tool)
    }

    /// One line per tool for planning prompts.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for d in self.tools.values() {
            let params: Vec<String> = d
                .endpoint
                .parameters
                .iter()
                .map(|p| format!("{}: {}{}", p.name, p.wire_type, if p.required { "" } else { "?" }))
                .collect();
            out.push_str(&format!(
                "- {}({}) [{} tier]: {}\n",
                d.tool_name,
                params.join(", "),
                d.tier.as_str(),
                d.description
            ));
        }
        out
    }

    /// Register a finalized bundle directory. The directory must hold a
    /// security report without unwaived blocking findings.
    pub fn register_bundle(&mut self, dir: &Path) -> Result<Vec<ToolDescriptor>, RuntimeError> {
        let report = SecurityReport::load(&dir.join("security_report.json"))
            .map_err(|_| RuntimeError::UnscannedBundle(format!("{} has no security report", dir.display())))?;
        if !report.is_clear() {
            return Err(RuntimeError::UnscannedBundle(format!(
                "{} has {} unwaived blocking findings",
                dir.display(),
                report.unwaived_blocking().len()
            )));
        }
        let bundle = ServiceBundle::load(dir).map_err(|e| RuntimeError::Registry(format!("{}: {e}", dir.display())))?;
        let launch_text = std::fs::read_to_string(dir.join("launch.json"))
            .map_err(|e| RuntimeError::Registry(format!("{}: launch.json: {e}", dir.display())))?;
        let mut launch: LaunchSpec =
            serde_json::from_str(&launch_text).map_err(|e| RuntimeError::Registry(format!("launch.json: {e}")))?;
        launch.bundle_dir = dir.to_path_buf();
        let service = bundle.manifest.service_name.clone();

        // Re-registration replaces the service's previous tools.
        self.tools.retain(|_, d| d.service != service);
        let mut next = self.tools.clone();
        let mut added = Vec::new();
        for endpoint in &bundle.manifest.endpoints {
            let mut name = endpoint.tool_name.clone();
            if let Some(existing) = next.get(&name).cloned() {
                // Both sides move under their service prefix.
                next.remove(&name);
                let renamed = format!("{}_{}", existing.service, existing.service_tool);
                if next.contains_key(&renamed) {
                    return Err(RuntimeError::CollisionUnresolvable(renamed));
                }
                next.insert(renamed.clone(), ToolDescriptor { tool_name: renamed, ..existing });
                name = format!("{service}_{}", endpoint.tool_name);
            } else if self.tools.values().any(|d| d.service != service && d.service_tool == name) {
                name = format!("{service}_{}", endpoint.tool_name);
            }
            if next.contains_key(&name) {
                return Err(RuntimeError::CollisionUnresolvable(name));
            }
            let descriptor = ToolDescriptor {
                tool_name: name.clone(),
                service_tool: endpoint.tool_name.clone(),
                description: endpoint.description.clone(),
                input_schema: input_schema(&endpoint.parameters),
                service: service.clone(),
                tier: classify_risk(endpoint).tier,
                endpoint: endpoint.clone(),
            };
            next.insert(name, descriptor.clone());
            added.push(descriptor);
        }
        self.tools = next;
        self.services.insert(
            service.clone(),
            RegisteredService {
                service,
                dir: dir.to_path_buf(),
                launch,
            },
        );
        // Report the final names of the new tools (a later collision in the
        // same bundle cannot rename them, names within a bundle are unique).
        Ok(added
            .into_iter()
            .map(|d| {
                self.tools
                    .values()
                    .find(|t| t.service == d.service && t.service_tool == d.service_tool)
                    .cloned()
                    .unwrap_or(d)
            })
            .collect())
    }
}
