//! Turn Python repositories into MCP tool services.
//!
//! The pipeline runs search, clone and analysis, environment provisioning,
//! bundle generation and a bounded review/repair loop, then packages and
//! serves the result under a risk-tiered governor. Every model call goes
//! through [`gateway::Gateway`], which can replay frozen transcripts, so the
//! whole pipeline is deterministic under test.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod env;
pub mod fixtures;
pub mod gateway;
pub mod generator;
pub mod pipeline;
pub mod process;
pub mod python;
pub mod runtime;
pub mod search;
pub mod security;
pub mod verify;

use std::path::Path;

use serde::Serialize;

/// Version stamped into every JSON report this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Pretty JSON with a trailing newline. Objects get a `schema_version` field.
pub fn write_versioned_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut json = serde_json::to_value(value).map_err(std::io::Error::other)?;
    if let serde_json::Value::Object(map) = &mut json {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    write_json(path, &json)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
