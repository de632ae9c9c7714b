//! Run configuration. Layers, strongest first: command-line flags,
//! `TOOLSMITH_*` environment variables, the TOML config file, defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, PackageIndex};
use crate::gateway::GatewayMode;
use crate::search::{DEFAULT_K, DEFAULT_M};
use crate::security::{Quota, SecurityPolicy};
use crate::verify::{DEFAULT_MAX_ROUNDS, TEST_TIMEOUT};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

/// One configuration layer; unset fields fall through to weaker layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialConfig {
    pub workspace_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub gateway_mode: Option<GatewayMode>,
    pub transcript: Option<PathBuf>,
    pub search_k: Option<usize>,
    pub topic_cap: Option<usize>,
    pub max_rounds: Option<usize>,
    pub security_policy: Option<PathBuf>,
    pub quota: Option<Quota>,
    pub parallelism: Option<usize>,
    pub test_timeout_secs: Option<u64>,
    /// `default`, an index URL, or `local:<dir>[:<dir>...]`.
    pub package_index: Option<String>,
    pub runtime_search_paths: Option<Vec<PathBuf>>,
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Read `TOOLSMITH_<FIELD>` variables from `vars`.
    pub fn from_env(vars: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        fn get<T: std::str::FromStr>(vars: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            match vars.get(key) {
                None => Ok(None),
                Some(v) => v.parse().map(Some).map_err(|e: T::Err| invalid(key, e.to_string())),
            }
        }
        Ok(Self {
            workspace_root: get(vars, "TOOLSMITH_WORKSPACE_ROOT")?,
            output_root: get(vars, "TOOLSMITH_OUTPUT_ROOT")?,
            gateway_mode: get(vars, "TOOLSMITH_GATEWAY_MODE")?,
            transcript: get(vars, "TOOLSMITH_TRANSCRIPT")?,
            search_k: get(vars, "TOOLSMITH_SEARCH_K")?,
            topic_cap: get(vars, "TOOLSMITH_TOPIC_CAP")?,
            max_rounds: get(vars, "TOOLSMITH_MAX_ROUNDS")?,
            security_policy: get(vars, "TOOLSMITH_SECURITY_POLICY")?,
            quota: None,
            parallelism: get(vars, "TOOLSMITH_PARALLELISM")?,
            test_timeout_secs: get(vars, "TOOLSMITH_TEST_TIMEOUT_SECS")?,
            package_index: get(vars, "TOOLSMITH_PACKAGE_INDEX")?,
            runtime_search_paths: vars
                .get("TOOLSMITH_RUNTIME_SEARCH_PATHS")
                .map(|v| std::env::split_paths(v).collect()),
        })
    }

    /// Fields set in `self` win over `weaker`.
    pub fn over(self, weaker: PartialConfig) -> PartialConfig {
        PartialConfig {
            workspace_root: self.workspace_root.or(weaker.workspace_root),
            output_root: self.output_root.or(weaker.output_root),
            gateway_mode: self.gateway_mode.or(weaker.gateway_mode),
            transcript: self.transcript.or(weaker.transcript),
            search_k: self.search_k.or(weaker.search_k),
            topic_cap: self.topic_cap.or(weaker.topic_cap),
            max_rounds: self.max_rounds.or(weaker.max_rounds),
            security_policy: self.security_policy.or(weaker.security_policy),
            quota: self.quota.or(weaker.quota),
            parallelism: self.parallelism.or(weaker.parallelism),
            test_timeout_secs: self.test_timeout_secs.or(weaker.test_timeout_secs),
            package_index: self.package_index.or(weaker.package_index),
            runtime_search_paths: self.runtime_search_paths.or(weaker.runtime_search_paths),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workspace_root: PathBuf,
    pub output_root: PathBuf,
    pub gateway_mode: GatewayMode,
    pub transcript: Option<PathBuf>,
    pub search_k: usize,
    pub topic_cap: usize,
    pub max_rounds: usize,
    pub security_policy: Option<PathBuf>,
    pub quota: Option<Quota>,
    pub parallelism: usize,
    pub test_timeout_secs: u64,
    pub package_index: PackageIndex,
    pub runtime_search_paths: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workspace_root: PathBuf::from("toolsmith-work"),
            output_root: PathBuf::from("toolsmith-out"),
            gateway_mode: GatewayMode::Replay,
            transcript: None,
            search_k: DEFAULT_K,
            topic_cap: DEFAULT_M,
            max_rounds: DEFAULT_MAX_ROUNDS,
            security_policy: None,
            quota: None,
            parallelism: 1,
            test_timeout_secs: TEST_TIMEOUT.as_secs(),
            package_index: PackageIndex::Default,
            runtime_search_paths: Vec::new(),
        }
    }
}

pub fn parse_index(raw: &str) -> Result<PackageIndex, ConfigError> {
    if raw == "default" {
        Ok(PackageIndex::Default)
    } else if let Some(dirs) = raw.strip_prefix("local:") {
        Ok(PackageIndex::Local(std::env::split_paths(dirs).collect()))
    } else if raw.starts_with("http://") || raw.starts_with("https://") || raw.starts_with("file://") {
        Ok(PackageIndex::Url(raw.to_string()))
    } else {
        Err(invalid("package_index", format!("`{raw}` is not `default`, a URL or `local:<dir>`")))
    }
}

impl RunConfig {
    /// Merge the layers over the defaults and validate. Does not touch the
    /// file system; see [`RunConfig::prepare_roots`].
    pub fn resolve(flags: PartialConfig, env: PartialConfig, file: PartialConfig) -> Result<Self, ConfigError> {
        let merged = flags.over(env).over(file);
        let d = RunConfig::default();
        let config = RunConfig {
            workspace_root: merged.workspace_root.unwrap_or(d.workspace_root),
            output_root: merged.output_root.unwrap_or(d.output_root),
            gateway_mode: merged.gateway_mode.unwrap_or(d.gateway_mode),
            transcript: merged.transcript,
            search_k: merged.search_k.unwrap_or(d.search_k),
            topic_cap: merged.topic_cap.unwrap_or(d.topic_cap),
            max_rounds: merged.max_rounds.unwrap_or(d.max_rounds),
            security_policy: merged.security_policy,
            quota: merged.quota,
            parallelism: merged.parallelism.unwrap_or(d.parallelism),
            test_timeout_secs: merged.test_timeout_secs.unwrap_or(d.test_timeout_secs),
            package_index: match merged.package_index {
                Some(raw) => parse_index(&raw)?,
                None => d.package_index,
            },
            runtime_search_paths: merged.runtime_search_paths.unwrap_or(d.runtime_search_paths),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.search_k < 1 {
            return Err(invalid("search_k", "must be at least 1"));
        }
        if self.topic_cap < 1 {
            return Err(invalid("topic_cap", "must be at least 1"));
        }
        if self.parallelism < 1 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        if self.test_timeout_secs < 1 {
            return Err(invalid("test_timeout_secs", "must be at least 1"));
        }
        if self.gateway_mode != GatewayMode::Live && self.transcript.is_none() {
            return Err(invalid("transcript", "replay and record modes need a transcript path"));
        }
        Ok(())
    }

    /// Create the workspace and output roots and check they are writable.
    pub fn prepare_roots(&self) -> Result<(), ConfigError> {
        for (key, root) in [("workspace_root", &self.workspace_root), ("output_root", &self.output_root)] {
            std::fs::create_dir_all(root).map_err(|e| invalid(key, format!("{}: {e}", root.display())))?;
            let probe = root.join(".toolsmith-write-probe");
            std::fs::write(&probe, b"").map_err(|e| invalid(key, format!("{} is not writable: {e}", root.display())))?;
            let _ = std::fs::remove_file(probe);
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            runtime_search_paths: self.runtime_search_paths.clone(),
            index: self.package_index.clone(),
            cache_dir: Some(self.workspace_root.join(".cache/pip")),
            ..EnvConfig::default()
        }
    }

    pub fn test_timeout(&self) -> Duration {
        Duration::from_secs(self.test_timeout_secs)
    }

    /// The policy file, or the default policy; a configured quota replaces the file's.
    pub fn security(&self) -> Result<SecurityPolicy, ConfigError> {
        let mut policy = match &self.security_policy {
            Some(path) => SecurityPolicy::load(path).map_err(|e| ConfigError::File {
                path: path.clone(),
                message: e.to_string(),
            })?,
            None => SecurityPolicy::default(),
        };
        if let Some(quota) = &self.quota {
            policy.quota = quota.clone();
        }
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay() -> PartialConfig {
        PartialConfig {
            transcript: Some("t.json".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_hold_k_m_and_rounds() {
        let c = RunConfig::resolve(PartialConfig::default(), PartialConfig::default(), replay()).unwrap();
        assert_eq!((c.search_k, c.topic_cap, c.max_rounds), (50, 5, 3));
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let file = PartialConfig {
            search_k: Some(10),
            topic_cap: Some(2),
            max_rounds: Some(1),
            ..replay()
        };
        let vars = BTreeMap::from([
            ("TOOLSMITH_SEARCH_K".to_string(), "20".to_string()),
            ("TOOLSMITH_TOPIC_CAP".to_string(), "3".to_string()),
        ]);
        let env = PartialConfig::from_env(&vars).unwrap();
        let flags = PartialConfig {
            search_k: Some(30),
            ..Default::default()
        };
        let c = RunConfig::resolve(flags, env, file).unwrap();
        assert_eq!((c.search_k, c.topic_cap, c.max_rounds), (30, 3, 1));
    }

    #[test]
    fn zero_k_is_rejected() {
        let flags = PartialConfig {
            search_k: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(flags, PartialConfig::default(), replay()).is_err());
    }

    #[test]
    fn bad_env_value_is_an_error() {
        let vars = BTreeMap::from([("TOOLSMITH_MAX_ROUNDS".to_string(), "many".to_string())]);
        assert!(PartialConfig::from_env(&vars).is_err());
    }

    #[test]
    fn index_forms() {
        assert_eq!(parse_index("default").unwrap(), PackageIndex::Default);
        assert_eq!(parse_index("local:/w").unwrap(), PackageIndex::Local(vec!["/w".into()]));
        assert!(matches!(parse_index("https://x/simple").unwrap(), PackageIndex::Url(_)));
        assert!(parse_index("ftp://x").is_err());
    }
}
