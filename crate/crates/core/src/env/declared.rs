//! Runtime pins and dependency declarations read from repository files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_RUNTIME: &str = "3.10";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceOfTruth {
    RequirementsFile,
    ContainerFile,
    Manifest,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub runtime_version: String,
    pub packages: Vec<String>,
    pub source_of_truth: SourceOfTruth,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Runtime pinned by the repository, or the default with a warning when a
/// pin exists but cannot be read.
pub fn resolve_runtime(source: &Path) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    let candidates: [(&str, fn(&str) -> Option<String>); 3] = [
        (".python-version", pin_from_python_version),
        ("runtime.txt", pin_from_runtime_txt),
        ("pyproject.toml", pin_from_pyproject),
    ];
    for (file, read) in candidates {
        let Ok(text) = std::fs::read_to_string(source.join(file)) else { continue };
        match read(&text) {
            Some(version) => return (version, warnings),
            None if file == "pyproject.toml" && !has_requires_python(&text) => {}
            None => warnings.push(format!("{file}: unreadable runtime pin, using {DEFAULT_RUNTIME}")),
        }
    }
    (DEFAULT_RUNTIME.to_string(), warnings)
}

/// `3.11`, `3.11.4`, `python-3.11.2` → `3.11`.
pub fn major_minor(token: &str) -> Option<String> {
    let token = token.trim().trim_start_matches("python").trim_start_matches(['-', '@']);
    let mut parts = token.split('.');
    let major = parts.next()?;
    let minor = parts.next()?;
    let minor: String = minor.chars().take_while(char::is_ascii_digit).collect();
    if major.is_empty() || minor.is_empty() || !major.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(format!("{}.{}", major.parse::<u32>().ok()?, minor.parse::<u32>().ok()?))
}

fn pin_from_python_version(text: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .and_then(major_minor)
}

fn pin_from_runtime_txt(text: &str) -> Option<String> {
    text.lines().map(str::trim).find(|l| !l.is_empty()).and_then(major_minor)
}

fn has_requires_python(text: &str) -> bool {
    toml::from_str::<toml::Value>(text)
        .ok()
        .and_then(|v| v.get("project")?.get("requires-python").cloned())
        .is_some()
}

/// Only exact pins (`==3.11`, `==3.11.*`) count; ranges are not pins.
fn pin_from_pyproject(text: &str) -> Option<String> {
    let value: toml::Value = toml::from_str(text).ok()?;
    let spec = value.get("project")?.get("requires-python")?.as_str()?.trim();
    let exact = spec.strip_prefix("==")?;
    if exact.contains(',') {
        return None;
    }
    major_minor(exact.trim_end_matches(".*"))
}

/// PEP 503 normalized distribution name of a requirement string.
pub fn requirement_name(requirement: &str) -> Option<String> {
    let req = requirement.trim();
    let end = req
        .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')))
        .unwrap_or(req.len());
    let name = &req[..end];
    if name.is_empty() {
        return None;
    }
    let mut out = String::new();
    let mut sep = false;
    for c in name.chars() {
        if matches!(c, '-' | '_' | '.') {
            sep = true;
        } else {
            if sep && !out.is_empty() {
                out.push('-');
            }
            sep = false;
            out.push(c.to_ascii_lowercase());
        }
    }
    Some(out)
}

fn dedupe(requirements: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    requirements
        .into_iter()
        .filter(|r| requirement_name(r).is_some_and(|n| seen.insert(n)))
        .collect()
}

/// Requirement lines from a requirements file, following `-r` includes.
/// Inline comments and markers stay in the string.
pub fn read_requirements(path: &Path) -> Vec<String> {
    let mut visited = BTreeSet::new();
    let mut out = Vec::new();
    read_requirements_into(path, &mut visited, &mut out);
    out
}

fn read_requirements_into(path: &Path, visited: &mut BTreeSet<PathBuf>, out: &mut Vec<String>) {
    let key = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    if !visited.insert(key) {
        return;
    }
    let Ok(text) = std::fs::read_to_string(path) else { return };
    let base = path.parent().unwrap_or(Path::new("."));
    let joined = text.replace("\\\n", " ");
    for line in joined.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed
            .strip_prefix("-r")
            .or_else(|| trimmed.strip_prefix("--requirement"))
        {
            let include = rest.trim_start_matches('=').split('#').next().unwrap_or("").trim();
            if !include.is_empty() {
                read_requirements_into(&base.join(include), visited, out);
            }
            continue;
        }
        if trimmed.starts_with('-') {
            // Index options, editable installs, constraints: not packages.
            continue;
        }
        out.push(trimmed.to_string());
    }
}

/// Options of `pip install` that consume the next token.
const PIP_VALUE_OPTIONS: &[&str] = &[
    "-c", "--constraint", "-i", "--index-url", "--extra-index-url", "-f", "--find-links",
    "--trusted-host", "-t", "--target", "--prefix", "--root", "--src", "--upgrade-strategy",
    "--progress-bar", "--cache-dir", "--platform", "--python-version", "--implementation",
    "--abi", "--only-binary", "--no-binary", "-e", "--editable", "--log", "--timeout",
    "--retries", "--proxy", "--global-option", "--config-settings", "-C",
];

/// Packages named by `pip install` directives in a container file.
pub fn container_packages(dockerfile: &str, context: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for instruction in logical_lines(dockerfile) {
        let trimmed = instruction.trim_start();
        let Some(command) = trimmed
            .get(..4)
            .filter(|head| head.eq_ignore_ascii_case("RUN "))
            .map(|_| trimmed[4..].trim())
        else {
            continue;
        };
        let tokens: Vec<String> = if command.starts_with('[') {
            serde_json::from_str::<Vec<String>>(command).unwrap_or_default()
        } else {
            match shlex::split(command) {
                Some(t) => t,
                None => continue,
            }
        };
        for segment in tokens.split(|t| matches!(t.as_str(), "&&" | ";" | "||" | "|")) {
            out.extend(pip_install_args(segment, context));
        }
    }
    out
}

fn logical_lines(text: &str) -> Vec<String> {
    let mut lines = Vec::new();
    let mut current = String::new();
    for raw in text.lines() {
        let line = raw.trim_end();
        if current.is_empty() && line.trim_start().starts_with('#') {
            continue;
        }
        if let Some(stripped) = line.strip_suffix('\\') {
            current.push_str(stripped);
            current.push(' ');
        } else {
            current.push_str(line);
            lines.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    lines
}

fn pip_install_args(segment: &[String], context: &Path) -> Vec<String> {
    let is_pip = |t: &str| {
        let base = t.rsplit('/').next().unwrap_or(t);
        base == "pip" || base == "pip3" || base.starts_with("pip3.")
    };
    let is_python = |t: &str| {
        let base = t.rsplit('/').next().unwrap_or(t);
        base == "python" || base.starts_with("python3")
    };
    let start = match segment {
        [p, install, ..] if is_pip(p) && install == "install" => 2,
        [py, m, pip, install, ..] if is_python(py) && m == "-m" && pip == "pip" && install == "install" => 4,
        _ => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut args = segment[start..].iter();
    while let Some(arg) = args.next() {
        if arg == "-r" || arg == "--requirement" {
            if let Some(file) = args.next() {
                out.extend(read_requirements(&context.join(file)));
            }
            continue;
        }
        if let Some(file) = arg.strip_prefix("--requirement=") {
            out.extend(read_requirements(&context.join(file)));
            continue;
        }
        if PIP_VALUE_OPTIONS.contains(&arg.as_str()) {
            args.next();
            continue;
        }
        if arg.starts_with('-') || arg.starts_with('.') || arg.starts_with('/') {
            continue;
        }
        out.push(arg.clone());
    }
    out
}

fn pyproject_dependencies(text: &str) -> Option<Vec<String>> {
    let value: toml::Value = toml::from_str(text).ok()?;
    let deps = value.get("project")?.get("dependencies")?.as_array()?;
    Some(deps.iter().filter_map(|d| d.as_str().map(str::to_string)).collect())
}

fn find_dockerfile(source: &Path) -> Option<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(source)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_lowercase();
            name == "dockerfile" || name.starts_with("dockerfile.") || name.ends_with(".dockerfile")
        })
        .collect();
    files.sort();
    files.into_iter().next()
}

/// Declared dependencies with precedence requirements file > container file
/// > project manifest > nothing.
pub fn extract_dependencies(source: &Path) -> EnvironmentSpec {
    let (runtime_version, warnings) = resolve_runtime(source);
    let spec = |packages: Vec<String>, source_of_truth| EnvironmentSpec {
        runtime_version: runtime_version.clone(),
        packages: dedupe(packages),
        source_of_truth,
        warnings: warnings.clone(),
    };

    let requirements = source.join("requirements.txt");
    if requirements.is_file() {
        return spec(read_requirements(&requirements), SourceOfTruth::RequirementsFile);
    }
    if let Some(dockerfile) = find_dockerfile(source) {
        if let Ok(text) = std::fs::read_to_string(&dockerfile) {
            return spec(container_packages(&text, source), SourceOfTruth::ContainerFile);
        }
    }
    if let Some(deps) = std::fs::read_to_string(source.join("pyproject.toml"))
        .ok()
        .as_deref()
        .and_then(pyproject_dependencies)
    {
        return spec(deps, SourceOfTruth::Manifest);
    }
    spec(Vec::new(), SourceOfTruth::Default)
}
