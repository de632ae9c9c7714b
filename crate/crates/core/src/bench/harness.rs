//! Corpus runs under replay, aggregation and report emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, PackageIndex};
use crate::fixtures::{materialize_repo, CaseScript};
use crate::gateway::{Gateway, Provenance};
use crate::generator::GenerationRules;
use crate::pipeline::{convert, ConvertOptions};
use crate::security::SecurityPolicy;
use crate::verify::{ConversionRecord, DEFAULT_MAX_ROUNDS, TEST_TIMEOUT};

use super::{classify_failure, judge_success, FailureCategory};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("corpus manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Designed outcome of one corpus case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Expectation {
    /// Succeeds after exactly `rounds` repair rounds (0 is first-pass).
    Success { rounds: usize },
    Failure { category: FailureCategory },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusCase {
    pub name: String,
    pub group: String,
    /// Fixture directory, relative to the manifest.
    pub repo: PathBuf,
    pub transcript: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub expect: Expectation,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    /// Directory of wheels used as the only package index, relative to the manifest.
    #[serde(default)]
    wheels: Option<PathBuf>,
    #[serde(default, rename = "case")]
    cases: Vec<CorpusCase>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub base_dir: PathBuf,
    pub wheels: Option<PathBuf>,
    pub cases: Vec<CorpusCase>,
}

impl Corpus {
    pub fn load(manifest: &Path) -> Result<Self, BenchError> {
        let err = |message: String| BenchError::Manifest {
            path: manifest.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(manifest).map_err(|e| err(e.to_string()))?;
        let file: ManifestFile = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base_dir = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .canonicalize()
            .map_err(|e| err(e.to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for case in &file.cases {
            if !names.insert(case.name.as_str()) {
                return Err(err(format!("duplicate case `{}`", case.name)));
            }
        }
        Ok(Self {
            wheels: file.wheels.map(|w| base_dir.join(w)),
            cases: file.cases,
            base_dir,
        })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Cases run at most this many rounds under the default budget.
    pub fn max_designed_rounds(&self) -> usize {
        self.cases
            .iter()
            .filter_map(|c| match c.expect {
                Expectation::Success { rounds } => Some(rounds),
                Expectation::Failure { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Scratch directory for materialized repositories, runs and output.
    pub work_dir: PathBuf,
    pub parallelism: usize,
    pub max_rounds: usize,
    pub env: EnvConfig,
    pub security: SecurityPolicy,
    pub test_timeout: Duration,
    /// Commit successful bundles to `<work_dir>/out`.
    pub finalize: bool,
}

impl BenchConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            work_dir: work_dir.into(),
            parallelism: 1,
            max_rounds: DEFAULT_MAX_ROUNDS,
            env: EnvConfig::default(),
            security: SecurityPolicy::default(),
            test_timeout: TEST_TIMEOUT,
            finalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseStatus {
    Success,
    Failure,
    /// The harness could not run the case (replay miss, clone failure).
    HarnessError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub group: String,
    pub repo: String,
    pub status: CaseStatus,
    pub rounds_used: usize,
    pub validated_endpoints: usize,
    pub generate_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_category: Option<FailureCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub expected: Expectation,
    pub as_designed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub cumulative_successes: usize,
    pub cumulative_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: FailureCategory,
    pub count: usize,
    /// Fraction of all classified failures.
    pub share: f64,
}

/// Everything in here is deterministic under replay; timing lives in
/// [`BenchTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cases: Vec<CaseResult>,
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub per_group: BTreeMap<String, GroupStats>,
    pub per_round: Vec<RoundStats>,
    pub category_histogram: Vec<CategoryCount>,
    pub unclassified: usize,
    pub harness_errors: usize,
    pub as_designed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub mean_wall_time_secs: f64,
    pub per_case_secs: BTreeMap<String, f64>,
}

/// One bench invocation: the report plus what the report leaves out.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub timing: BenchTiming,
    pub records: BTreeMap<String, ConversionRecord>,
    /// Finalized bundle directory per successful case.
    pub finalized: BTreeMap<String, PathBuf>,
}

fn rate(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn success_round(case: &CaseResult) -> Option<usize> {
    (case.status == CaseStatus::Success).then_some(case.rounds_used)
}

/// Fold per-case results into the report.
pub fn aggregate(cases: Vec<CaseResult>, max_rounds: usize) -> BenchReport {
    let total = cases.len();
    let successes = cases.iter().filter(|c| c.status == CaseStatus::Success).count();
    let mut per_group: BTreeMap<String, GroupStats> = BTreeMap::new();
    for c in &cases {
        let g = per_group.entry(c.group.clone()).or_insert(GroupStats {
            total: 0,
            successes: 0,
            success_rate: 0.0,
        });
        g.total += 1;
        g.successes += usize::from(c.status == CaseStatus::Success);
    }
    for g in per_group.values_mut() {
        g.success_rate = rate(g.successes, g.total);
    }
    let per_round = (0..=max_rounds)
        .map(|round| {
            let n = cases.iter().filter(|c| success_round(c).is_some_and(|r| r <= round)).count();
            RoundStats {
                round,
                cumulative_successes: n,
                cumulative_success_rate: rate(n, total),
            }
        })
        .collect();
    let classified: usize = cases.iter().filter(|c| c.failure_category.is_some()).count();
    let category_histogram = FailureCategory::ALL
        .iter()
        .map(|&category| {
            let count = cases.iter().filter(|c| c.failure_category == Some(category)).count();
            CategoryCount {
                category,
                count,
                share: rate(count, classified),
            }
        })
        .collect();
    BenchReport {
        total,
        successes,
        success_rate: rate(successes, total),
        per_group,
        per_round,
        category_histogram,
        unclassified: cases
            .iter()
            .filter(|c| c.status == CaseStatus::Failure && c.failure_category.is_none())
            .count(),
        harness_errors: cases.iter().filter(|c| c.status == CaseStatus::HarnessError).count(),
        as_designed: cases.iter().filter(|c| c.as_designed).count(),
        cases,
    }
}

struct CaseRun {
    result: CaseResult,
    wall_time: f64,
    record: Option<ConversionRecord>,
    finalized: Option<PathBuf>,
}

fn prepare_work_dir(dir: &Path) -> Result<(), BenchError> {
    if dir.exists() && std::fs::read_dir(dir).map_err(|e| BenchError::Io(e.to_string()))?.next().is_some() {
        return Err(BenchError::Precondition(format!("work directory {} is not empty", dir.display())));
    }
    for sub in ["repos", "runs"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| BenchError::Io(e.to_string()))?;
    }
    Ok(())
}

fn convert_options(corpus: &Corpus, config: &BenchConfig, name: &str) -> ConvertOptions {
    let mut env = config.env.clone();
    if let Some(wheels) = &corpus.wheels {
        env.index = PackageIndex::Local(vec![wheels.clone()]);
    }
    if env.cache_dir.is_none() {
        env.cache_dir = Some(config.work_dir.join("cache"));
    }
    ConvertOptions {
        workspace_root: config.work_dir.join("runs"),
        run_id: name.to_string(),
        output_root: config.finalize.then(|| config.work_dir.join("out")),
        env,
        max_rounds: config.max_rounds,
        rules: GenerationRules::standard(),
        security: config.security.clone(),
        test_timeout: config.test_timeout,
    }
}

fn run_case(corpus: &Corpus, config: &BenchConfig, case: &CorpusCase, gateway: Result<Gateway, String>) -> CaseRun {
    let started = std::time::Instant::now();
    let mut result = CaseResult {
        name: case.name.clone(),
        group: case.group.clone(),
        repo: case.repo.display().to_string(),
        status: CaseStatus::HarnessError,
        rounds_used: 0,
        validated_endpoints: 0,
        generate_calls: 0,
        failure_category: None,
        error: None,
        expected: case.expect.clone(),
        as_designed: false,
    };
    let work = config.work_dir.display().to_string();
    let harness_error = |mut result: CaseResult, message: String| CaseRun {
        result: {
            result.error = Some(message.replace(&work, "<work>"));
            result
        },
        wall_time: started.elapsed().as_secs_f64(),
        record: None,
        finalized: None,
    };
    let gateway = match gateway {
        Ok(g) => g,
        Err(e) => return harness_error(result, e),
    };
    let repo = match materialize_repo(&corpus.path(&case.repo), &config.work_dir.join("repos").join(&case.name)) {
        Ok(r) => r,
        Err(e) => return harness_error(result, format!("materialize: {e}")),
    };
    let opts = convert_options(corpus, config, &case.name);
    let conversion = match convert(&gateway, &repo.display().to_string(), &opts, None) {
        Ok(c) => c,
        Err(e) => return harness_error(result, e.to_string()),
    };
    let record = conversion.record;
    let success = judge_success(&record);
    result.status = if success { CaseStatus::Success } else { CaseStatus::Failure };
    result.rounds_used = record.rounds_used;
    result.validated_endpoints = record.validated_endpoints;
    result.generate_calls = record.generate_calls;
    if !success {
        result.failure_category = record.failure_category.or_else(|| classify_failure(&record).ok());
    }
    result.as_designed = match &case.expect {
        Expectation::Success { rounds } => success && record.rounds_used == *rounds,
        Expectation::Failure { category } => !success && result.failure_category == Some(*category),
    };
    CaseRun {
        result,
        wall_time: started.elapsed().as_secs_f64(),
        record: Some(record),
        finalized: conversion.finalized.map(|f| f.dir),
    }
}

/// Run every case under replay and aggregate. Cases run on up to
/// `parallelism` threads; the fold is sequential in manifest order.
pub fn run_bench(corpus: &Corpus, config: &BenchConfig) -> Result<BenchRun, BenchError> {
    if corpus.cases.is_empty() {
        return Err(BenchError::Precondition("the corpus has no cases".into()));
    }
    if config.parallelism == 0 {
        return Err(BenchError::Precondition("parallelism must be at least 1".into()));
    }
    prepare_work_dir(&config.work_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| BenchError::Io(e.to_string()))?;
    let runs: Vec<CaseRun> = pool.install(|| {
        corpus
            .cases
            .par_iter()
            .map(|case| {
                let gateway = Gateway::replay_file(&corpus.path(&case.transcript)).map_err(|e| e.to_string());
                run_case(corpus, config, case, gateway)
            })
            .collect()
    });

    let mut records = BTreeMap::new();
    let mut finalized = BTreeMap::new();
    let mut per_case_secs = BTreeMap::new();
    let mut timed = Vec::new();
    let mut results = Vec::new();
    for run in runs {
        let name = run.result.name.clone();
        per_case_secs.insert(name.clone(), run.wall_time);
        if run.result.status != CaseStatus::HarnessError {
            timed.push(run.wall_time);
        }
        if let Some(record) = run.record {
            records.insert(name.clone(), record);
        }
        if let Some(dir) = run.finalized {
            finalized.insert(name, dir);
        }
        results.push(run.result);
    }
    let timing = BenchTiming {
        mean_wall_time_secs: mean(&timed),
        per_case_secs,
    };
    Ok(BenchRun {
        report: aggregate(results, config.max_rounds),
        timing,
        records,
        finalized,
    })
}

/// Re-record the transcripts of every scripted case by running the pipeline
/// against its script. Sequential; existing transcripts are replaced.
pub fn record_corpus(corpus: &Corpus, config: &BenchConfig) -> Result<BenchRun, BenchError> {
    if corpus.cases.is_empty() {
        return Err(BenchError::Precondition("the corpus has no cases".into()));
    }
    prepare_work_dir(&config.work_dir)?;
    let mut results = Vec::new();
    let mut records = BTreeMap::new();
    let mut per_case_secs = BTreeMap::new();
    let mut timed = Vec::new();
    for case in &corpus.cases {
        let Some(script) = &case.script else { continue };
        let transcript = corpus.path(&case.transcript);
        let gateway = (|| {
            let script = CaseScript::load(&corpus.path(script)).map_err(|e| e.to_string())?;
            if transcript.exists() {
                std::fs::remove_file(&transcript).map_err(|e| e.to_string())?;
            }
            if let Some(parent) = transcript.parent() {
                std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
            }
            Gateway::recording(script.backend(), &transcript, Provenance::hand_authored()).map_err(|e| e.to_string())
        })();
        let run = run_case(corpus, config, case, gateway);
        per_case_secs.insert(case.name.clone(), run.wall_time);
        if run.result.status != CaseStatus::HarnessError {
            timed.push(run.wall_time);
        }
        if let Some(record) = run.record {
            records.insert(case.name.clone(), record);
        }
        results.push(run.result);
    }
    Ok(BenchRun {
        report: aggregate(results, config.max_rounds),
        timing: BenchTiming {
            mean_wall_time_secs: mean(&timed),
            per_case_secs,
        },
        records,
        finalized: BTreeMap::new(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Plain-text table in the shape of the report.
pub fn render_summary(report: &BenchReport, timing: &BenchTiming) -> String {
    let mut out = format!(
        "{:<28} {:<10} {:<14} {:>6} {:<22} {:>8}\n",
        "case", "group", "status", "rounds", "category", "time(s)"
    );
    for c in &report.cases {
        let status = match c.status {
            CaseStatus::Success => "success",
            CaseStatus::Failure => "failure",
            CaseStatus::HarnessError => "harness-error",
        };
        out.push_str(&format!(
            "{:<28} {:<10} {:<14} {:>6} {:<22} {:>8.1}\n",
            c.name,
            c.group,
            status,
            c.rounds_used,
            c.failure_category.map(FailureCategory::as_str).unwrap_or("-"),
            timing.per_case_secs.get(&c.name).copied().unwrap_or(0.0)
        ));
    }
    out.push_str(&format!(
        "\nsuccess rate {:.3} ({}/{}), as designed {}/{}, harness errors {}\n",
        report.success_rate, report.successes, report.total, report.as_designed, report.total, report.harness_errors
    ));
    out.push_str(&format!("mean wall time {:.1}s\n", timing.mean_wall_time_secs));
    out.push_str("\ncumulative success by round\n");
    for r in &report.per_round {
        out.push_str(&format!(
            "  round {}: {:>3} ({:.3})\n",
            r.round, r.cumulative_successes, r.cumulative_success_rate
        ));
    }
    out.push_str("\nfailure categories\n");
    for c in &report.category_histogram {
        out.push_str(&format!("  {:<22} {:>3} ({:.1}%)\n", c.category.as_str(), c.count, 100.0 * c.share));
    }
    if report.unclassified > 0 {
        out.push_str(&format!("  {:<22} {:>3}\n", "unclassified", report.unclassified));
    }
    out
}

/// Write `bench_report.json`, `bench_timing.json` and `bench_summary.txt`.
pub fn write_bench_outputs(run: &BenchRun, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let report = dir.join("bench_report.json");
    let timing = dir.join("bench_timing.json");
    let summary = dir.join("bench_summary.txt");
    crate::write_versioned_json(&report, &run.report)?;
    crate::write_versioned_json(&timing, &run.timing)?;
    std::fs::write(&summary, render_summary(&run.report, &run.timing))?;
    Ok(vec![report, timing, summary])
}
