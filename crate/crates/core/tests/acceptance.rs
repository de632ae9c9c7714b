//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the verdict lines always reach the output; exits non-zero if any fails.
//!
//! Tolerances: every criterion is exact (100% agreement, zero violations)
//! except the wall-clock bounds on criteria 2 (< 60 s) and 7 (< 30 s).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use toolsmith_core::analysis::{build_symbol_table, SideEffect, SymbolRef, SymbolTable};
use toolsmith_core::bench::{
    judge_success, run_bench, write_bench_outputs, BenchConfig, BenchRun, CaseStatus, Corpus, Expectation,
    FailureCategory,
};
use toolsmith_core::generator::templates::{ADAPTER_PY, BUNDLE_FILES};
use toolsmith_core::generator::{check_bundle_shape, Manifest, ServiceBundle, ToolEndpoint, ToolParameter};
use toolsmith_core::runtime::{serve_socket, LaunchSpec, Registry, ServerState, ServicePool, ToolExecutor};
use toolsmith_core::security::{
    scan_bundle, Confirmation, DecisionLog, Governor, LogKind, ManualClock, PathPolicy, RiskTier, SecurityPolicy,
};
use toolsmith_core::verify::{validate_imports, ConversionRecord, FinalStatus, RunOutcome};

type Verdict = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn oracle_script() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/oracles/reflect.py")
}

fn python() -> String {
    std::env::var("TOOLSMITH_TEST_PYTHON").unwrap_or_else(|_| "python3".into())
}

fn check(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

/// Shared state: the corpus and the first of the determinism runs, whose
/// records and finalized bundles later criteria inspect.
struct Context {
    _work: tempfile::TempDir,
    corpus: Corpus,
    first: Option<BenchRun>,
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let corpus = Corpus::load(&fixtures().join("corpus/corpus.toml")).expect("corpus manifest");
    let mut ctx = Context {
        _work: work,
        corpus,
        first: None,
    };

    let criteria: Vec<(&str, fn(&mut Context) -> Verdict)> = vec![
        ("end-to-end determinism", c1_determinism),
        ("import validation fidelity", c2_import_fidelity),
        ("symbol table oracle equivalence", c3_symbol_oracle),
        ("repair loop accounting", c4_rrf_accounting),
        ("success criterion", c5_success_criterion),
        ("failure taxonomy", c6_taxonomy),
        ("security soundness", c7_security),
        ("governance safety", c8_governance),
        ("wire conformance", c9_wire),
        ("bundle shape", c10_bundle_shape),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    std::io::stdout().flush().ok();
    if failed > 0 {
        std::process::exit(1);
    }
}

fn bench_once(ctx: &Context, dir: &Path) -> Result<(BenchRun, Vec<u8>), String> {
    let run = run_bench(&ctx.corpus, &BenchConfig::new(dir.join("work"))).map_err(|e| e.to_string())?;
    write_bench_outputs(&run, &dir.join("report")).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(dir.join("report/bench_report.json")).map_err(|e| e.to_string())?;
    Ok((run, bytes))
}

fn first_run(ctx: &Context) -> Result<&BenchRun, String> {
    ctx.first.as_ref().ok_or_else(|| "no bench run available (criterion 1 did not complete)".to_string())
}

// 1. Three replay runs, byte-identical reports, every case as designed.
fn c1_determinism(ctx: &mut Context) -> Verdict {
    let root = ctx._work.path().to_path_buf();
    let mut reports = Vec::new();
    for i in 1..=3 {
        let (run, bytes) = bench_once(ctx, &root.join(format!("run{i}")))?;
        if i == 1 {
            ctx.first = Some(run);
        }
        reports.push(bytes);
    }
    check(reports.iter().all(|r| r == &reports[0]), || "bench reports differ between runs".into())?;
    let run = first_run(ctx)?;
    check(ctx.corpus.cases.len() >= 10, || format!("corpus has {} cases", ctx.corpus.cases.len()))?;
    let mut mismatches = Vec::new();
    for (case, result) in ctx.corpus.cases.iter().zip(&run.report.cases) {
        let actual = match result.status {
            CaseStatus::Success => Some(Expectation::Success {
                rounds: result.rounds_used,
            }),
            CaseStatus::Failure => result.failure_category.map(|category| Expectation::Failure { category }),
            CaseStatus::HarnessError => None,
        };
        if case.name != result.name || actual.as_ref() != Some(&case.expect) {
            mismatches.push(format!("{}: expected {:?}, got {:?}", case.name, case.expect, actual));
        }
    }
    check(mismatches.is_empty(), || mismatches.join("; "))?;
    let first_pass = run.report.cases.iter().filter(|c| c.status == CaseStatus::Success && c.rounds_used == 0).count();
    let recovered = run.report.successes - first_pass;
    Ok(format!(
        "3 identical reports of {} bytes; {} cases as designed, {first_pass} first-pass, {recovered} recovered",
        reports[0].len(),
        run.report.as_designed
    ))
}

/// Every identifier in a repository's sources: real symbols, private
/// helpers, constants, imported modules and plain words.
fn identifiers(source: &Path) -> Vec<String> {
    let word = regex::Regex::new(r"\b[A-Za-z_][A-Za-z0-9_]*\b").unwrap();
    let mut out = BTreeSet::new();
    for entry in walkdir::WalkDir::new(source).sort_by_file_name() {
        let entry = entry.unwrap();
        if entry.path().extension().is_some_and(|e| e == "py") {
            let text = std::fs::read_to_string(entry.path()).unwrap();
            out.extend(word.find_iter(&text).map(|m| m.as_str().to_string()));
        }
    }
    out.into_iter().collect()
}

fn symbol_fixture_repos() -> Vec<PathBuf> {
    let mut repos = Vec::new();
    for base in [fixtures().join("symbols"), fixtures().join("corpus/repos")] {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&base).unwrap().map(|e| e.unwrap().path()).collect();
        dirs.sort();
        repos.extend(dirs.into_iter().filter(|d| d.is_dir()));
    }
    repos
}

fn oracle(source: &Path, mode: &str, stdin: &str) -> Result<Value, String> {
    let mut child = Command::new(python())
        .arg(oracle_script())
        .arg(source)
        .arg(mode)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("oracle: {e}"))?;
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("oracle failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("oracle output: {e}"))
}

fn adapter_bundle(adapter: String) -> ServiceBundle {
    ServiceBundle {
        files: BTreeMap::from([(ADAPTER_PY.to_string(), adapter)]),
        manifest: Manifest {
            service_name: "probe".into(),
            description: String::new(),
            run_id: "probe".into(),
            endpoints: Vec::new(),
            dependencies: Vec::new(),
            usage: String::new(),
            example_calls: Vec::new(),
        },
        run_id: "probe".into(),
        extra_files: Vec::new(),
    }
}

fn random_bindings(table: &SymbolTable, words: &[String], rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, Option<String>)> {
    let modules: Vec<String> = table.modules.keys().cloned().collect();
    let tops: Vec<String> = table.top_level_packages().into_iter().collect();
    let public: Vec<(String, String)> = table.records().map(|(m, r)| (m.to_string(), r.name.clone())).collect();
    let mut out = Vec::new();
    while out.len() < n {
        let module = match rng.gen_range(0..10) {
            0 => format!("{}.{}", tops.choose(rng).unwrap(), words.choose(rng).unwrap()),
            // A misspelled module, kept inside the repository namespace:
            // imports of other top-level packages are third-party and are
            // deliberately left to run-time testing.
            1 => {
                let m = modules.choose(rng).unwrap();
                if m.contains('.') {
                    format!("{m}_x")
                } else {
                    format!("{m}.{}_x", words.choose(rng).unwrap())
                }
            }
            _ => modules.choose(rng).unwrap().clone(),
        };
        let binding = match rng.gen_range(0..10) {
            0 => (module, None),
            1..=3 if !public.is_empty() => {
                let (m, name) = public.choose(rng).unwrap().clone();
                (m, Some(name))
            }
            4 if !public.is_empty() => {
                let (m, name) = public.choose(rng).unwrap().clone();
                (m, Some(format!("{name}s")))
            }
            _ => (module, Some(words.choose(rng).unwrap().clone())),
        };
        // Python keywords cannot appear in an import statement at all.
        let keyword = |s: &str| {
            matches!(
                s,
                "False" | "None" | "True" | "and" | "as" | "assert" | "async" | "await" | "break" | "class" | "continue"
                    | "def" | "del" | "elif" | "else" | "except" | "finally" | "for" | "from" | "global" | "if"
                    | "import" | "in" | "is" | "lambda" | "nonlocal" | "not" | "or" | "pass" | "raise" | "return"
                    | "try" | "while" | "with" | "yield"
            )
        };
        if binding.0.split('.').any(keyword) || binding.1.as_deref().is_some_and(keyword) {
            continue;
        }
        out.push(binding);
    }
    out
}

// 2. validate_imports against actually importing each binding.
fn c2_import_fidelity(_: &mut Context) -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut total = 0;
    let mut positives = 0;
    let mut disagreements = Vec::new();
    for repo in symbol_fixture_repos() {
        let table = build_symbol_table(&repo).table;
        if table.modules.is_empty() {
            continue;
        }
        let per_repo = if repo.starts_with(fixtures().join("symbols")) { 90 } else { 15 };
        let bindings = random_bindings(&table, &identifiers(&repo), &mut rng, per_repo);
        let adapter: String = bindings
            .iter()
            .map(|(m, n)| match n {
                Some(n) => format!("from {m} import {n}\n"),
                None => format!("import {m}\n"),
            })
            .collect();
        let flagged: BTreeSet<usize> = validate_imports(&adapter_bundle(adapter), &table)
            .iter()
            .map(|f| f.binding.line)
            .collect();
        let request = serde_json::to_string(&bindings).unwrap();
        let truth = oracle(&repo, "imports", &request)?;
        for (i, (m, n)) in bindings.iter().enumerate() {
            let resolves = truth[i].as_bool().ok_or("oracle reply is not a boolean list")?;
            let accepted = !flagged.contains(&(i + 1));
            positives += usize::from(resolves);
            total += 1;
            if resolves != accepted {
                disagreements.push(format!(
                    "{}: {m} {:?} oracle={resolves} validator={accepted}",
                    repo.file_name().unwrap().to_string_lossy(),
                    n
                ));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let table = build_symbol_table(&fixtures().join("symbols/analytics")).table;
    let foreign = "import numpy\nfrom analytics_x import run_pca\nfrom numpy.linalg import svd\n";
    check(validate_imports(&adapter_bundle(foreign.into()), &table).is_empty(), || {
        "imports outside the repository were flagged instead of deferred".into()
    })?;
    check(total >= 200, || format!("only {total} bindings"))?;
    check(disagreements.is_empty(), || {
        format!("{} of {total} disagree: {}", disagreements.len(), disagreements.join("; "))
    })?;
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{total} repository bindings ({positives} resolvable), 100% agreement; foreign imports deferred"))
}

// 3. Extracted public symbols equal runtime reflection, module by module.
fn c3_symbol_oracle(_: &mut Context) -> Verdict {
    let mut repos = 0;
    let mut modules = 0;
    let mut mismatches = Vec::new();
    for repo in symbol_fixture_repos() {
        repos += 1;
        let table = build_symbol_table(&repo).table;
        let extracted: BTreeMap<String, BTreeSet<String>> = table
            .modules
            .iter()
            .map(|(m, e)| (m.clone(), e.symbols.keys().cloned().collect()))
            .collect();
        let reflected = oracle(&repo, "symbols", "")?;
        let reflected: BTreeMap<String, BTreeSet<String>> = reflected
            .as_object()
            .ok_or("oracle reply is not an object")?
            .iter()
            .map(|(m, names)| {
                let names = names
                    .as_array()
                    .map(|a| a.iter().filter_map(|n| n.as_str().map(str::to_string)).collect())
                    .ok_or_else(|| format!("{m} failed to import: {names}"));
                names.map(|n| (m.clone(), n))
            })
            .collect::<Result<_, String>>()?;
        modules += reflected.len();
        if extracted != reflected {
            mismatches.push(format!(
                "{}: extracted {extracted:?} reflected {reflected:?}",
                repo.file_name().unwrap().to_string_lossy()
            ));
        }
    }
    check(mismatches.is_empty(), || mismatches.join("; "))?;
    Ok(format!("{repos} repositories, {modules} modules, all symbol sets equal"))
}

// 4. Cumulative successes per round follow the designed recovery rounds.
fn c4_rrf_accounting(ctx: &mut Context) -> Verdict {
    let run = first_run(ctx)?;
    let max_rounds = BenchConfig::new("unused").max_rounds;
    let designed: Vec<usize> = ctx
        .corpus
        .cases
        .iter()
        .filter_map(|c| match c.expect {
            Expectation::Success { rounds } => Some(rounds),
            Expectation::Failure { .. } => None,
        })
        .collect();
    for r in 1..=3 {
        check(designed.contains(&r), || format!("no case designed to recover at round {r}"))?;
    }
    let mut per_round = Vec::new();
    for round in 0..=max_rounds {
        let expected = designed.iter().filter(|&&d| d <= round).count();
        let actual = run
            .report
            .per_round
            .iter()
            .find(|s| s.round == round)
            .map(|s| s.cumulative_successes)
            .ok_or_else(|| format!("no statistics for round {round}"))?;
        check(actual == expected, || format!("round {round}: {actual} cumulative successes, designed {expected}"))?;
        per_round.push(actual.to_string());
    }
    let over: Vec<String> = run
        .records
        .iter()
        .filter(|(_, r)| r.generate_calls > 1 + r.max_rounds)
        .map(|(n, r)| format!("{n}: {} generate calls", r.generate_calls))
        .collect();
    check(over.is_empty(), || over.join("; "))?;
    check(run.records.len() == ctx.corpus.cases.len(), || "a case has no conversion record".into())?;
    Ok(format!(
        "cumulative successes by round [{}]; generate calls <= 1 + max rounds on {} records",
        per_round.join(", "),
        run.records.len()
    ))
}

// 5. The success judgement at the endpoint-count boundary.
fn c5_success_criterion(_: &mut Context) -> Verdict {
    let outcome = |pass: bool| {
        let results = BTreeMap::from([("test_a".to_string(), true), ("test_b".to_string(), pass)]);
        RunOutcome::from_counts(results, None, 0.1)
    };
    let record = |validated: usize, last_pass: bool, status: FinalStatus| {
        let mut r = ConversionRecord::started("r", "repo", "c", &["download"], 3);
        r.outcomes = vec![outcome(false), outcome(last_pass)];
        r.validated_endpoints = validated;
        r.final_status = status;
        r
    };
    let mut cases = 0;
    for validated in 0..=6 {
        for last_pass in [false, true] {
            for status in [FinalStatus::Success, FinalStatus::Failure] {
                let expected = last_pass && validated >= 3 && status == FinalStatus::Success;
                let got = judge_success(&record(validated, last_pass, status));
                check(got == expected, || {
                    format!("validated={validated} last_pass={last_pass} status={status:?}: got {got}")
                })?;
                cases += 1;
            }
        }
    }
    check(!judge_success(&record(2, true, FinalStatus::Success)), || "2 endpoints judged a success".into())?;
    check(judge_success(&record(3, true, FinalStatus::Success)), || "3 endpoints judged a failure".into())?;
    let mut empty = record(5, true, FinalStatus::Success);
    empty.outcomes.clear();
    check(!judge_success(&empty), || "a record without runs judged a success".into())?;
    Ok(format!("{cases} records incl. boundaries 2 (false) and 3 (true)"))
}

// 6. Designed failures land in their category; histogram covers all six.
fn c6_taxonomy(ctx: &mut Context) -> Verdict {
    let run = first_run(ctx)?;
    let mut expected_counts: BTreeMap<FailureCategory, usize> = BTreeMap::new();
    let mut wrong = Vec::new();
    for (case, result) in ctx.corpus.cases.iter().zip(&run.report.cases) {
        if let Expectation::Failure { category } = case.expect {
            *expected_counts.entry(category).or_default() += 1;
            if result.failure_category != Some(category) {
                wrong.push(format!("{}: {:?} instead of {category}", case.name, result.failure_category));
            }
        }
    }
    check(wrong.is_empty(), || wrong.join("; "))?;
    for category in FailureCategory::ALL {
        check(expected_counts.contains_key(&category), || format!("no fixture designed for {category}"))?;
    }
    let hist = &run.report.category_histogram;
    let order: Vec<FailureCategory> = hist.iter().map(|h| h.category).collect();
    check(order == FailureCategory::ALL, || format!("histogram categories {order:?}"))?;
    let classified: usize = expected_counts.values().sum();
    for h in hist {
        let n = expected_counts[&h.category];
        check(h.count == n, || format!("{}: count {} designed {n}", h.category, h.count))?;
        let share = n as f64 / classified as f64;
        check((h.share - share).abs() < 1e-12, || format!("{}: share {} expected {share}", h.category, h.share))?;
    }
    check(run.report.unclassified == 0, || format!("{} unclassified", run.report.unclassified))?;
    let summary: Vec<String> = hist.iter().map(|h| format!("{}={}", h.category, h.count)).collect();
    Ok(format!("{classified} failures classified as designed; {}", summary.join(" ")))
}

#[derive(Deserialize)]
struct SecurityCases {
    root: PathBuf,
    case: Vec<SecurityCase>,
}

#[derive(Deserialize)]
struct SecurityCase {
    name: String,
    rule: String,
    escapes: Option<String>,
}

/// Lexical containment after joining relative paths onto the root.
fn contained(root: &Path, literal: &str) -> bool {
    if literal.starts_with('~') {
        return false;
    }
    let joined = root.join(literal);
    let mut parts: Vec<Component> = Vec::new();
    for c in joined.components() {
        match c {
            Component::ParentDir => {
                if matches!(parts.last(), Some(Component::Normal(_))) {
                    parts.pop();
                }
            }
            Component::CurDir => {}
            other => parts.push(other),
        }
    }
    parts.iter().collect::<PathBuf>().starts_with(root)
}

// 7. Seeded injection and escape cases are caught; their clean twins are not.
fn c7_security(_: &mut Context) -> Verdict {
    let started = Instant::now();
    let base = fixtures().join("security");
    let cases: SecurityCases = toml::from_str(&std::fs::read_to_string(base.join("cases.toml")).unwrap()).unwrap();
    let policy = PathPolicy::new(vec![cases.root.clone()], Vec::new()).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut by_rule: BTreeMap<&str, usize> = BTreeMap::new();
    for case in &cases.case {
        if let Some(literal) = &case.escapes {
            check(!contained(&cases.root, literal), || format!("{}: seed `{literal}` does not escape", case.name))?;
        }
        let read = |dir: &str| std::fs::read_to_string(base.join(dir).join(format!("{}.py", case.name))).unwrap();
        let seeded = scan_bundle(&adapter_bundle(read("seeded")), &policy, &[]);
        if !seeded.findings.iter().any(|f| f.is_blocking() && f.rule_id == case.rule) {
            problems.push(format!("{}: {} not detected", case.name, case.rule));
        }
        let clean = scan_bundle(&adapter_bundle(read("clean")), &policy, &[]);
        let blocking: Vec<&str> = clean.findings.iter().filter(|f| f.is_blocking()).map(|f| f.rule_id.as_str()).collect();
        if !blocking.is_empty() {
            problems.push(format!("{} clean twin: {}", case.name, blocking.join(", ")));
        }
        *by_rule.entry(case.rule.as_str()).or_default() += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    check(problems.is_empty(), || problems.join("; "))?;
    check(secs < 30.0, || format!("took {secs:.1}s"))?;
    let summary: Vec<String> = by_rule.iter().map(|(r, n)| format!("{n} {r}")).collect();
    Ok(format!("{} seeded detected, 0 false positives on clean twins", summary.join(" + ")))
}

#[derive(Debug, Clone)]
enum Op {
    Call { tool: usize, surface: bool, confirm: bool, heavy: bool },
    Advance(f64),
    Reset,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        8 => (0..4usize, prop::bool::weighted(0.85), any::<bool>(), prop::bool::weighted(0.2))
            .prop_map(|(tool, surface, confirm, heavy)| Op::Call { tool, surface, confirm, heavy }),
        2 => (0.0..400.0f64).prop_map(Op::Advance),
        1 => Just(Op::Reset),
    ]
}

fn governed_endpoint(name: &str, effects: &[SideEffect]) -> ToolEndpoint {
    ToolEndpoint {
        tool_name: name.into(),
        description: String::new(),
        parameters: vec![ToolParameter {
            name: "n_samples".into(),
            wire_type: "integer".into(),
            required: false,
            default: None,
            description: String::new(),
        }],
        target: SymbolRef {
            module: "m".into(),
            name: name.into(),
        },
        risk_annotations: effects.iter().copied().collect(),
    }
}

// 8. Property-generated call sequences never break the three safety rules.
fn c8_governance(_: &mut Context) -> Verdict {
    let tools = [
        governed_endpoint("lookup", &[]),
        governed_endpoint("write_note", &[SideEffect::WritesFs]),
        governed_endpoint("delete_note", &[SideEffect::Delete]),
        governed_endpoint("post_note", &[SideEffect::Network]),
    ];
    let stats = Arc::new(Mutex::new((0usize, 0usize, 0usize)));
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let sink = stats.clone();
    let result = runner.run(&prop::collection::vec(op(), 1..40), |ops| {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("decision_log.jsonl");
        let clock = ManualClock::new(0.0);
        let mut policy = SecurityPolicy::default();
        policy.quota.max_cpu_seconds = 1.0;
        let mut g = Governor::new(&policy, DecisionLog::to_file(&log_path), Box::new(clock.clone()));
        let mut executed_ids: Vec<(u64, RiskTier)> = Vec::new();
        for op in &ops {
            match op {
                Op::Advance(secs) => clock.advance(*secs),
                Op::Reset => g.reset(),
                Op::Call { tool, surface, confirm, heavy } => {
                    let args = if *heavy { json!({"n_samples": 1_000_000}) } else { json!({}) };
                    let preview = g.prepare(&tools[*tool], args.as_object().unwrap());
                    let preview = if *surface { g.surface(preview).unwrap() } else { preview };
                    let confirmation = if *confirm { Confirmation::Granted } else { Confirmation::Withheld };
                    let mut ran = false;
                    let executed = g.execute(&preview, confirmation, || {
                        ran = true;
                        ((), true)
                    });
                    prop_assert_eq!(ran, executed.is_ok());
                    if ran {
                        if preview.tier == RiskTier::High {
                            prop_assert!(*confirm, "high-tier call ran without confirmation");
                        }
                        if preview.tier != RiskTier::Low {
                            prop_assert!(!g.breaker.tripped, "medium/high call ran with the breaker tripped");
                            executed_ids.push((preview.id, preview.tier));
                        }
                    }
                }
            }
        }
        // Audit the persisted log independently of the governor's memory.
        let entries = if log_path.exists() {
            DecisionLog::load(&log_path).map_err(|e| TestCaseError::fail(e.to_string()))?
        } else {
            Vec::new()
        };
        let mut previews = BTreeSet::new();
        let mut tripped = false;
        let mut executions = 0;
        for e in &entries {
            match e.kind {
                LogKind::Preview => {
                    previews.insert(e.preview_id.unwrap());
                }
                LogKind::Reset => tripped = false,
                LogKind::Decision => {
                    if e.reason == Some(toolsmith_core::security::DecisionReason::BreakerTripped) {
                        tripped = true;
                    }
                }
                LogKind::Execution => {
                    if e.tier != Some(RiskTier::Low) {
                        executions += 1;
                        let id = e.preview_id.ok_or_else(|| TestCaseError::fail("execution without preview id"))?;
                        prop_assert!(previews.contains(&id), "execution of {} before its preview was persisted", e.tool);
                        prop_assert!(!tripped, "execution of {} after a breaker trip", e.tool);
                    }
                }
            }
        }
        prop_assert_eq!(executions, executed_ids.len());
        let mut s = sink.lock().unwrap();
        s.0 += 1;
        s.1 += executions;
        s.2 += entries.iter().filter(|e| e.reason == Some(toolsmith_core::security::DecisionReason::BreakerTripped)).count();
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let (sequences, executions, breaker_denials) = *stats.lock().unwrap();
    check(sequences >= 1000, || format!("only {sequences} sequences"))?;
    Ok(format!(
        "{sequences} sequences, {executions} medium/high executions audited, {breaker_denials} breaker denials, 0 violations"
    ))
}

fn direct_adapter_call(launch: &LaunchSpec, op: &str, arguments: &Map<String, Value>) -> Result<Value, String> {
    let script = "import asyncio, json, sys\nimport adapter\n\
        print(json.dumps(asyncio.run(getattr(adapter, sys.argv[1])(**json.loads(sys.argv[2])))))\n";
    let mut cmd = Command::new(&launch.python);
    cmd.arg("-c").arg(script).arg(op).arg(Value::Object(arguments.clone()).to_string());
    cmd.current_dir(&launch.bundle_dir);
    for (k, v) in launch.environment() {
        cmd.env(k, v);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("direct call {op}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).map_err(|e| format!("direct call {op}: {e}"))
}

// 9. Served through the registry over a socket, each endpoint returns what
// the adapter returns when called directly.
fn c9_wire(ctx: &mut Context) -> Verdict {
    let run = first_run(ctx)?;
    check(!run.finalized.is_empty(), || "no finalized bundles".into())?;
    let mut registry = Registry::default();
    for dir in run.finalized.values() {
        registry.register_bundle(dir).map_err(|e| e.to_string())?;
    }
    let registry = Arc::new(registry);
    let state_dir = ctx._work.path().join("wire");
    std::fs::create_dir_all(&state_dir).unwrap();
    let governor = Governor::new(&SecurityPolicy::default(), DecisionLog::in_memory(), Box::new(ManualClock::new(0.0)));
    let state = Arc::new(ServerState::new(registry.clone(), Arc::new(Mutex::new(governor)), &state_dir.join("spill")));
    let pool_registry = registry.clone();
    let socket = state_dir.join("toolsmith.sock");
    let server = serve_socket(state, &socket, move || {
        Box::new(ServicePool::new(pool_registry.clone())) as Box<dyn ToolExecutor + Send>
    })
    .map_err(|e| e.to_string())?;

    let stream = std::os::unix::net::UnixStream::connect(server.path()).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(300))).ok();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut next_id = 0;
    let mut rpc = |method: &str, params: Value| -> Result<Value, String> {
        next_id += 1;
        let msg = json!({"jsonrpc": "2.0", "id": next_id, "method": method, "params": params});
        writeln!(writer, "{msg}").map_err(|e| e.to_string())?;
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| e.to_string())?;
        let reply: Value = serde_json::from_str(&line).map_err(|e| format!("{method}: {e}: {line}"))?;
        check(reply["id"] == json!(next_id), || format!("{method}: reply id {}", reply["id"]))?;
        reply.get("result").cloned().ok_or_else(|| format!("{method}: {}", reply["error"]))
    };

    rpc("initialize", json!({"protocolVersion": "2024-11-05", "capabilities": {}}))?;
    let listed: BTreeSet<String> = rpc("tools/list", json!({}))?["tools"]
        .as_array()
        .ok_or("tools/list has no tools array")?
        .iter()
        .filter_map(|t| t["name"].as_str().map(str::to_string))
        .collect();
    let registered: BTreeSet<String> = registry.tools.keys().cloned().collect();
    check(listed == registered, || format!("listed {listed:?} registered {registered:?}"))?;

    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (name, descriptor) in &registry.tools {
        let service = &registry.services[&descriptor.service];
        let bundle = ServiceBundle::load(&service.dir).map_err(|e| e.to_string())?;
        let arguments = bundle
            .manifest
            .example_calls
            .iter()
            .find(|c| c.tool == descriptor.service_tool)
            .map(|c| c.arguments.clone())
            .ok_or_else(|| format!("{name}: no example call"))?;
        let reply = rpc(
            "tools/call",
            json!({"name": name, "arguments": arguments, "_meta": {"confirmation": "granted"}}),
        )?;
        let wire = reply["structuredContent"].clone();
        let text: Value = reply["content"][0]["text"]
            .as_str()
            .and_then(|t| serde_json::from_str(t).ok())
            .unwrap_or(Value::Null);
        let direct = direct_adapter_call(&service.launch, &descriptor.service_tool, &arguments)?;
        if wire != direct || text != direct || wire["ok"] != json!(true) {
            mismatches.push(format!("{name}: wire {wire} text {text} direct {direct}"));
        }
        compared += 1;
    }
    rpc("shutdown", json!({}))?;
    server.shutdown();
    check(mismatches.is_empty(), || mismatches.join("; "))?;
    Ok(format!(
        "{} services, {compared} endpoints listed and called; wire equals direct adapter output on all",
        registry.services.len()
    ))
}

// 10. Every finalized bundle passes the shape check.
fn c10_bundle_shape(ctx: &mut Context) -> Verdict {
    let run = first_run(ctx)?;
    let successes = run.report.successes;
    check(run.finalized.len() == successes, || {
        format!("{} finalized bundles for {successes} successes", run.finalized.len())
    })?;
    let mut endpoints = 0;
    for (case, dir) in &run.finalized {
        let bundle = ServiceBundle::load(dir).map_err(|e| format!("{case}: {e}"))?;
        for file in BUNDLE_FILES {
            check(dir.join(file).is_file(), || format!("{case}: {file} missing"))?;
        }
        let findings = check_bundle_shape(&bundle);
        check(findings.is_empty(), || {
            format!("{case}: {}", findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))
        })?;
        endpoints += bundle.manifest.endpoints.len();
    }
    Ok(format!("{} finalized bundles, {endpoints} endpoints, no shape findings", run.finalized.len()))
}
