use super::*;
use crate::analysis::SymbolRef;
use crate::generator::{Manifest, ToolEndpoint, ToolParameter};
use serde_json::{json, Map};

fn bundle(adapter: &str) -> ServiceBundle {
    ServiceBundle {
        files: BTreeMap::from([(crate::generator::templates::ADAPTER_PY.to_string(), adapter.to_string())]),
        manifest: Manifest {
            service_name: "s".into(),
            description: String::new(),
            run_id: "r".into(),
            endpoints: Vec::new(),
            dependencies: Vec::new(),
            usage: String::new(),
            example_calls: Vec::new(),
        },
        run_id: "r".into(),
        extra_files: Vec::new(),
    }
}

fn policy() -> PathPolicy {
    PathPolicy::new(vec![PathBuf::from("/work/run")], Vec::new()).unwrap()
}

fn rules(findings: &[SecurityFinding]) -> Vec<&str> {
    findings.iter().filter(|f| f.is_blocking()).map(|f| f.rule_id.as_str()).collect()
}

#[test]
fn literal_paths_are_checked_after_normalization() {
    let p = policy();
    assert!(p.permits(Path::new("/work/run")));
    assert!(p.permits(Path::new("/work/run/out.txt")));
    assert!(p.permits(Path::new("sub/../out.txt")));
    assert!(!p.permits(Path::new("../../etc/passwd")));
    assert!(!p.permits(Path::new("/work/run/../other")));
    assert!(!p.permits(Path::new("/work/runner")));
    assert!(!p.permits_literal("~/x"));
    assert!(PathPolicy::new(Vec::new(), Vec::new()).is_err());
    assert!(PathPolicy::new(vec!["rel".into()], Vec::new()).is_err());
    let denied = PathPolicy::new(vec!["/work/run".into()], vec!["/work/run/secrets/*".into()]).unwrap();
    assert!(!denied.permits(Path::new("/work/run/secrets/key")));
}

#[test]
fn confidentiality_scan() {
    let inside = "async def save(text):\n    open('/work/run/out.txt', 'w').write(text)\n";
    assert!(scan_confidentiality(&bundle(inside), &policy()).is_empty());
    let root = "async def ls():\n    return os.listdir('/work/run')\n";
    assert!(scan_confidentiality(&bundle(root), &policy()).is_empty());
    let escape = "async def leak():\n    return open('../../etc/passwd').read()\n";
    assert_eq!(rules(&scan_confidentiality(&bundle(escape), &policy())), vec!["path-escape"]);
    let converted = "async def read(path):\n    path = _convert(path, \"opaque-file-path\")\n    return open(path).read()\n";
    assert!(scan_confidentiality(&bundle(converted), &policy()).is_empty());
    let raw = "async def read(path):\n    path = _convert(path, \"text\")\n    return open(path).read()\n";
    assert_eq!(rules(&scan_confidentiality(&bundle(raw), &policy())), vec!["unverified-path"]);
    let joined = "async def w(d):\n    d = _resolve_path(d)\n    pathlib.Path(d / 'a.txt').write_text('x')\n    open(os.path.join(d, '..', 'x'), 'w')\n";
    assert_eq!(rules(&scan_confidentiality(&bundle(joined), &policy())), vec!["path-escape"]);
}

#[test]
fn integrity_scan_is_sink_sensitive() {
    let concat = "async def run(name):\n    cmd = 'ls ' + name\n    return subprocess.run(cmd, shell=True)\n";
    assert_eq!(rules(&scan_integrity(&bundle(concat))), vec!["command-injection"]);
    let fstring = "async def run(name):\n    return subprocess.check_output(shlex.split(f'grep {name} x'))\n";
    assert_eq!(rules(&scan_integrity(&bundle(fstring))), vec!["command-injection"]);
    let system = "async def run(name):\n    os.system('echo ' + name)\n";
    assert_eq!(rules(&scan_integrity(&bundle(system))), vec!["command-injection"]);
    let literal = "async def run():\n    return subprocess.run(['ls', '-l'], capture_output=True)\n";
    assert!(scan_integrity(&bundle(literal)).is_empty());
    let param_list = "async def run(name):\n    return subprocess.run(['grep', name, 'x'])\n";
    assert!(scan_integrity(&bundle(param_list)).is_empty());
    let log_only = "async def run(name):\n    msg = 'running ' + name\n    logging.info(msg)\n    return subprocess.run(['true'])\n";
    assert!(scan_integrity(&bundle(log_only)).is_empty());
    let evaluated = "async def calc(expr):\n    return eval(expr)\n";
    assert_eq!(rules(&scan_integrity(&bundle(evaluated))), vec!["code-injection"]);
}

#[test]
fn availability_findings_are_advisory() {
    let src = "async def spin(t):\n    time.sleep(t)\n    while True:\n        pass\n";
    let findings = scan_availability(&bundle(src));
    assert_eq!(findings.len(), 2);
    assert!(findings.iter().all(|f| !f.is_blocking()));
}

#[test]
fn waivers_need_a_justification() {
    let escape = "async def leak():\n    return open('/etc/hosts').read()\n";
    let mut waiver = Waiver {
        rule_id: "path-escape".into(),
        file: "adapter.py".into(),
        justification: String::new(),
    };
    assert!(!scan_bundle(&bundle(escape), &policy(), std::slice::from_ref(&waiver)).is_clear());
    waiver.justification = "hosts file is public".into();
    assert!(scan_bundle(&bundle(escape), &policy(), &[waiver]).is_clear());
}

fn endpoint(tags: &[SideEffect]) -> ToolEndpoint {
    ToolEndpoint {
        tool_name: "t".into(),
        description: String::new(),
        parameters: vec![
            ToolParameter {
                name: "src".into(),
                wire_type: "opaque-file-path".into(),
                required: true,
                default: None,
                description: String::new(),
            },
            ToolParameter {
                name: "n_samples".into(),
                wire_type: "integer".into(),
                required: false,
                default: None,
                description: String::new(),
            },
        ],
        target: SymbolRef {
            module: "m".into(),
            name: "f".into(),
        },
        risk_annotations: tags.iter().copied().collect(),
    }
}

#[test]
fn risk_tiers() {
    assert_eq!(classify_risk(&endpoint(&[])).tier, RiskTier::Low);
    assert_eq!(classify_risk(&endpoint(&[SideEffect::ReadsFs])).tier, RiskTier::Low);
    assert_eq!(classify_risk(&endpoint(&[SideEffect::ReadsFs, SideEffect::WritesFs])).tier, RiskTier::Medium);
    assert_eq!(
        classify_risk(&endpoint(&[SideEffect::WritesFs, SideEffect::WritesFsOutside, SideEffect::Delete])).tier,
        RiskTier::High
    );
    assert_eq!(classify_risk(&endpoint(&[SideEffect::ExecutesSubprocess])).tier, RiskTier::High);
}

#[test]
fn cost_estimates() {
    let ep = endpoint(&[]);
    let mut history = CostHistory::default();
    let base = estimate_cost(&ep, &Map::new(), &history);
    assert_eq!(base.basis, CostBasis::StaticHeuristic);
    assert!((base.predicted_cpu_seconds - 0.05).abs() < 1e-12);

    let clamped = estimate_cost(&ep, json!({"n_samples": -10}).as_object().unwrap(), &history);
    assert_eq!(clamped.predicted_cpu_seconds, base.predicted_cpu_seconds);
    assert_eq!(clamped.notes.len(), 1);
    let big = estimate_cost(&ep, json!({"n_samples": 1_000_000}).as_object().unwrap(), &history);
    assert!(big.predicted_cpu_seconds > base.predicted_cpu_seconds);

    for _ in 0..4 {
        history.record("t", 2.0);
    }
    assert_eq!(estimate_cost(&ep, &Map::new(), &history).basis, CostBasis::StaticHeuristic);
    history.record("t", 2.0);
    let hist = estimate_cost(&ep, &Map::new(), &history);
    assert_eq!(hist.basis, CostBasis::Historical);
    assert_eq!(hist.predicted_cpu_seconds, 2.0);
}

#[test]
fn previews() {
    let ep = endpoint(&[]);
    let est = estimate_cost(&ep, &Map::new(), &CostHistory::default());
    let pure = build_preview(&ep, RiskTier::Low, &Map::new(), est.clone(), None);
    assert!(pure.affected_objects.is_empty());
    assert!(pure.reversible);

    let mut writer = endpoint(&[SideEffect::WritesFs]);
    writer.parameters[0].name = "targets".into();
    let args = json!({"targets": ["a.txt", "b.txt"]});
    let p = build_preview(&writer, RiskTier::Medium, args.as_object().unwrap(), est.clone(), None);
    assert_eq!(p.affected_objects, vec!["a.txt", "b.txt"]);
    assert!(!p.reversible);
    let undo = BTreeSet::from([SideEffect::WritesFs]);
    assert!(build_preview(&writer, RiskTier::Medium, &Map::new(), est.clone(), Some(&undo)).reversible);

    let sub = endpoint(&[SideEffect::ExecutesSubprocess]);
    assert!(!build_preview(&sub, RiskTier::High, &Map::new(), est, None).reversible);
}

fn governor() -> (Governor, ManualClock) {
    let clock = ManualClock::new(1000.0);
    let g = Governor::new(&SecurityPolicy::default(), DecisionLog::in_memory(), Box::new(clock.clone()));
    (g, clock)
}

#[test]
fn authorize_rules() {
    let (mut g, _) = governor();
    let low = g.prepare(&endpoint(&[]), &Map::new());
    assert!(g.authorize(&low, Confirmation::Withheld).allow);

    let high = g.prepare(&endpoint(&[SideEffect::Delete]), &Map::new());
    let high = g.surface(high).unwrap();
    let d = g.authorize(&high, Confirmation::Withheld);
    assert_eq!((d.allow, d.reason), (false, DecisionReason::ConfirmationRequired));
    assert!(g.authorize(&high, Confirmation::Granted).allow);

    let medium = g.prepare(&endpoint(&[SideEffect::WritesFs]), &Map::new());
    assert_eq!(g.authorize(&medium, Confirmation::Granted).reason, DecisionReason::PreviewRequired);
    let medium = g.surface(medium).unwrap();
    assert!(g.authorize(&medium, Confirmation::Withheld).allow);
}

#[test]
fn quota_denials_trip_the_breaker() {
    let (mut g, clock) = governor();
    g.quota.max_cpu_seconds = 1.0;
    let ep = endpoint(&[SideEffect::WritesFs]);
    let heavy = g.surface(g.prepare(&ep, json!({"n_samples": 1_000_000}).as_object().unwrap())).unwrap();
    for i in 0..3 {
        let d = g.authorize(&heavy, Confirmation::Granted);
        assert_eq!(d.reason, DecisionReason::QuotaExceeded, "attempt {i}");
        assert_eq!(g.breaker.tripped, i == 2);
    }
    let light = g.surface(g.prepare(&ep, &Map::new())).unwrap();
    assert_eq!(g.authorize(&light, Confirmation::Granted).reason, DecisionReason::BreakerTripped);
    clock.advance(10_000.0);
    assert!(!g.authorize(&light, Confirmation::Granted).allow, "trip persists until reset");
    g.reset();
    assert!(g.authorize(&light, Confirmation::Granted).allow);
}

#[test]
fn high_tier_burst_trips_and_window_expires() {
    let (mut g, clock) = governor();
    let high = g.surface(g.prepare(&endpoint(&[SideEffect::Network]), &Map::new())).unwrap();
    for _ in 0..5 {
        assert!(g.authorize(&high, Confirmation::Granted).allow);
    }
    assert_eq!(g.authorize(&high, Confirmation::Granted).reason, DecisionReason::BreakerTripped);
    g.reset();
    for _ in 0..5 {
        assert!(g.authorize(&high, Confirmation::Granted).allow);
        clock.advance(200.0);
    }
    assert!(g.authorize(&high, Confirmation::Granted).allow, "old attempts left the window");
}

#[test]
fn execution_goes_through_the_gate_and_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decision_log.jsonl");
    let clock = ManualClock::new(5.0);
    let mut g = Governor::new(&SecurityPolicy::default(), DecisionLog::to_file(&path), Box::new(clock));
    let high = g.surface(g.prepare(&endpoint(&[SideEffect::Delete]), &Map::new())).unwrap();
    assert!(g.execute(&high, Confirmation::Withheld, || ((), true)).is_err());
    assert!(g.execute(&high, Confirmation::Granted, || ((), true)).is_ok());
    let entries = DecisionLog::load(&path).unwrap();
    let kinds: Vec<LogKind> = entries.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, vec![LogKind::Preview, LogKind::Decision, LogKind::Decision, LogKind::Execution]);
    assert_eq!(entries, g.log().entries());
}

#[test]
fn pre_granted_tools_skip_the_prompt() {
    let policy = SecurityPolicy {
        pre_granted: BTreeSet::from(["t".to_string()]),
        ..SecurityPolicy::default()
    };
    let mut g = Governor::new(&policy, DecisionLog::in_memory(), Box::new(ManualClock::new(0.0)));
    let high = g.surface(g.prepare(&endpoint(&[SideEffect::Delete]), &Map::new())).unwrap();
    assert!(g.authorize(&high, Confirmation::Withheld).allow);
}

#[test]
fn policy_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.toml");
    std::fs::write(
        &path,
        "whitelist_roots = [\"/data\"]\npre_granted = [\"wipe\"]\n[quota]\nmax_cpu_seconds = 5.0\n[thresholds]\nmax_high_per_window = 2\n[[waivers]]\nrule_id = \"path-escape\"\nfile = \"adapter.py\"\njustification = \"reviewed\"\n",
    )
    .unwrap();
    let p = SecurityPolicy::load(&path).unwrap();
    assert_eq!(p.quota.max_cpu_seconds, 5.0);
    assert_eq!(p.quota.max_call_count, 100);
    assert_eq!(p.thresholds.max_high_per_window, 2);
    assert_eq!(p.thresholds.max_denials_per_window, 3);
    assert_eq!(p.waivers.len(), 1);
    assert!(p.path_policy(Path::new("/fallback")).unwrap().permits(Path::new("/data/x")));
}
