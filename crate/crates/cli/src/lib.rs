//! Command-line front end: `search`, `convert`, `scan`, `serve`, `ask` and `bench`.
//!
//! [`run_command`] takes argv, the environment and the standard streams
//! explicitly so it can be driven from tests. Exit codes: 0 success,
//! 1 conversion or plan failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use toolsmith_core::bench::{record_corpus, run_bench, write_bench_outputs, BenchConfig, CaseStatus, Corpus};
use toolsmith_core::config::{ConfigError, PartialConfig, RunConfig};
use toolsmith_core::gateway::{Gateway, GatewayMode, HttpBackend, HttpBackendConfig, Provenance};
use toolsmith_core::generator::{GenerationRules, ServiceBundle};
use toolsmith_core::pipeline::{convert, ConvertOptions};
use toolsmith_core::runtime::{
    execute_plan, plan_invocation, replan, serve_stdio, Confirmer, InvocationPlan, LaunchSpec, Registry, ServerState,
    ServicePool, SessionState, REGISTRY_FILE,
};
use toolsmith_core::search::{select_repository, GitHubClient, SearchClient, StubIndex, UserQuery};
use toolsmith_core::security::{scan_bundle, Confirmation, DecisionLog, ExecutionPreview, Governor, SystemClock};
use toolsmith_core::verify::HttpPullRequestHook;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "toolsmith", version, about = "Turn Python repositories into governed MCP tool services")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalFlags {
    /// TOML config file (also TOOLSMITH_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workspace_root: Option<PathBuf>,
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    /// live, replay or record.
    #[arg(long, global = true)]
    gateway_mode: Option<GatewayMode>,
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// Repositories kept from a search (K).
    #[arg(long, global = true)]
    search_k: Option<usize>,
    /// Topic keyword cap (m).
    #[arg(long, global = true)]
    topic_cap: Option<usize>,
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    #[arg(long, global = true)]
    security_policy: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    test_timeout_secs: Option<u64>,
    /// `default`, an index URL, or `local:<dir>`.
    #[arg(long, global = true)]
    package_index: Option<String>,
}

impl GlobalFlags {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            workspace_root: self.workspace_root.clone(),
            output_root: self.output_root.clone(),
            gateway_mode: self.gateway_mode,
            transcript: self.transcript.clone(),
            search_k: self.search_k,
            topic_cap: self.topic_cap,
            max_rounds: self.max_rounds,
            security_policy: self.security_policy.clone(),
            quota: None,
            parallelism: self.parallelism,
            test_timeout_secs: self.test_timeout_secs,
            package_index: self.package_index.clone(),
            runtime_search_paths: None,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find a repository for a natural-language request.
    Search {
        query: String,
        /// Skip the search and use this repository.
        #[arg(long)]
        repo_link: Option<String>,
        /// Search a local JSON index instead of GitHub.
        #[arg(long)]
        stub_index: Option<PathBuf>,
    },
    /// Convert one repository into an MCP service bundle.
    Convert {
        #[arg(long)]
        repo: String,
        #[arg(long)]
        run_id: Option<String>,
        /// Open a pull request through this URL after committing.
        #[arg(long)]
        pr_hook_url: Option<String>,
    },
    /// Scan a bundle directory for security findings.
    Scan { bundle: PathBuf },
    /// Serve registered tools over stdio.
    Serve {
        /// Register these finalized bundle directories first.
        #[arg(long = "register")]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Plan and run tool calls for a request, then take follow-ups from stdin.
    Ask {
        query: String,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Answer every confirmation with yes.
        #[arg(long)]
        yes: bool,
    },
    /// Run the fixture corpus under replay and write the bench report.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// Where the reports go; defaults to the work directory.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Re-record transcripts from the case scripts instead of replaying.
        #[arg(long)]
        record: bool,
    },
}

/// Standard streams for one invocation.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

enum Failure {
    Usage(String),
    Failed(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure::Failed(e.to_string())
}

/// Parse, configure, dispatch. Never panics on malformed input.
pub fn run_command(argv: &[String], env: &BTreeMap<String, String>, io: &mut Io<'_>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let stream: &mut dyn Write = if e.use_stderr() { io.err } else { io.out };
            let _ = write!(stream, "{}", e.render());
            return code;
        }
    };
    let outcome = effective_config(&cli, env).and_then(|config| dispatch(&cli.command, &config, env, io));
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(message)) => {
            let _ = writeln!(io.err, "error: {message}");
            EXIT_USAGE
        }
        Err(Failure::Failed(message)) => {
            let _ = writeln!(io.err, "error: {message}");
            EXIT_FAILURE
        }
    }
}

fn needs_transcript(command: &Command) -> bool {
    !matches!(command, Command::Scan { .. } | Command::Serve { .. } | Command::Bench { .. })
}

/// Flags over `TOOLSMITH_*` variables over the config file over defaults.
fn effective_config(cli: &Cli, env: &BTreeMap<String, String>) -> Result<RunConfig, Failure> {
    let file_path = cli.global.config.clone().or_else(|| env.get("TOOLSMITH_CONFIG").map(PathBuf::from));
    let file = match &file_path {
        Some(path) => PartialConfig::from_file(path)?,
        None => PartialConfig::default(),
    };
    let mut flags = cli.global.layer();
    // Subcommands that never call the model do not need a transcript.
    if !needs_transcript(&cli.command) && flags.gateway_mode.is_none() && flags.transcript.is_none() {
        flags.transcript = Some(PathBuf::from("-"));
    }
    let config = RunConfig::resolve(flags, PartialConfig::from_env(env)?, file)?;
    config.prepare_roots()?;
    Ok(config)
}

/// The effective configuration for `argv`, without running anything.
pub fn resolve_config(argv: &[String], env: &BTreeMap<String, String>) -> Result<RunConfig, String> {
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    effective_config(&cli, env).map_err(|e| match e {
        Failure::Usage(m) | Failure::Failed(m) => m,
    })
}

fn gateway(config: &RunConfig, env: &BTreeMap<String, String>) -> Result<Gateway, Failure> {
    let live = || -> Result<Arc<HttpBackend>, Failure> {
        let endpoint = env
            .get(HttpBackendConfig::ENDPOINT_VAR)
            .cloned()
            .ok_or_else(|| Failure::Usage(format!("{} is not set", HttpBackendConfig::ENDPOINT_VAR)))?;
        let backend = HttpBackend::new(HttpBackendConfig {
            endpoint,
            api_key: env.get(HttpBackendConfig::KEY_VAR).cloned(),
            model: env.get(HttpBackendConfig::MODEL_VAR).cloned().unwrap_or_else(|| "default".into()),
            timeout: Duration::from_secs(120),
        })
        .map_err(failed)?;
        Ok(Arc::new(backend))
    };
    let transcript = || {
        config
            .transcript
            .clone()
            .ok_or_else(|| Failure::Usage("a transcript path is required".into()))
    };
    match config.gateway_mode {
        GatewayMode::Live => Ok(Gateway::live(live()?)),
        GatewayMode::Replay => Gateway::replay_file(&transcript()?).map_err(|e| Failure::Usage(e.to_string())),
        GatewayMode::Record => {
            let model = env.get(HttpBackendConfig::MODEL_VAR).cloned().unwrap_or_else(|| "default".into());
            let provenance = Provenance::new(model, env.get("TOOLSMITH_RECORDED_ON").cloned().unwrap_or_default());
            Gateway::recording(live()?, &transcript()?, provenance).map_err(failed)
        }
    }
}

fn dispatch(command: &Command, config: &RunConfig, env: &BTreeMap<String, String>, io: &mut Io<'_>) -> Result<i32, Failure> {
    match command {
        Command::Search {
            query,
            repo_link,
            stub_index,
        } => search(config, env, io, query, repo_link.as_deref(), stub_index.as_deref()),
        Command::Convert { repo, run_id, pr_hook_url } => {
            convert_command(config, env, io, repo, run_id.as_deref(), pr_hook_url.as_deref())
        }
        Command::Scan { bundle } => scan(config, io, bundle),
        Command::Serve { bundles, registry } => serve(config, io, bundles, registry.as_deref()),
        Command::Ask { query, registry, yes } => ask(config, env, io, query, registry.as_deref(), *yes),
        Command::Bench {
            corpus,
            report_dir,
            work_dir,
            record,
        } => bench(config, io, corpus, report_dir.as_deref(), work_dir.as_deref(), *record),
    }
}

fn search(
    config: &RunConfig,
    env: &BTreeMap<String, String>,
    io: &mut Io<'_>,
    query: &str,
    repo_link: Option<&str>,
    stub_index: Option<&Path>,
) -> Result<i32, Failure> {
    let query = match repo_link {
        Some(link) => UserQuery::with_link(query, link),
        None => UserQuery::new(query),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let client: Box<dyn SearchClient> = match stub_index {
        Some(path) => Box::new(StubIndex::load(path).map_err(|e| Failure::Usage(e.to_string()))?),
        None => Box::new(
            GitHubClient::new(
                env.get("TOOLSMITH_GITHUB_API").map(String::as_str).unwrap_or("https://api.github.com"),
                env.get(GitHubClient::TOKEN_VAR).cloned(),
            )
            .map_err(failed)?,
        ),
    };
    let gateway = gateway(config, env)?;
    let selection =
        select_repository(&gateway, client.as_ref(), &query, config.search_k, config.topic_cap).map_err(failed)?;
    if let Some(keywords) = &selection.keywords {
        let _ = writeln!(io.out, "keywords: {}", keywords.keywords().join(", "));
    }
    for report in &selection.evaluations {
        let _ = writeln!(io.out, "evaluated: {}", serde_json::to_string(report).unwrap_or_default());
    }
    match selection.candidate {
        Some(c) => {
            let _ = writeln!(io.out, "selected: {} {} ({} stars)", c.full_name, c.url, c.stars);
            Ok(EXIT_OK)
        }
        None => {
            let _ = writeln!(io.out, "no qualifying repository");
            Ok(EXIT_FAILURE)
        }
    }
}

fn default_run_id(repo: &str) -> String {
    let base: String = repo
        .trim_end_matches('/')
        .trim_end_matches(".git")
        .rsplit('/')
        .next()
        .unwrap_or("repo")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{}-{secs}", if base.is_empty() { "repo" } else { &base })
}

fn convert_command(
    config: &RunConfig,
    env: &BTreeMap<String, String>,
    io: &mut Io<'_>,
    repo: &str,
    run_id: Option<&str>,
    pr_hook_url: Option<&str>,
) -> Result<i32, Failure> {
    let gateway = gateway(config, env)?;
    let opts = ConvertOptions {
        workspace_root: config.workspace_root.clone(),
        run_id: run_id.map(str::to_string).unwrap_or_else(|| default_run_id(repo)),
        output_root: Some(config.output_root.clone()),
        env: config.env_config(),
        max_rounds: config.max_rounds,
        rules: GenerationRules::standard(),
        security: config.security()?,
        test_timeout: config.test_timeout(),
    };
    let hook = pr_hook_url.map(|url| HttpPullRequestHook {
        url: url.to_string(),
        token_env: "TOOLSMITH_PR_TOKEN".into(),
    });
    let conversion = convert(
        &gateway,
        repo,
        &opts,
        hook.as_ref().map(|h| h as &dyn toolsmith_core::verify::PullRequestHook),
    )
    .map_err(failed)?;
    let record = &conversion.record;
    let _ = writeln!(io.out, "run: {}", record.run_id);
    let _ = writeln!(io.out, "trace: {}", record.node_trace.join(" -> "));
    let _ = writeln!(
        io.out,
        "status: {:?}, rounds {}/{}, validated endpoints {}",
        record.final_status, record.rounds_used, record.max_rounds, record.validated_endpoints
    );
    if let Some(category) = record.failure_category {
        let _ = writeln!(io.out, "failure category: {category}");
    }
    let _ = writeln!(io.out, "record: {}", conversion.record_path().display());
    let _ = writeln!(io.out, "reports: {}", conversion.workspace.reports_dir().display());
    if let Some(f) = &conversion.finalized {
        let _ = writeln!(io.out, "bundle: {} (commit {})", f.dir.display(), f.commit);
        if let Some(pr) = &f.pull_request {
            let _ = writeln!(io.out, "pull request: {pr}");
        }
    }
    Ok(if conversion.succeeded() { EXIT_OK } else { EXIT_FAILURE })
}

fn scan(config: &RunConfig, io: &mut Io<'_>, dir: &Path) -> Result<i32, Failure> {
    let bundle = ServiceBundle::load(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    // Paths are judged against the bundle's source tree when it has a launch spec.
    let default_root = std::fs::read_to_string(dir.join("launch.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<LaunchSpec>(&t).ok())
        .map(|l| l.source_dir)
        .unwrap_or_else(|| dir.to_path_buf());
    let policy = config.security()?;
    let paths = policy.path_policy(&default_root).map_err(|e| Failure::Usage(e.to_string()))?;
    let report = scan_bundle(&bundle, &paths, &policy.waivers);
    let path = dir.join("security_report.json");
    report.write(&path).map_err(failed)?;
    for f in &report.findings {
        let _ = writeln!(
            io.out,
            "{}:{}: {} [{:?}, {:?}] {}",
            f.file, f.line, f.rule_id, f.axis, f.severity, f.detail
        );
    }
    let _ = writeln!(io.out, "report: {}", path.display());
    Ok(if report.is_clear() { EXIT_OK } else { EXIT_FAILURE })
}

fn registry_path(config: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| config.output_root.join(REGISTRY_FILE))
}

fn governor(config: &RunConfig) -> Result<Governor, Failure> {
    let log = DecisionLog::to_file(&config.workspace_root.join("decisions.jsonl"));
    Ok(Governor::new(&config.security()?, log, Box::new(SystemClock)))
}

fn serve(config: &RunConfig, io: &mut Io<'_>, bundles: &[PathBuf], registry: Option<&Path>) -> Result<i32, Failure> {
    let path = registry_path(config, registry);
    let mut reg = Registry::load_or_default(&path).map_err(|e| Failure::Usage(e.to_string()))?;
    for dir in bundles {
        let added = reg.register_bundle(dir).map_err(failed)?;
        let _ = writeln!(io.err, "registered {} tools from {}", added.len(), dir.display());
    }
    if !bundles.is_empty() {
        reg.save(&path).map_err(failed)?;
    }
    if reg.is_empty() {
        return Err(Failure::Failed("the registry has no tools".into()));
    }
    let registry = Arc::new(reg);
    let state = ServerState::new(
        registry.clone(),
        Arc::new(Mutex::new(governor(config)?)),
        &config.workspace_root.join("spill"),
    );
    let mut pool = ServicePool::new(registry);
    serve_stdio(&state, &mut pool).map_err(failed)?;
    Ok(EXIT_OK)
}

/// Asks on the terminal; anything but y/yes is a denial.
struct PromptConfirmer<'a, 'b> {
    io: &'a mut Io<'b>,
    always: bool,
}

impl Confirmer for PromptConfirmer<'_, '_> {
    fn confirm(&mut self, preview: &ExecutionPreview) -> Confirmation {
        let _ = writeln!(
            self.io.out,
            "high-risk call {}: {}\n  affected: {}\n  reversible: {}\n  estimated cpu: {:.2}s",
            preview.endpoint,
            preview.expected_scope,
            if preview.affected_objects.is_empty() { "-".to_string() } else { preview.affected_objects.join(", ") },
            preview.reversible,
            preview.estimated_cost.predicted_cpu_seconds
        );
        if self.always {
            let _ = writeln!(self.io.out, "approve? [y/N] y (--yes)");
            return Confirmation::Granted;
        }
        let _ = write!(self.io.out, "approve? [y/N] ");
        let _ = self.io.out.flush();
        let mut line = String::new();
        if self.io.input.read_line(&mut line).is_err() {
            return Confirmation::Withheld;
        }
        match line.trim().to_ascii_lowercase().as_str() {
            "y" | "yes" => Confirmation::Granted,
            _ => Confirmation::Withheld,
        }
    }
}

fn show_plan(out: &mut dyn Write, plan: &InvocationPlan) {
    let _ = writeln!(out, "plan: {}", plan.goal_summary);
    for (i, step) in plan.steps.iter().enumerate() {
        let bind = step.binds_output_to.as_deref().map(|v| format!(" -> {v}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "  {}. {}({}){bind}",
            i + 1,
            step.tool,
            serde_json::Value::Object(step.arguments.clone())
        );
    }
}

fn ask(
    config: &RunConfig,
    env: &BTreeMap<String, String>,
    io: &mut Io<'_>,
    query: &str,
    registry: Option<&Path>,
    yes: bool,
) -> Result<i32, Failure> {
    let reg = Registry::load_or_default(&registry_path(config, registry)).map_err(|e| Failure::Usage(e.to_string()))?;
    let gateway = gateway(config, env)?;
    let user_query = UserQuery::new(query).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut session = SessionState::new(user_query.clone());
    let mut governor = governor(config)?;
    let mut pool = ServicePool::new(Arc::new(reg.clone()));

    let plan = plan_invocation(&gateway, &user_query, &reg).map_err(failed)?;
    let mut request = query.to_string();
    let mut plan = plan;
    let mut code = EXIT_OK;
    loop {
        show_plan(io.out, &plan);
        let entry = {
            let mut confirmer = PromptConfirmer { io, always: yes };
            execute_plan(&request, &plan, &mut session, &reg, &mut governor, &mut pool, &mut confirmer).map_err(failed)?
        };
        let _ = write!(io.out, "{}", entry.answer);
        code = if entry.aborted.is_some() { EXIT_FAILURE } else { code };

        let _ = write!(io.out, "follow-up (empty to finish)> ");
        let _ = io.out.flush();
        let mut line = String::new();
        if io.input.read_line(&mut line).map_err(failed)? == 0 || line.trim().is_empty() {
            let _ = writeln!(io.out);
            break;
        }
        request = line.trim().to_string();
        let sub = UserQuery::new(request.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
        plan = match replan(&gateway, &session, &sub, &reg) {
            Ok(p) => p,
            Err(e) => {
                let _ = writeln!(io.out, "cannot plan that request: {e}");
                code = EXIT_FAILURE;
                break;
            }
        };
    }
    Ok(code)
}

fn bench(
    config: &RunConfig,
    io: &mut Io<'_>,
    corpus_path: &Path,
    report_dir: Option<&Path>,
    work_dir: Option<&Path>,
    record: bool,
) -> Result<i32, Failure> {
    let corpus = Corpus::load(corpus_path).map_err(|e| Failure::Usage(e.to_string()))?;
    let work_dir = match work_dir {
        Some(d) => d.to_path_buf(),
        None => {
            let mut n = 1;
            loop {
                let candidate = config.workspace_root.join(format!("bench-{n}"));
                if !candidate.exists() {
                    break candidate;
                }
                n += 1;
            }
        }
    };
    let bench_config = BenchConfig {
        work_dir: work_dir.clone(),
        parallelism: config.parallelism,
        max_rounds: config.max_rounds,
        env: config.env_config(),
        security: config.security()?,
        test_timeout: config.test_timeout(),
        finalize: true,
    };
    let run = if record {
        record_corpus(&corpus, &bench_config)
    } else {
        run_bench(&corpus, &bench_config)
    }
    .map_err(|e| match e {
        toolsmith_core::bench::BenchError::Precondition(m) => Failure::Usage(m),
        other => failed(other),
    })?;
    let dir = report_dir.map(Path::to_path_buf).unwrap_or(work_dir);
    std::fs::create_dir_all(&dir).map_err(failed)?;
    let paths = write_bench_outputs(&run, &dir).map_err(failed)?;
    let _ = write!(io.out, "{}", toolsmith_core::bench::render_summary(&run.report, &run.timing));
    for p in paths {
        let _ = writeln!(io.out, "wrote {}", p.display());
    }
    let harness_errors = run.report.cases.iter().filter(|c| c.status == CaseStatus::HarnessError);
    let mut code = EXIT_OK;
    for c in harness_errors {
        let _ = writeln!(io.err, "harness error in {}: {}", c.name, c.error.as_deref().unwrap_or(""));
        code = EXIT_FAILURE;
    }
    Ok(code)
}
