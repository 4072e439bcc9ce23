//! Test discovery and isolated per-test execution.
//!
//! Each test runs in its own child process, launched from the adapter's
//! command template with only the adapter's environment plus a small
//! allowlist. Coverage instrumentation is the adapter's business: its run
//! command must leave a per-test coverage artifact (canonical JSON lines or
//! LCOV) under `{outdir}`.

mod process;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::ingest::{
    merge, parse_canonical, parse_lcov_sections, serialize_report, IngestError, PerTestReport,
    RawException,
};
use crate::model::{CoverageMatrix, Location, Outcome, TestId, TestRecord};
use crate::recovery::{extract_trace, resolve_exception, FrameGrammar};

pub use process::{ProcessOutput, Termination, KILL_GRACE, STDERR_LIMIT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunnerError {
    #[error("invalid runner configuration: {0}")]
    InvalidConfig(String),
    #[error("test discovery failed ({status}): {stderr}")]
    DiscoveryFailed { status: String, stderr: String },
    #[error("test discovery reported {0:?} twice")]
    DuplicateTestName(String),
    #[error("test discovery produced an invalid test name {0:?}")]
    InvalidTestName(String),
    #[error("no tests found")]
    NoTestsFound,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactFormat {
    #[default]
    #[serde(alias = "CANONICAL")]
    Canonical,
    #[serde(alias = "LCOV")]
    Lcov,
}

pub fn default_env_allowlist() -> Vec<String> {
    let mut vars = vec!["PATH".to_string(), "HOME".to_string()];
    if cfg!(windows) {
        vars.extend(["TEMP", "TMP", "SystemRoot"].map(String::from));
    } else {
        vars.push("TMPDIR".to_string());
    }
    vars
}

/// How to discover and run a project's tests. Templates accept the
/// placeholders `{test}`, `{outdir}` and `{project}` and are split into argv
/// with shell-style quoting rules (no shell is involved unless the template
/// invokes one).
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    /// Prints one test identifier per output line.
    pub discover_command: String,
    pub run_command: String,
    /// Where the run command leaves the test's coverage; must live under `{outdir}`.
    pub coverage_artifact: String,
    #[serde(default)]
    pub format: ArtifactFormat,
    /// Relative to the project directory; defaults to it.
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    /// `KEY=VALUE` entries.
    #[serde(default)]
    pub env: Vec<String>,
    #[serde(default = "default_env_allowlist")]
    pub env_allowlist: Vec<String>,
}

impl AdapterConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        let cfg: AdapterConfig =
            toml::from_str(text).map_err(|e| RunnerError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| RunnerError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::InvalidConfig(m.to_string()));
        if !self.run_command.contains("{test}") {
            return bad("run_command must contain the {test} placeholder");
        }
        let rest = match self.coverage_artifact.strip_prefix("{outdir}") {
            Some(r) => r,
            None => return bad("coverage_artifact must start with {outdir}"),
        };
        if rest.split(['/', '\\']).any(|seg| seg == "..") {
            return bad("coverage_artifact must stay inside {outdir}");
        }
        if let Some(e) = self.env.iter().find(|e| !e.contains('=')) {
            return Err(RunnerError::InvalidConfig(format!(
                "env entry {e:?} is not KEY=VALUE"
            )));
        }
        split_template(&self.discover_command)?;
        split_template(&self.run_command)?;
        Ok(())
    }

    /// The complete child environment: allowlisted variables from this
    /// process, then the adapter's own entries.
    pub fn child_env(&self) -> Vec<(String, String)> {
        let mut env: Vec<(String, String)> = self
            .env_allowlist
            .iter()
            .filter_map(|k| std::env::var(k).ok().map(|v| (k.clone(), v)))
            .collect();
        for entry in &self.env {
            let (k, v) = entry.split_once('=').expect("validated");
            env.retain(|(ek, _)| ek != k);
            env.push((k.to_string(), v.to_string()));
        }
        env
    }
}

fn split_template(template: &str) -> Result<Vec<String>, RunnerError> {
    match shlex::split(template) {
        Some(argv) if !argv.is_empty() => Ok(argv),
        _ => Err(RunnerError::InvalidConfig(format!(
            "cannot split command template {template:?}"
        ))),
    }
}

fn expand(template_arg: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template_arg.to_string(), |s, (k, v)| s.replace(k, v))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub adapter: AdapterConfig,
    pub timeout: Duration,
    pub parallelism: usize,
    pub project_path: PathBuf,
    /// Scratch space: per-test `{outdir}`s and the canonical reports of the run.
    pub work_dir: PathBuf,
    /// Frame grammar for traces on stderr; the project root is always
    /// stripped from frame paths in addition to its own prefixes.
    pub grammar: FrameGrammar,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.timeout.is_zero() {
            return Err(RunnerError::InvalidConfig("timeout must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(RunnerError::InvalidConfig("parallelism must be at least 1".into()));
        }
        self.adapter.validate()
    }

    fn project_dir(&self) -> PathBuf {
        std::path::absolute(&self.project_path).unwrap_or_else(|_| self.project_path.clone())
    }

    fn working_dir(&self) -> PathBuf {
        let project = self.project_dir();
        match &self.adapter.working_dir {
            Some(w) => project.join(w),
            None => project,
        }
    }

    fn work_dir(&self) -> PathBuf {
        std::path::absolute(&self.work_dir).unwrap_or_else(|_| self.work_dir.clone())
    }

    /// Directory holding one canonical report file per executed test.
    pub fn reports_dir(&self) -> PathBuf {
        self.work_dir().join("reports")
    }
}

/// Absolute and canonical spellings of a project root, for turning absolute
/// paths in traces and coverage into project-relative ones.
pub fn project_prefixes(project: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for p in [std::path::absolute(project).ok(), fs::canonicalize(project).ok()]
        .into_iter()
        .flatten()
    {
        let s = p.to_string_lossy().replace('\\', "/");
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Runs the discovery command (under the test timeout) and returns the test
/// names it printed, in order.
pub fn discover_tests(config: &RunConfig) -> Result<Vec<TestId>, RunnerError> {
    config.validate()?;
    let project = config.project_dir();
    let project_str = project.to_string_lossy();
    let argv: Vec<String> = split_template(&config.adapter.discover_command)?
        .iter()
        .map(|a| expand(a, &[("{project}", &project_str)]))
        .collect();
    let env = config.adapter.child_env();
    let cwd = config.working_dir();
    let out = process::run(&process::ProcessSpec {
        argv: &argv,
        cwd: &cwd,
        env: &env,
        timeout: config.timeout,
        capture_stdout: true,
    });
    let status = match out.termination {
        Termination::Exited(0) => None,
        Termination::Exited(c) => Some(format!("exit code {c}")),
        Termination::Signaled(s) => Some(format!("killed by signal {s}")),
        Termination::TimedOut => Some(format!("timed out after {:?}", config.timeout)),
        Termination::SpawnFailed(e) => Some(format!("could not start: {e}")),
    };
    if let Some(status) = status {
        return Err(RunnerError::DiscoveryFailed {
            status,
            stderr: out.stderr,
        });
    }

    let mut seen = HashSet::new();
    let mut tests = Vec::new();
    for line in out.stdout.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !seen.insert(line.to_string()) {
            return Err(RunnerError::DuplicateTestName(line.to_string()));
        }
        tests.push(TestId::new(line).map_err(|_| RunnerError::InvalidTestName(line.to_string()))?);
    }
    if tests.is_empty() {
        warn!("test discovery produced no tests");
    }
    Ok(tests)
}

/// Filesystem-safe directory name for a test: a readable prefix plus a hash
/// of the full name.
fn test_dir_name(test: &TestId) -> String {
    let readable: String = test
        .as_str()
        .chars()
        .take(48)
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    // FNV-1a
    let hash = test
        .as_str()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    format!("{readable}-{:08x}", hash as u32)
}

fn read_artifact(path: &Path, format: ArtifactFormat) -> Option<(BTreeSet<Location>, Option<RawException>)> {
    let text = fs::read_to_string(path).ok()?;
    match format {
        ArtifactFormat::Canonical => {
            let reports = parse_canonical(&text).ok()?;
            let raw = reports.iter().find_map(|r| r.raw_trace.clone());
            Some((reports.into_iter().flat_map(|r| r.covered).collect(), raw))
        }
        ArtifactFormat::Lcov => {
            let sections = parse_lcov_sections(&text).ok()?;
            Some((sections.into_iter().flat_map(|s| s.covered).collect(), None))
        }
    }
}

/// Runs one test in its own process. Every failure mode is encoded in the
/// outcome rather than returned as an error.
pub fn execute_test(test: &TestId, config: &RunConfig) -> PerTestReport {
    let outdir = config.work_dir().join("tests").join(test_dir_name(test));
    let _ = fs::remove_dir_all(&outdir);
    if let Err(e) = fs::create_dir_all(&outdir) {
        warn!(%test, "cannot create {}: {e}", outdir.display());
        return PerTestReport::new(TestRecord::new(test.clone(), Outcome::Crashed), BTreeSet::new());
    }
    let project = config.project_dir();
    let vars = [
        ("{test}", test.as_str()),
        ("{outdir}", &*outdir.to_string_lossy()),
        ("{project}", &*project.to_string_lossy()),
    ]
    .map(|(k, v)| (k, v.to_string()));
    let vars: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();

    let argv: Vec<String> = match split_template(&config.adapter.run_command) {
        Ok(a) => a.iter().map(|a| expand(a, &vars)).collect(),
        Err(_) => Vec::new(),
    };
    let artifact = PathBuf::from(expand(&config.adapter.coverage_artifact, &vars));
    let env = config.adapter.child_env();
    let cwd = config.working_dir();

    debug!(%test, ?argv, "running test");
    let out = process::run(&process::ProcessSpec {
        argv: &argv,
        cwd: &cwd,
        env: &env,
        timeout: config.timeout,
        capture_stdout: false,
    });
    let parsed = read_artifact(&artifact, config.adapter.format);
    let artifact_ok = parsed.is_some();
    let (covered, artifact_trace) = parsed.unwrap_or_default();

    let outcome = match &out.termination {
        Termination::TimedOut => Outcome::Timeout,
        Termination::Exited(0) if artifact_ok => Outcome::Passed,
        Termination::Exited(c) if *c != 0 && artifact_ok => Outcome::Failed,
        Termination::Exited(_) | Termination::Signaled(_) | Termination::SpawnFailed(_) => {
            Outcome::Crashed
        }
    };
    if let Termination::SpawnFailed(e) = &out.termination {
        warn!(%test, "could not start test process: {e}");
    }
    info!(%test, %outcome, elapsed_ms = out.elapsed.as_millis() as u64, "test finished");

    let mut record = TestRecord {
        test: test.clone(),
        outcome,
        wall_time_ms: out.elapsed.as_millis() as u64,
        exception: None,
    };
    let mut strip = config.grammar.strip_prefixes.clone();
    strip.extend(project_prefixes(&project));
    let grammar = config.grammar.clone().with_strip_prefixes(strip);
    // A trace on stderr wins over one the adapter put in the artifact.
    let raw_trace = outcome
        .admits_exception()
        .then(|| {
            extract_trace(&out.stderr, &grammar)
                .map(|text| RawException {
                    type_name: None,
                    message: None,
                    trace: Some(text),
                })
                .or(artifact_trace)
        })
        .flatten();
    if let Some(raw) = &raw_trace {
        match resolve_exception(raw, &grammar) {
            Ok(ex) => record.exception = Some(ex),
            Err(e) => debug!(%test, "no usable stack trace: {e}"),
        }
    }
    PerTestReport {
        record,
        covered,
        raw_trace,
    }
}

/// Discovers and executes every test with `parallelism` worker slots. The
/// reports come back in discovery order and are also written, one canonical
/// file per test, to [`RunConfig::reports_dir`].
pub fn run_suite_reports(config: &RunConfig) -> Result<Vec<PerTestReport>, RunnerError> {
    let tests = discover_tests(config)?;
    if tests.is_empty() {
        return Err(RunnerError::NoTestsFound);
    }
    let reports_dir = config.reports_dir();
    let _ = fs::remove_dir_all(&reports_dir);
    fs::create_dir_all(&reports_dir).map_err(|e| RunnerError::Io {
        path: reports_dir.clone(),
        message: e.to_string(),
    })?;

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, PerTestReport)>();
    let workers = config.parallelism.min(tests.len());
    let mut slots: Vec<Option<PerTestReport>> = vec![None; tests.len()];
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let tests = &tests;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(test) = tests.get(i) else { break };
                let report = execute_test(test, config);
                if tx.send((i, report)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, report) in rx {
            slots[i] = Some(report);
        }
    });

    let reports: Vec<PerTestReport> = slots
        .into_iter()
        .map(|r| r.expect("every test produces a report"))
        .collect();
    for (i, report) in reports.iter().enumerate() {
        let path = reports_dir.join(format!("{i:06}.jsonl"));
        fs::write(&path, format!("{}\n", serialize_report(report))).map_err(|e| {
            RunnerError::Io {
                path,
                message: e.to_string(),
            }
        })?;
    }
    Ok(reports)
}

pub fn run_suite(config: &RunConfig) -> Result<(CoverageMatrix, Vec<TestRecord>), RunnerError> {
    Ok(merge(run_suite_reports(config)?)?)
}
