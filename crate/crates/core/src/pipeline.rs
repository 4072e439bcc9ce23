//! The end-to-end localization run behind both the CLI and the library API.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use globset::{Glob, GlobSet, GlobSetBuilder};
use tracing::{info, warn};

use crate::bridge::{annotate, build_span_tree, SpanNode};
use crate::engine::{FaultLocalizer, FormulaId, FormulaRegistry, SpectrumLocalizer};
use crate::error::Error;
use crate::export::{LocalizationReport, Totals};
use crate::ingest::{merge, parse_canonical, parse_lcov, PerTestReport};
use crate::model::{strip_path_prefix, Location, Outcome};
use crate::recovery::{
    recover_matrix, resolve_exception, FrameGrammar, FsSources, RecoveryOptions, SourceProvider,
};
use crate::runner::{project_prefixes, run_suite_reports, AdapterConfig, RunConfig};

/// Adapter file looked up in the project when neither an adapter nor a
/// coverage directory is given.
pub const DEFAULT_ADAPTER_FILE: &str = "specfault-adapter.toml";

/// Name of the outcome list inside an offline coverage directory.
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";

#[derive(Debug, Clone)]
pub struct Config {
    pub project_path: PathBuf,
    pub formula: FormulaId,
    pub threshold: f64,
    pub test_timeout: Duration,
    pub jobs: usize,
    /// Offline mode: read per-test reports from here instead of running tests.
    pub coverage_dir: Option<PathBuf>,
    /// Outcomes for LCOV reports in `coverage_dir`; defaults to its
    /// `outcomes.jsonl`.
    pub outcomes_file: Option<PathBuf>,
    pub adapter_file: Option<PathBuf>,
    /// Scratch directory for online runs; a temporary one is used and
    /// removed when unset.
    pub work_dir: Option<PathBuf>,
    /// Builtin grammar name or frame regex.
    pub trace_grammar: String,
    pub recover_exceptions: bool,
    pub recovery: RecoveryOptions,
    pub include_globs: Vec<String>,
    pub exclude_globs: Vec<String>,
}

impl Config {
    pub fn new(project_path: impl Into<PathBuf>) -> Self {
        Config {
            project_path: project_path.into(),
            formula: FormulaId::ochiai(),
            threshold: 0.0,
            test_timeout: Duration::from_millis(60_000),
            jobs: 1,
            coverage_dir: None,
            outcomes_file: None,
            adapter_file: None,
            work_dir: None,
            trace_grammar: "at".to_string(),
            recover_exceptions: true,
            recovery: RecoveryOptions::default(),
            include_globs: Vec::new(),
            exclude_globs: Vec::new(),
        }
    }
}

enum Mode {
    Online(PathBuf),
    Offline(PathBuf),
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn validate(config: &Config) -> Result<Mode, Error> {
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(config_err(format!(
            "threshold must lie in [0, 1], got {}",
            config.threshold
        )));
    }
    if config.jobs == 0 {
        return Err(config_err("jobs must be at least 1"));
    }
    if config.test_timeout.is_zero() {
        return Err(config_err("test timeout must be positive"));
    }
    if !config.project_path.is_dir() {
        return Err(config_err(format!(
            "project path {} is not a directory",
            config.project_path.display()
        )));
    }
    match (&config.adapter_file, &config.coverage_dir) {
        (Some(_), Some(_)) => Err(config_err(
            "give either an adapter file or a coverage directory, not both",
        )),
        (Some(a), None) => Ok(Mode::Online(a.clone())),
        (None, Some(d)) => {
            if !d.is_dir() {
                return Err(config_err(format!(
                    "coverage directory {} does not exist",
                    d.display()
                )));
            }
            Ok(Mode::Offline(d.clone()))
        }
        (None, None) => {
            let default = config.project_path.join(DEFAULT_ADAPTER_FILE);
            if default.is_file() {
                Ok(Mode::Online(default))
            } else {
                Err(config_err(format!(
                    "no adapter file given and no {DEFAULT_ADAPTER_FILE} in the project; \
                     pass --adapter or --coverage-dir"
                )))
            }
        }
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.contains(&e))
}

/// Reads an offline coverage directory: every `*.jsonl` file (other than the
/// outcome list) holds canonical reports; `*.info`/`*.lcov` files hold LCOV
/// whose outcomes come from the outcome list. Files are read in name order.
pub fn ingest_dir(dir: &Path, outcomes_file: Option<&Path>) -> Result<Vec<PerTestReport>, Error> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| config_err(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();

    let default_outcomes = dir.join(OUTCOMES_FILE);
    let outcomes_path = match outcomes_file {
        Some(p) => Some(p.to_path_buf()),
        None => default_outcomes.is_file().then_some(default_outcomes.clone()),
    };

    let mut reports = Vec::new();
    let mut lcov_texts = Vec::new();
    for path in &entries {
        if *path == default_outcomes || Some(path) == outcomes_path.as_ref() {
            continue;
        }
        if has_ext(path, &["jsonl"]) {
            reports.extend(parse_canonical(&read(path)?)?);
        } else if has_ext(path, &["info", "lcov"]) {
            lcov_texts.push(read(path)?);
        }
    }

    let mut outcome_reports = match &outcomes_path {
        Some(path) => parse_canonical(&read(path)?)?,
        None => Vec::new(),
    };
    let outcomes: HashMap<String, Outcome> = outcome_reports
        .iter()
        .map(|r| (r.record.test.as_str().to_string(), r.record.outcome))
        .collect();
    let index: HashMap<String, usize> = outcome_reports
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record.test.as_str().to_string(), i))
        .collect();
    for text in &lcov_texts {
        for lcov in parse_lcov(text, &outcomes)? {
            outcome_reports[index[lcov.record.test.as_str()]]
                .covered
                .extend(lcov.covered);
        }
    }
    reports.extend(outcome_reports);
    Ok(reports)
}

fn glob_set(patterns: &[String]) -> Result<Option<GlobSet>, Error> {
    if patterns.is_empty() {
        return Ok(None);
    }
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        b.add(Glob::new(p).map_err(|e| config_err(format!("bad glob {p:?}: {e}")))?);
    }
    b.build()
        .map(Some)
        .map_err(|e| config_err(format!("bad glob set: {e}")))
}

/// Runs the whole pipeline with the builtin formulas.
pub fn run(config: &Config) -> Result<LocalizationReport, Error> {
    run_with(config, &FormulaRegistry::default())
}

/// Runs the whole pipeline: tests (or offline ingestion), exception
/// recovery, filtering, ranking and span annotation.
pub fn run_with(config: &Config, formulas: &FormulaRegistry) -> Result<LocalizationReport, Error> {
    let mode = validate(config)?;
    let formula = formulas.get(config.formula.as_str())?;
    let include = glob_set(&config.include_globs)?;
    let exclude = glob_set(&config.exclude_globs)?;
    let prefixes = project_prefixes(&config.project_path);
    let grammar = FrameGrammar::resolve(&config.trace_grammar)?.with_strip_prefixes(prefixes.clone());

    let mut reports = match mode {
        Mode::Online(adapter_path) => {
            let adapter = AdapterConfig::load(&adapter_path)?;
            let (work_dir, temporary) = match &config.work_dir {
                Some(w) => (w.clone(), false),
                None => (scratch_dir(), true),
            };
            let run_config = RunConfig {
                adapter,
                timeout: config.test_timeout,
                parallelism: config.jobs,
                project_path: config.project_path.clone(),
                work_dir: work_dir.clone(),
                grammar: grammar.clone(),
            };
            let result = run_suite_reports(&run_config);
            if temporary {
                let _ = fs::remove_dir_all(&work_dir);
            }
            result?
        }
        Mode::Offline(dir) => {
            let reports = ingest_dir(&dir, config.outcomes_file.as_deref())?;
            if reports.is_empty() {
                return Err(crate::runner::RunnerError::NoTestsFound.into());
            }
            reports
        }
    };

    for report in &mut reports {
        report.covered = std::mem::take(&mut report.covered)
            .into_iter()
            .map(|loc| rebase(loc, &prefixes))
            .collect();
        if report.record.exception.is_none() && report.record.outcome.admits_exception() {
            if let Some(raw) = &report.raw_trace {
                match resolve_exception(raw, &grammar) {
                    Ok(ex) => report.record.exception = Some(ex),
                    Err(e) => warn!(test = %report.record.test, "no usable stack trace: {e}"),
                }
            }
        }
    }
    let (mut matrix, records) = merge(reports)?;

    let sources = FsSources::new(&config.project_path);
    let mut recovered = 0;
    if config.recover_exceptions {
        recovered = recover_matrix(&mut matrix, &records, &sources, &config.recovery).0;
        info!(recovered, "exception recovery done");
    }

    if include.is_some() || exclude.is_some() {
        matrix.retain_locations(|loc| {
            include.as_ref().is_none_or(|g| g.is_match(&loc.file))
                && !exclude.as_ref().is_some_and(|g| g.is_match(&loc.file))
        });
    }

    let ranked = SpectrumLocalizer::new(formula, config.threshold).localize(&matrix, &records)?;

    let mut spans = span_trees(
        ranked.iter().map(|s| s.location.file.as_str()).collect(),
        &sources,
        &config.recovery,
    );
    let annotated: Vec<_> = ranked
        .iter()
        .filter(|s| spans.contains_key(&s.location.file))
        .cloned()
        .collect();
    for w in annotate(&mut spans, &annotated) {
        warn!("{w}");
    }

    Ok(LocalizationReport {
        totals: Totals::from_records(&records),
        ranked,
        formula: config.formula.to_string(),
        recovered_line_count: recovered,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        spans,
    })
}

fn rebase(loc: Location, prefixes: &[String]) -> Location {
    if !loc.file.starts_with('/') {
        return loc;
    }
    Location {
        file: strip_path_prefix(&loc.file, prefixes),
        line: loc.line,
    }
}

/// Span trees for the given files; unreadable or (in strict mode) unbalanced
/// files are skipped with a warning.
fn span_trees(
    files: BTreeSet<&str>,
    sources: &dyn SourceProvider,
    options: &RecoveryOptions,
) -> BTreeMap<String, SpanNode> {
    let mut trees = BTreeMap::new();
    for file in files {
        let Some(source) = sources.read(file) else {
            info!("{file}: source not readable; no span tree");
            continue;
        };
        match build_span_tree(file, &source, &options.syntax_for(file)) {
            Ok(tree) => {
                trees.insert(file.to_string(), tree);
            }
            Err(e) => warn!("{e}; no span tree"),
        }
    }
    trees
}

fn scratch_dir() -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!("specfault-{}-{nanos:08x}", std::process::id()))
}
