//! Command-line front end. Results go to stdout (or `--output`); everything
//! else goes to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, IsTerminal, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::{ArgAction, Parser};

use crate::engine::FormulaId;
use crate::error::Error;
use crate::export::ExporterRegistry;
use crate::pipeline::{run, Config};
use crate::recovery::RecoveryOptions;

/// Environment variable selecting the log level (error, warn, info, debug).
pub const LOG_ENV: &str = "SPECFAULT_LOG";

#[derive(Debug, Parser)]
#[command(name = "specfault", version, about = "Rank source lines by how likely they are to be faulty")]
pub struct Args {
    /// Project root; source paths in reports are relative to it.
    #[arg(long = "projectpath", value_name = "DIR")]
    pub project_path: PathBuf,

    #[arg(long, default_value = "ochiai")]
    pub formula: String,

    /// Only lines scoring strictly above this are reported.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,

    #[arg(long = "test-timeout-ms", default_value_t = 60_000, value_name = "MS")]
    pub test_timeout_ms: u64,

    /// Tests run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// console, json, json-tree or csv.
    #[arg(long, default_value = "console")]
    pub format: String,

    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Read per-test reports from DIR instead of running tests.
    #[arg(long = "coverage-dir", value_name = "DIR")]
    pub coverage_dir: Option<PathBuf>,

    /// Outcome list for LCOV reports in the coverage directory.
    #[arg(long, value_name = "FILE")]
    pub outcomes: Option<PathBuf>,

    /// Adapter file describing how to discover and run tests [default:
    /// <projectpath>/specfault-adapter.toml].
    #[arg(long, value_name = "FILE")]
    pub adapter: Option<PathBuf>,

    /// Keep per-test artifacts and reports here.
    #[arg(long = "work-dir", value_name = "DIR")]
    pub work_dir: Option<PathBuf>,

    /// `at`, `file-line-in`, or a regex with named groups `file` and `line`.
    #[arg(long = "trace-grammar", default_value = "at", value_name = "NAME|REGEX")]
    pub trace_grammar: String,

    #[arg(
        long = "recover-exceptions",
        default_value_t = true,
        action = ArgAction::Set,
        num_args = 0..=1,
        default_missing_value = "true",
        value_name = "BOOL"
    )]
    pub recover_exceptions: bool,

    /// Recover every executable line of the enclosing block, not just those
    /// up to the frame line.
    #[arg(long = "recover-whole-block")]
    pub recover_whole_block: bool,

    /// Line-comment prefixes, overriding the per-language defaults.
    #[arg(long = "comment-prefixes", value_delimiter = ',', value_name = "PREFIX,...")]
    pub comment_prefixes: Option<Vec<String>>,

    /// Only keep lines in files matching one of these globs.
    #[arg(long, value_name = "GLOB")]
    pub include: Vec<String>,

    #[arg(long, value_name = "GLOB")]
    pub exclude: Vec<String>,
}

impl Args {
    pub fn to_config(&self) -> Result<Config, Error> {
        let mut c = Config::new(&self.project_path);
        c.formula = FormulaId::new(&self.formula)?;
        c.threshold = self.threshold;
        c.test_timeout = Duration::from_millis(self.test_timeout_ms);
        c.jobs = self.jobs;
        c.coverage_dir = self.coverage_dir.clone();
        c.outcomes_file = self.outcomes.clone();
        c.adapter_file = self.adapter.clone();
        c.work_dir = self.work_dir.clone();
        c.trace_grammar = self.trace_grammar.clone();
        c.recover_exceptions = self.recover_exceptions;
        c.recovery = RecoveryOptions {
            whole_block: self.recover_whole_block,
            comment_prefixes: self.comment_prefixes.clone(),
            strict: false,
        };
        c.include_globs = self.include.clone();
        c.exclude_globs = self.exclude.clone();
        Ok(c)
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .try_init();
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    init_logging();
    match execute(&args, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "specfault: {e}");
            e.exit_code()
        }
    }
}

fn execute(args: &Args, stdout: &mut dyn Write) -> Result<(), Error> {
    let exporters = ExporterRegistry::default();
    // Unknown formats are usage errors: reject before running any tests.
    let exporter = exporters.get(&args.format)?;
    let report = run(&args.to_config()?)?;
    match &args.output {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            exporter(&report, &mut w)?;
            w.flush().map_err(crate::export::ExportError::from)?;
        }
        None => {
            exporter(&report, stdout)?;
        }
    }
    Ok(())
}
