//! Recovery of coverage lost when an exception interrupts a test between
//! coverage probes.
//!
//! Each stack frame names a line that certainly executed. The frame's
//! enclosing block is located in the source, and the straight-line prefix of
//! that block up to the frame line is re-added to the failing test's
//! coverage. Lines inside nested blocks that closed before the frame line are
//! left out, since whether their bodies ran cannot be known statically.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use regex::Regex;
use thiserror::Error;
use tracing::warn;

use crate::bridge::{tree_from_scan, SpanKind, SpanNode};
use crate::ingest::RawException;
use crate::model::{
    normalize_path, strip_path_prefix, CoverageMatrix, ExceptionRecord, Location, StackFrame,
    TestRecord,
};
use crate::syntax::{scan, SourceSyntax};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecoveryError {
    #[error("invalid frame pattern: {0}")]
    InvalidPattern(String),
    #[error("frame pattern must have named captures `file` and `line`")]
    MissingCaptures,
    #[error("unknown trace grammar {0:?}")]
    UnknownGrammar(String),
    #[error("empty stack trace")]
    EmptyTrace,
    #[error("no stack frames found in trace starting {0:?}")]
    NoFramesFound(String),
    #[error("{file}: unbalanced delimiters")]
    UnbalancedDelimiters { file: String },
    #[error("line {line} is outside {file}")]
    LineOutsideFile { file: String, line: u32 },
}

/// Frames shaped like `at SCOPE (FILE:LINE)`; a trailing `:COLUMN` is
/// tolerated.
pub const AT_PATTERN: &str =
    r"^\s*at\s+(?P<scope>[^()]*?)\s*\((?P<file>[^():]+):(?P<line>\d+)(?::\d+)?\)\s*$";

/// Frames shaped like `FILE:LINE: in SCOPE`.
pub const FILE_LINE_IN_PATTERN: &str =
    r"^\s*(?P<file>[^:\s]+):(?P<line>\d+):\s+in\s+(?P<scope>\S.*?)\s*$";

/// How stack-frame lines look in a trace.
#[derive(Debug, Clone)]
pub struct FrameGrammar {
    pattern: Regex,
    pub strip_prefixes: Vec<String>,
}

impl FrameGrammar {
    pub fn new(pattern: &str) -> Result<Self, RecoveryError> {
        let pattern =
            Regex::new(pattern).map_err(|e| RecoveryError::InvalidPattern(e.to_string()))?;
        let names: Vec<_> = pattern.capture_names().flatten().collect();
        if !names.contains(&"file") || !names.contains(&"line") {
            return Err(RecoveryError::MissingCaptures);
        }
        Ok(FrameGrammar {
            pattern,
            strip_prefixes: Vec::new(),
        })
    }

    /// `at` (the default) or `file-line-in`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "at" | "default" => Some(Self::new(AT_PATTERN).expect("builtin pattern")),
            "file-line-in" => Some(Self::new(FILE_LINE_IN_PATTERN).expect("builtin pattern")),
            _ => None,
        }
    }

    /// A builtin grammar name, or else a regular expression.
    pub fn resolve(spec: &str) -> Result<Self, RecoveryError> {
        match Self::named(spec) {
            Some(g) => Ok(g),
            None if spec.contains("(?P<") || spec.contains("(?<") => Self::new(spec),
            None => Err(RecoveryError::UnknownGrammar(spec.to_string())),
        }
    }

    pub fn with_strip_prefixes(mut self, prefixes: Vec<String>) -> Self {
        self.strip_prefixes = prefixes;
        self
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }

    pub fn parse_frame(&self, line: &str) -> Option<StackFrame> {
        let caps = self.pattern.captures(line)?;
        let line_no: u32 = caps.name("line")?.as_str().parse().ok().filter(|n| *n >= 1)?;
        let file = normalize_path(caps.name("file")?.as_str().trim()).ok()?;
        let file = strip_path_prefix(&file, &self.strip_prefixes);
        let scope = caps
            .name("scope")
            .map(|m| m.as_str().trim().to_string())
            .unwrap_or_default();
        Some(StackFrame {
            file,
            scope,
            line: line_no,
        })
    }
}

impl Default for FrameGrammar {
    fn default() -> Self {
        Self::named("at").expect("builtin grammar")
    }
}

/// Parses a raw trace: the first line is `Type: message`, and every later
/// line matching the grammar becomes a frame, in order.
pub fn parse_stack_trace(text: &str, grammar: &FrameGrammar) -> Result<ExceptionRecord, RecoveryError> {
    let mut lines = text.lines();
    let header = loop {
        match lines.next() {
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l.trim(),
            None => return Err(RecoveryError::EmptyTrace),
        }
    };
    // A trace may start straight with its frames.
    let headless = grammar.parse_frame(header);
    let (type_name, message) = match (&headless, header.split_once(": ")) {
        (Some(_), _) => (String::new(), String::new()),
        (None, Some((t, m))) => (t.to_string(), m.to_string()),
        (None, None) => (header.to_string(), String::new()),
    };
    let frames: Vec<StackFrame> = headless
        .into_iter()
        .chain(lines.filter_map(|l| grammar.parse_frame(l)))
        .collect();
    if frames.is_empty() {
        return Err(RecoveryError::NoFramesFound(header.to_string()));
    }
    Ok(ExceptionRecord {
        type_name,
        message,
        frames,
    })
}

/// Turns an exception as reported by a test into a parsed record. Explicit
/// `type`/`message` fields take precedence over the trace header.
pub fn resolve_exception(
    raw: &RawException,
    grammar: &FrameGrammar,
) -> Result<ExceptionRecord, RecoveryError> {
    let mut ex = parse_stack_trace(raw.trace.as_deref().unwrap_or(""), grammar)?;
    if let Some(t) = &raw.type_name {
        ex.type_name = t.clone();
    }
    if let Some(m) = &raw.message {
        ex.message = m.clone();
    }
    Ok(ex)
}

/// Cuts the trace out of noisy output (e.g. a test's stderr): from the line
/// just before the first frame to the end.
pub fn extract_trace(output: &str, grammar: &FrameGrammar) -> Option<String> {
    let lines: Vec<&str> = output.lines().collect();
    let first = lines.iter().position(|l| grammar.parse_frame(l).is_some())?;
    let start = lines[..first]
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .unwrap_or(first);
    Some(lines[start..].join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpan {
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclosingBlock {
    pub file: String,
    pub span: BlockSpan,
    /// Lenient mode found unbalanced delimiters; the span is best effort.
    pub unbalanced: bool,
}

/// The innermost block containing `line`, or the whole file when no block
/// does.
pub fn enclosing_block(
    file: &str,
    source: &str,
    line: u32,
    syntax: &SourceSyntax,
) -> Result<EnclosingBlock, RecoveryError> {
    let scanned = scan(source, syntax);
    if scanned.unbalanced && syntax.strict {
        return Err(RecoveryError::UnbalancedDelimiters {
            file: file.to_string(),
        });
    }
    let tree = tree_from_scan(file, &scanned);
    let node = innermost_block(&tree, line).ok_or_else(|| RecoveryError::LineOutsideFile {
        file: file.to_string(),
        line,
    })?;
    Ok(EnclosingBlock {
        file: file.to_string(),
        span: BlockSpan {
            start: node.start,
            end: node.end,
        },
        unbalanced: scanned.unbalanced,
    })
}

fn innermost_block(tree: &SpanNode, line: u32) -> Option<&SpanNode> {
    if line == 0 || !tree.contains(line) {
        return None;
    }
    let mut at = tree;
    while let Some(c) = at
        .children
        .iter()
        .find(|c| c.kind == SpanKind::Block && c.contains(line))
    {
        at = c;
    }
    Some(at)
}

/// Read access to project sources by normalized relative path.
pub trait SourceProvider: Sync {
    fn read(&self, file: &str) -> Option<Arc<str>>;
}

impl SourceProvider for HashMap<String, String> {
    fn read(&self, file: &str) -> Option<Arc<str>> {
        self.get(file).map(|s| Arc::from(s.as_str()))
    }
}

/// Reads files under a root directory, caching contents.
#[derive(Debug)]
pub struct FsSources {
    root: PathBuf,
    cache: RwLock<HashMap<String, Option<Arc<str>>>>,
}

impl FsSources {
    pub fn new(root: impl AsRef<Path>) -> Self {
        FsSources {
            root: root.as_ref().to_path_buf(),
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl SourceProvider for FsSources {
    fn read(&self, file: &str) -> Option<Arc<str>> {
        if let Some(hit) = self.cache.read().expect("cache lock").get(file) {
            return hit.clone();
        }
        let path = if Path::new(file).is_absolute() {
            PathBuf::from(file)
        } else {
            self.root.join(file)
        };
        let content = std::fs::read_to_string(path).ok().map(Arc::from);
        self.cache
            .write()
            .expect("cache lock")
            .insert(file.to_string(), content.clone());
        content
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryOptions {
    /// Add every executable line of the enclosing block, not just the prefix
    /// ending at the frame line.
    pub whole_block: bool,
    /// Overrides the per-file comment prefixes when set.
    pub comment_prefixes: Option<Vec<String>>,
    pub strict: bool,
}

impl RecoveryOptions {
    pub fn syntax_for(&self, file: &str) -> SourceSyntax {
        let mut s = SourceSyntax::for_path(file).strict(self.strict);
        if let Some(p) = &self.comment_prefixes {
            s = s.with_comment_prefixes(p.clone());
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recovered {
    pub added: BTreeSet<Location>,
    pub warnings: Vec<String>,
}

/// Lines the exception proves executed but `covered` lacks. The result is
/// disjoint from `covered`.
pub fn recover(
    record: &ExceptionRecord,
    sources: &dyn SourceProvider,
    covered: &BTreeSet<Location>,
    options: &RecoveryOptions,
) -> Recovered {
    let mut out = Recovered::default();
    for frame in &record.frames {
        let Some(source) = sources.read(&frame.file) else {
            out.warnings
                .push(format!("{}:{}: source not readable; frame skipped", frame.file, frame.line));
            continue;
        };
        let syntax = options.syntax_for(&frame.file);
        let scanned = scan(&source, &syntax);
        if scanned.unbalanced {
            if syntax.strict {
                out.warnings
                    .push(format!("{}: unbalanced delimiters; frame skipped", frame.file));
                continue;
            }
            out.warnings
                .push(format!("{}: unbalanced delimiters; block span is approximate", frame.file));
        }
        let tree = tree_from_scan(&frame.file, &scanned);
        let Some(block) = innermost_block(&tree, frame.line) else {
            out.warnings.push(format!(
                "{}:{}: line outside file; frame skipped",
                frame.file, frame.line
            ));
            continue;
        };

        let mut lines = BTreeSet::from([frame.line]);
        if options.whole_block {
            lines.extend((block.start..=block.end).filter(|l| scanned.is_executable(*l)));
        } else {
            let skipped: Vec<(u32, u32)> = block
                .children
                .iter()
                .filter(|c| c.kind == SpanKind::Block && c.end < frame.line)
                .map(|c| (c.start, c.end))
                .collect();
            lines.extend((block.start..=frame.line).filter(|l| {
                scanned.is_executable(*l) && !skipped.iter().any(|(s, e)| s < l && l < e)
            }));
        }
        for line in lines {
            let loc = Location {
                file: frame.file.clone(),
                line,
            };
            if !covered.contains(&loc) {
                out.added.insert(loc);
            }
        }
    }
    out
}

/// Applies [`recover`] to every FAILED or CRASHED test that carries an
/// exception. Returns the number of lines added and the warnings raised.
pub fn recover_matrix(
    matrix: &mut CoverageMatrix,
    records: &[TestRecord],
    sources: &dyn SourceProvider,
    options: &RecoveryOptions,
) -> (usize, Vec<String>) {
    let mut added = 0;
    let mut warnings = Vec::new();
    for record in records {
        let Some(exception) = &record.exception else {
            continue;
        };
        if !record.outcome.admits_exception() {
            continue;
        }
        let empty = BTreeSet::new();
        let covered = matrix.get(&record.test).unwrap_or(&empty);
        let r = recover(exception, sources, covered, options);
        for w in &r.warnings {
            warn!(test = %record.test, "{w}");
        }
        warnings.extend(r.warnings);
        added += r.added.len();
        matrix.extend(record.test.clone(), r.added);
    }
    (added, warnings)
}
