//! Domain types shared by every stage of the pipeline, and construction of
//! the per-line program spectrum from a coverage matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid test identifier {0:?}: must be non-empty and contain no newlines")]
    InvalidTestId(String),
    #[error("invalid path {0:?}: escapes the project root")]
    PathEscapesRoot(String),
    #[error("invalid path: empty")]
    EmptyPath,
    #[error("line numbers start at 1 (got 0 for {0})")]
    ZeroLine(String),
    #[error("coverage references test {0} which has no record")]
    UnknownTest(TestId),
    #[error("two records share the test identifier {0}")]
    DuplicateRecord(TestId),
    #[error("no test records")]
    NoRecords,
}

/// Identifier of one test, unique within a localization run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TestId(String);

impl TestId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() || id.contains('\n') || id.contains('\r') {
            return Err(ModelError::InvalidTestId(id));
        }
        Ok(TestId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TestId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        TestId::new(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Passed,
    Failed,
    Timeout,
    Crashed,
}

impl Outcome {
    /// Timeouts and crashes count as failures in the spectrum.
    pub fn is_failing(self) -> bool {
        !matches!(self, Outcome::Passed)
    }

    /// Outcomes that may carry an exception record.
    pub fn admits_exception(self) -> bool {
        matches!(self, Outcome::Failed | Outcome::Crashed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Passed => "PASSED",
            Outcome::Failed => "FAILED",
            Outcome::Timeout => "TIMEOUT",
            Outcome::Crashed => "CRASHED",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "PASSED" => Some(Outcome::Passed),
            "FAILED" => Some(Outcome::Failed),
            "TIMEOUT" => Some(Outcome::Timeout),
            "CRASHED" => Some(Outcome::Crashed),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub file: String,
    pub scope: String,
    pub line: u32,
}

/// A parsed exception; `frames` is innermost first and never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionRecord {
    pub type_name: String,
    pub message: String,
    pub frames: Vec<StackFrame>,
}

impl ExceptionRecord {
    /// Renders the record as `Type: message` followed by `  at scope (file:line)`
    /// frames, the shape the default frame grammar reads back.
    pub fn render(&self) -> String {
        let mut out = if self.message.is_empty() {
            self.type_name.clone()
        } else {
            format!("{}: {}", self.type_name, self.message)
        };
        for f in &self.frames {
            out.push_str(&format!("\n  at {} ({}:{})", f.scope, f.file, f.line));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test: TestId,
    pub outcome: Outcome,
    pub wall_time_ms: u64,
    pub exception: Option<ExceptionRecord>,
}

impl TestRecord {
    pub fn new(test: TestId, outcome: Outcome) -> Self {
        TestRecord {
            test,
            outcome,
            wall_time_ms: 0,
            exception: None,
        }
    }
}

/// A covered source line. Ordering is (file, line), which is also the
/// ranking tie-break.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: u32,
}

impl Location {
    /// Builds a location, normalizing `file` to a '/'-separated path.
    pub fn new(file: &str, line: u32) -> Result<Self, ModelError> {
        if line == 0 {
            return Err(ModelError::ZeroLine(file.to_string()));
        }
        Ok(Location {
            file: normalize_path(file)?,
            line,
        })
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

/// Lexically normalizes a path: '\' becomes '/', `.` segments and repeated
/// separators vanish, and `..` is resolved. A `..` that would climb above the
/// start of a relative path is rejected. A leading '/' is kept.
pub fn normalize_path(raw: &str) -> Result<String, ModelError> {
    let unified = raw.replace('\\', "/");
    let absolute = unified.starts_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(ModelError::PathEscapesRoot(raw.to_string()));
                }
            }
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        return Err(ModelError::EmptyPath);
    }
    let joined = parts.join("/");
    Ok(if absolute { format!("/{joined}") } else { joined })
}

/// Strips the first matching prefix from an already normalized path.
pub fn strip_path_prefix(path: &str, prefixes: &[String]) -> String {
    for prefix in prefixes {
        let p = prefix.trim_end_matches('/');
        if p.is_empty() {
            continue;
        }
        if let Some(rest) = path.strip_prefix(p) {
            if let Some(rest) = rest.strip_prefix('/') {
                if !rest.is_empty() {
                    return rest.to_string();
                }
            }
        }
    }
    path.to_string()
}

/// Per-test sets of covered lines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoverageMatrix {
    entries: BTreeMap<TestId, BTreeSet<Location>>,
}

impl CoverageMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds lines to a test's entry, creating it if needed.
    pub fn extend(&mut self, test: TestId, lines: impl IntoIterator<Item = Location>) {
        self.entries.entry(test).or_default().extend(lines);
    }

    pub fn insert(&mut self, test: TestId, lines: BTreeSet<Location>) -> Option<BTreeSet<Location>> {
        self.entries.insert(test, lines)
    }

    pub fn get(&self, test: &TestId) -> Option<&BTreeSet<Location>> {
        self.entries.get(test)
    }

    pub fn get_mut(&mut self, test: &TestId) -> Option<&mut BTreeSet<Location>> {
        self.entries.get_mut(test)
    }

    pub fn contains_test(&self, test: &TestId) -> bool {
        self.entries.contains_key(test)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TestId, &BTreeSet<Location>)> {
        self.entries.iter()
    }

    pub fn tests(&self) -> impl Iterator<Item = &TestId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps only the locations accepted by `keep`.
    pub fn retain_locations(&mut self, mut keep: impl FnMut(&Location) -> bool) {
        for lines in self.entries.values_mut() {
            lines.retain(|l| keep(l));
        }
    }

    /// Every distinct covered file.
    pub fn files(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flat_map(|s| s.iter().map(|l| l.file.as_str()))
            .collect()
    }
}

impl FromIterator<(TestId, BTreeSet<Location>)> for CoverageMatrix {
    fn from_iter<I: IntoIterator<Item = (TestId, BTreeSet<Location>)>>(iter: I) -> Self {
        let mut m = CoverageMatrix::new();
        for (t, lines) in iter {
            m.extend(t, lines);
        }
        m
    }
}

/// The four spectrum tallies for one line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpectrumCounts {
    /// failing tests covering the line
    pub ef: u32,
    /// passing tests covering the line
    pub ep: u32,
    /// failing tests not covering the line
    pub nf: u32,
    /// passing tests not covering the line
    pub np: u32,
}

impl SpectrumCounts {
    pub fn new(ef: u32, ep: u32, nf: u32, np: u32) -> Self {
        SpectrumCounts { ef, ep, nf, np }
    }

    pub fn total_failing(&self) -> u32 {
        self.ef + self.nf
    }

    pub fn total_passing(&self) -> u32 {
        self.ep + self.np
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspiciousLocation {
    pub location: Location,
    pub score: f64,
    pub counts: SpectrumCounts,
}

pub type Spectrum = BTreeMap<Location, SpectrumCounts>;

/// Tallies (ef, ep, nf, np) for every line covered by at least one test.
pub fn compute_spectrum(
    matrix: &CoverageMatrix,
    records: &[TestRecord],
) -> Result<Spectrum, ModelError> {
    if records.is_empty() {
        return Err(ModelError::NoRecords);
    }
    let mut failing_by_test: HashMap<&TestId, bool> = HashMap::with_capacity(records.len());
    for r in records {
        if failing_by_test.insert(&r.test, r.outcome.is_failing()).is_some() {
            return Err(ModelError::DuplicateRecord(r.test.clone()));
        }
    }
    let total_failing = failing_by_test.values().filter(|f| **f).count() as u32;
    let total_passing = records.len() as u32 - total_failing;

    let mut hits: BTreeMap<Location, (u32, u32)> = BTreeMap::new();
    for (test, lines) in matrix.iter() {
        let failing = *failing_by_test
            .get(test)
            .ok_or_else(|| ModelError::UnknownTest(test.clone()))?;
        for loc in lines {
            let slot = hits.entry(loc.clone()).or_default();
            if failing {
                slot.0 += 1;
            } else {
                slot.1 += 1;
            }
        }
    }

    Ok(hits
        .into_iter()
        .map(|(loc, (ef, ep))| {
            (
                loc,
                SpectrumCounts::new(ef, ep, total_failing - ef, total_passing - ep),
            )
        })
        .collect())
}
