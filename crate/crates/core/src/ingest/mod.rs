//! Per-test coverage ingestion: the canonical JSON-lines format, the LCOV
//! trace subset, and merging reports into a coverage matrix.

mod canonical;
mod lcov;

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::model::{CoverageMatrix, Location, TestId, TestRecord};

pub use canonical::{parse_canonical, serialize_canonical, serialize_report};
pub use lcov::{parse_lcov, parse_lcov_sections, LcovSection};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("line {line}: malformed report: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: malformed DA entry {text:?}")]
    MalformedDa { line: usize, text: String },
    #[error("line {line}: coverage record has no test name (TN)")]
    MissingTn { line: usize },
    #[error("no outcome supplied for LCOV test {0:?}")]
    UnknownOutcome(String),
    #[error("test {0} reported more than once")]
    DuplicateTest(TestId),
}

/// Exception data as it arrived, before stack-trace parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawException {
    pub type_name: Option<String>,
    pub message: Option<String>,
    pub trace: Option<String>,
}

/// Outcome and coverage of one executed test.
///
/// `raw_trace` keeps the unparsed trace text even after `record.exception`
/// has been resolved, so a report can be written back out and re-read under
/// the same frame grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerTestReport {
    pub record: TestRecord,
    pub covered: BTreeSet<Location>,
    pub raw_trace: Option<RawException>,
}

impl PerTestReport {
    pub fn new(record: TestRecord, covered: BTreeSet<Location>) -> Self {
        PerTestReport {
            record,
            covered,
            raw_trace: None,
        }
    }
}

/// Loads reports into a matrix and a record list (input order). Every input
/// test gets a matrix entry, possibly empty.
pub fn merge(
    reports: impl IntoIterator<Item = PerTestReport>,
) -> Result<(CoverageMatrix, Vec<TestRecord>), IngestError> {
    let mut seen = HashSet::new();
    let mut matrix = CoverageMatrix::new();
    let mut records = Vec::new();
    for report in reports {
        if !seen.insert(report.record.test.clone()) {
            return Err(IngestError::DuplicateTest(report.record.test));
        }
        matrix.insert(report.record.test.clone(), report.covered);
        records.push(report.record);
    }
    Ok((matrix, records))
}
