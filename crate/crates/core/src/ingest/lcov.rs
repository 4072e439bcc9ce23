use std::collections::{BTreeSet, HashMap};

use super::{IngestError, PerTestReport};
use crate::model::{Location, Outcome, TestId, TestRecord};

/// Covered lines attributed to one `TN:` name (None when the trace never
/// named a test).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcovSection {
    pub test_name: Option<String>,
    pub covered: BTreeSet<Location>,
}

/// Reads TN/SF/DA/end_of_record and groups covered lines by test name, in
/// order of first appearance. Other record types are ignored. A `TN:` stays
/// in effect until the next one.
pub fn parse_lcov_sections(stream: &str) -> Result<Vec<LcovSection>, IngestError> {
    let mut sections: Vec<LcovSection> = Vec::new();
    let mut index: HashMap<Option<String>, usize> = HashMap::new();
    let mut current_test: Option<String> = None;
    let mut current_file: Option<String> = None;

    for (i, raw) in stream.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("TN:") {
            let name = name.trim();
            current_test = (!name.is_empty()).then(|| name.to_string());
        } else if let Some(path) = line.strip_prefix("SF:") {
            current_file = Some(path.trim().to_string());
            index.entry(current_test.clone()).or_insert_with(|| {
                sections.push(LcovSection {
                    test_name: current_test.clone(),
                    covered: BTreeSet::new(),
                });
                sections.len() - 1
            });
        } else if let Some(body) = line.strip_prefix("DA:") {
            let malformed = || IngestError::MalformedDa {
                line: lineno,
                text: raw.to_string(),
            };
            let mut fields = body.split(',');
            let src_line: u32 = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .filter(|n| *n >= 1)
                .ok_or_else(malformed)?;
            let hits: i64 = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(malformed)?;
            let file = current_file.as_deref().ok_or_else(malformed)?;
            if hits > 0 {
                let loc = Location::new(file, src_line).map_err(|_| malformed())?;
                let slot = index[&current_test];
                sections[slot].covered.insert(loc);
            }
        } else if line == "end_of_record" {
            current_file = None;
        }
    }
    Ok(sections)
}

/// Parses an LCOV trace into per-test reports. LCOV carries no pass/fail
/// data, so outcomes come from `outcomes`, keyed by TN value.
pub fn parse_lcov(
    stream: &str,
    outcomes: &HashMap<String, Outcome>,
) -> Result<Vec<PerTestReport>, IngestError> {
    let sections = parse_lcov_sections(stream)?;
    // Locate the first SF without a test name, for the error position.
    let mut named = false;
    for (i, raw) in stream.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("TN:") {
            named = !name.trim().is_empty();
        } else if line.starts_with("SF:") && !named {
            return Err(IngestError::MissingTn { line: i + 1 });
        }
    }
    if !stream.trim().is_empty() && !stream.lines().any(|l| l.trim().starts_with("TN:")) {
        return Err(IngestError::MissingTn { line: 1 });
    }

    sections
        .into_iter()
        .map(|section| {
            let name = section
                .test_name
                .expect("sections without TN rejected above");
            let outcome = *outcomes
                .get(&name)
                .ok_or_else(|| IngestError::UnknownOutcome(name.clone()))?;
            let test = TestId::new(name.clone()).map_err(|_| IngestError::UnknownOutcome(name))?;
            Ok(PerTestReport::new(TestRecord::new(test, outcome), section.covered))
        })
        .collect()
}
