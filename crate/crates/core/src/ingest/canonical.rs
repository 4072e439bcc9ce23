use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{Map, Value};

use super::{IngestError, PerTestReport, RawException};
use crate::model::{Location, Outcome, TestId, TestRecord};

/// Parses newline-delimited report objects. Blank lines are skipped and
/// unknown keys ignored.
pub fn parse_canonical(stream: &str) -> Result<Vec<PerTestReport>, IngestError> {
    stream
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(i + 1, l))
        .collect()
}

fn parse_line(line: usize, text: &str) -> Result<PerTestReport, IngestError> {
    let malformed = |reason: String| IngestError::MalformedLine { line, reason };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("expected a JSON object".into()))?;

    let required = |field: &'static str| {
        obj.get(field)
            .ok_or(IngestError::MissingField { line, field })
    };

    let test = required("test")?
        .as_str()
        .ok_or_else(|| malformed("`test` must be a string".into()))?;
    let test = TestId::new(test).map_err(|e| malformed(e.to_string()))?;

    let outcome = required("outcome")?
        .as_str()
        .ok_or_else(|| malformed("`outcome` must be a string".into()))?;
    let outcome =
        Outcome::parse(outcome).ok_or_else(|| malformed(format!("unknown outcome {outcome:?}")))?;

    let wall_time_ms = match obj.get("wall_time_ms") {
        None | Some(Value::Null) => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| malformed("`wall_time_ms` must be a non-negative integer".into()))?,
    };

    let files = required("files")?
        .as_array()
        .ok_or_else(|| malformed("`files` must be an array".into()))?;
    let mut covered = BTreeSet::new();
    for entry in files {
        let entry = entry
            .as_object()
            .ok_or_else(|| malformed("`files` entries must be objects".into()))?;
        let path = entry
            .get("path")
            .ok_or(IngestError::MissingField { line, field: "path" })?
            .as_str()
            .ok_or_else(|| malformed("`path` must be a string".into()))?;
        let lines = entry
            .get("lines")
            .ok_or(IngestError::MissingField { line, field: "lines" })?
            .as_array()
            .ok_or_else(|| malformed("`lines` must be an array".into()))?;
        for l in lines {
            let n = l
                .as_u64()
                .filter(|n| *n >= 1 && *n <= u32::MAX as u64)
                .ok_or_else(|| malformed(format!("line numbers must be positive integers, got {l}")))?;
            covered.insert(Location::new(path, n as u32).map_err(|e| malformed(e.to_string()))?);
        }
    }

    let raw_trace = match obj.get("exception") {
        None | Some(Value::Null) => None,
        Some(Value::Object(ex)) => Some(RawException {
            type_name: opt_string(ex, "type").map_err(&malformed)?,
            message: opt_string(ex, "message").map_err(&malformed)?,
            trace: opt_string(ex, "trace").map_err(&malformed)?,
        }),
        Some(_) => return Err(malformed("`exception` must be an object".into())),
    };

    Ok(PerTestReport {
        record: TestRecord {
            test,
            outcome,
            wall_time_ms,
            exception: None,
        },
        covered,
        raw_trace,
    })
}

fn opt_string(obj: &Map<String, Value>, key: &str) -> Result<Option<String>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(format!("`exception.{key}` must be a string")),
    }
}

#[derive(Serialize)]
struct WireReport<'a> {
    test: &'a str,
    outcome: &'static str,
    wall_time_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exception: Option<WireException>,
    files: Vec<WireFile<'a>>,
}

#[derive(Serialize)]
struct WireException {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    type_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<String>,
}

#[derive(Serialize)]
struct WireFile<'a> {
    path: &'a str,
    lines: Vec<u32>,
}

/// One report as a single JSON line (no trailing newline).
pub fn serialize_report(report: &PerTestReport) -> String {
    let mut by_file: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for loc in &report.covered {
        by_file.entry(&loc.file).or_default().push(loc.line);
    }
    let exception = match (&report.raw_trace, &report.record.exception) {
        (Some(raw), _) => Some(WireException {
            type_name: raw.type_name.clone(),
            message: raw.message.clone(),
            trace: raw.trace.clone(),
        }),
        (None, Some(ex)) => Some(WireException {
            type_name: Some(ex.type_name.clone()),
            message: Some(ex.message.clone()),
            trace: Some(ex.render()),
        }),
        (None, None) => None,
    };
    let wire = WireReport {
        test: report.record.test.as_str(),
        outcome: report.record.outcome.as_str(),
        wall_time_ms: report.record.wall_time_ms,
        exception,
        files: by_file
            .into_iter()
            .map(|(path, lines)| WireFile { path, lines })
            .collect(),
    };
    serde_json::to_string(&wire).expect("report serialization is infallible")
}

/// Newline-terminated JSON lines, one per report, in input order.
pub fn serialize_canonical(reports: &[PerTestReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serialize_report(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_schema_example() {
        let r = parse_canonical(
            r#"{"test":"t1","outcome":"FAILED","files":[{"path":"src/a.x","lines":[5,7]}]}"#,
        )
        .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].record.test.as_str(), "t1");
        assert_eq!(r[0].record.outcome, Outcome::Failed);
        assert_eq!(r[0].record.wall_time_ms, 0);
        let lines: Vec<_> = r[0].covered.iter().map(|l| (l.file.as_str(), l.line)).collect();
        assert_eq!(lines, vec![("src/a.x", 5), ("src/a.x", 7)]);
    }

    #[test]
    fn empty_stream() {
        assert!(parse_canonical("").unwrap().is_empty());
        assert!(parse_canonical("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn missing_outcome() {
        let err = parse_canonical(r#"{"test":"t1","files":[]}"#).unwrap_err();
        assert_eq!(err, IngestError::MissingField { line: 1, field: "outcome" });
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let s = "{\"test\":\"a\",\"outcome\":\"PASSED\",\"files\":[]}\nnot json";
        assert!(matches!(parse_canonical(s), Err(IngestError::MalformedLine { line: 2, .. })));
        let zero = r#"{"test":"a","outcome":"PASSED","files":[{"path":"x","lines":[0]}]}"#;
        assert!(matches!(parse_canonical(zero), Err(IngestError::MalformedLine { .. })));
        let bad = r#"{"test":"a","outcome":"MAYBE","files":[]}"#;
        assert!(matches!(parse_canonical(bad), Err(IngestError::MalformedLine { .. })));
    }

    #[test]
    fn unknown_keys_ignored_and_exception_kept_raw() {
        let s = r#"{"test":"a","outcome":"FAILED","extra":1,"wall_time_ms":12,"exception":{"type":"E","message":"m","trace":"E: m\n  at f (a.x:3)"},"files":[]}"#;
        let r = parse_canonical(s).unwrap();
        assert_eq!(r[0].record.wall_time_ms, 12);
        assert!(r[0].record.exception.is_none());
        let raw = r[0].raw_trace.as_ref().unwrap();
        assert_eq!(raw.type_name.as_deref(), Some("E"));
        assert_eq!(raw.trace.as_deref(), Some("E: m\n  at f (a.x:3)"));
    }

    fn arb_report() -> impl Strategy<Value = PerTestReport> {
        let outcome = prop_oneof![
            Just(Outcome::Passed),
            Just(Outcome::Failed),
            Just(Outcome::Timeout),
            Just(Outcome::Crashed)
        ];
        let raw = prop::option::of((
            prop::option::of("[A-Za-z]{1,8}"),
            prop::option::of(".{0,12}"),
            prop::option::of("[ -~\n]{0,40}"),
        ));
        (
            "[a-z][a-z0-9_:]{0,10}",
            outcome,
            0u64..100_000,
            prop::collection::btree_set(("(src|lib)/[a-z]{1,5}\\.x", 1u32..500), 0..20),
            raw,
        )
            .prop_map(|(t, o, wall, cov, raw)| PerTestReport {
                record: TestRecord {
                    test: TestId::new(t).unwrap(),
                    outcome: o,
                    wall_time_ms: wall,
                    exception: None,
                },
                covered: cov
                    .into_iter()
                    .map(|(f, l)| Location::new(&f, l).unwrap())
                    .collect(),
                raw_trace: raw.map(|(t, m, tr)| RawException {
                    type_name: t,
                    message: m,
                    trace: tr,
                }),
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(reports in prop::collection::vec(arb_report(), 0..8)) {
            let text = serialize_canonical(&reports);
            prop_assert_eq!(parse_canonical(&text).unwrap(), reports);
        }
    }
}
