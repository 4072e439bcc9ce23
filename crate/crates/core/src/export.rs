//! Report serialization: console, JSON, CSV, and JSON with span trees, plus
//! a registry for custom exporters.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bridge::SpanNode;
use crate::model::{Outcome, SuspiciousLocation, TestRecord};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("failed to write report: {0}")]
    SinkWriteFailed(#[from] io::Error),
    #[error("exporter {0:?} is already registered")]
    DuplicateExporterName(String),
    #[error("unknown format {0:?}")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub tests: usize,
    pub passing: usize,
    pub failing: usize,
    pub timeout: usize,
    pub crashed: usize,
}

impl Totals {
    pub fn from_records(records: &[TestRecord]) -> Self {
        let mut t = Totals {
            tests: records.len(),
            ..Default::default()
        };
        for r in records {
            match r.outcome {
                Outcome::Passed => t.passing += 1,
                Outcome::Failed => t.failing += 1,
                Outcome::Timeout => t.timeout += 1,
                Outcome::Crashed => t.crashed += 1,
            }
        }
        t
    }
}

/// Everything a localization run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub ranked: Vec<SuspiciousLocation>,
    pub formula: String,
    pub totals: Totals,
    pub recovered_line_count: usize,
    pub tool_version: String,
    /// Annotated span trees keyed by file, when they were built.
    pub spans: BTreeMap<String, SpanNode>,
}

/// Rounds to 10 significant digits.
pub fn round_score(score: f64) -> f64 {
    if !score.is_finite() || score == 0.0 {
        return score;
    }
    format!("{score:.9e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of the score rounded to 10 significant digits.
pub fn format_score(score: f64) -> String {
    format!("{}", round_score(score))
}

#[derive(Serialize)]
struct JsonRow<'a> {
    file: &'a str,
    line: u32,
    score: f64,
    ef: u32,
    ep: u32,
    nf: u32,
    np: u32,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    formula: &'a str,
    totals: Totals,
    recovered_lines: usize,
    tool_version: &'a str,
    suspicious: Vec<JsonRow<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<JsonSpan<'a>>>,
}

#[derive(Serialize)]
struct JsonSpan<'a> {
    file: &'a str,
    start: u32,
    end: u32,
    score: Option<f64>,
    children: Vec<JsonSpan<'a>>,
}

impl<'a> JsonSpan<'a> {
    fn from_node(n: &'a SpanNode) -> Self {
        JsonSpan {
            file: &n.file,
            start: n.start,
            end: n.end,
            score: n.score.map(round_score),
            children: n.children.iter().map(JsonSpan::from_node).collect(),
        }
    }
}

fn json_report(report: &LocalizationReport, with_spans: bool) -> JsonReport<'_> {
    JsonReport {
        formula: &report.formula,
        totals: report.totals,
        recovered_lines: report.recovered_line_count,
        tool_version: &report.tool_version,
        suspicious: report
            .ranked
            .iter()
            .map(|s| JsonRow {
                file: &s.location.file,
                line: s.location.line,
                score: round_score(s.score),
                ef: s.counts.ef,
                ep: s.counts.ep,
                nf: s.counts.nf,
                np: s.counts.np,
            })
            .collect(),
        spans: with_spans.then(|| report.spans.values().map(JsonSpan::from_node).collect()),
    }
}

/// Counts bytes passed through to the inner writer.
struct Counting<'a> {
    inner: &'a mut dyn Write,
    count: usize,
}

impl Write for Counting<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_json(
    report: &LocalizationReport,
    sink: &mut dyn Write,
    with_spans: bool,
) -> Result<usize, ExportError> {
    let mut out = Counting { inner: sink, count: 0 };
    serde_json::to_writer_pretty(&mut out, &json_report(report, with_spans))
        .map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(out.count)
}

pub fn export_json(report: &LocalizationReport, sink: &mut dyn Write) -> Result<usize, ExportError> {
    write_json(report, sink, false)
}

/// JSON with the annotated span trees under `spans`.
pub fn export_json_tree(
    report: &LocalizationReport,
    sink: &mut dyn Write,
) -> Result<usize, ExportError> {
    write_json(report, sink, true)
}

pub fn export_csv(report: &LocalizationReport, sink: &mut dyn Write) -> Result<usize, ExportError> {
    let mut out = Counting { inner: sink, count: 0 };
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut out);
        let map = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => ExportError::SinkWriteFailed(io),
            other => ExportError::SinkWriteFailed(io::Error::other(format!("{other:?}"))),
        };
        w.write_record(["file", "line", "score", "ef", "ep", "nf", "np"])
            .map_err(map)?;
        for s in &report.ranked {
            w.write_record([
                s.location.file.clone(),
                s.location.line.to_string(),
                format_score(s.score),
                s.counts.ef.to_string(),
                s.counts.ep.to_string(),
                s.counts.nf.to_string(),
                s.counts.np.to_string(),
            ])
            .map_err(map)?;
        }
        w.flush()?;
    }
    Ok(out.count)
}

/// `<rank>. <file>:<line> <score>`, one line per location.
pub fn export_console(
    report: &LocalizationReport,
    sink: &mut dyn Write,
) -> Result<usize, ExportError> {
    let mut out = Counting { inner: sink, count: 0 };
    for (i, s) in report.ranked.iter().enumerate() {
        writeln!(out, "{}. {} {}", i + 1, s.location, format_score(s.score))?;
    }
    out.flush()?;
    Ok(out.count)
}

pub type ExporterFn =
    Arc<dyn Fn(&LocalizationReport, &mut dyn Write) -> Result<usize, ExportError> + Send + Sync>;

#[derive(Clone)]
pub struct ExporterRegistry {
    exporters: BTreeMap<String, ExporterFn>,
}

impl std::fmt::Debug for ExporterRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.exporters.keys()).finish()
    }
}

impl Default for ExporterRegistry {
    fn default() -> Self {
        let mut r = ExporterRegistry {
            exporters: BTreeMap::new(),
        };
        r.exporters.insert("console".into(), Arc::new(export_console));
        r.exporters.insert("json".into(), Arc::new(export_json));
        r.exporters.insert("json-tree".into(), Arc::new(export_json_tree));
        r.exporters.insert("csv".into(), Arc::new(export_csv));
        r
    }
}

impl ExporterRegistry {
    pub fn register<F>(&mut self, name: &str, exporter: F) -> Result<&mut Self, ExportError>
    where
        F: Fn(&LocalizationReport, &mut dyn Write) -> Result<usize, ExportError>
            + Send
            + Sync
            + 'static,
    {
        if self.exporters.contains_key(name) {
            return Err(ExportError::DuplicateExporterName(name.to_string()));
        }
        self.exporters.insert(name.to_string(), Arc::new(exporter));
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<ExporterFn, ExportError> {
        self.exporters
            .get(name)
            .cloned()
            .ok_or_else(|| ExportError::UnknownFormat(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.exporters.keys().map(String::as_str).collect()
    }

    pub fn export(
        &self,
        name: &str,
        report: &LocalizationReport,
        sink: &mut dyn Write,
    ) -> Result<usize, ExportError> {
        (self.get(name)?)(report, sink)
    }
}
