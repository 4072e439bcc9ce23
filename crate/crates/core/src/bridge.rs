//! Span trees: nested line ranges standing in for a syntax tree, and the
//! mapping of suspicious lines onto their best-matching node.
//!
//! A tree has a file-level root spanning lines `1..=N`, one node per
//! multi-line block, and one single-line leaf per executable line placed in
//! the innermost block containing it. Children lie strictly within their
//! parent and siblings never overlap.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::SuspiciousLocation;
use crate::syntax::{scan, BlockScan, SourceSyntax};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BridgeError {
    #[error("{file}: unbalanced delimiters")]
    UnbalancedDelimiters { file: String },
    #[error("line {line} is outside {file} (lines 1..={last})")]
    LineOutsideFile { file: String, line: u32, last: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    File,
    Block,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanNode {
    pub file: String,
    pub start: u32,
    pub end: u32,
    pub score: Option<f64>,
    pub children: Vec<SpanNode>,
    #[serde(skip)]
    pub kind: SpanKind,
    #[serde(skip)]
    pub contributing_lines: Vec<(u32, f64)>,
}

impl SpanNode {
    pub fn new(file: impl Into<String>, start: u32, end: u32, kind: SpanKind) -> Self {
        SpanNode {
            file: file.into(),
            start,
            end,
            score: None,
            children: Vec::new(),
            kind,
            contributing_lines: Vec::new(),
        }
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    /// Number of lines covered.
    pub fn amplitude(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn with_children(mut self, children: Vec<SpanNode>) -> Self {
        self.children = children;
        self
    }

    /// Depth-first, pre-order.
    pub fn walk(&self) -> Vec<&SpanNode> {
        let mut out = vec![self];
        let mut i = 0;
        while i < out.len() {
            let node = out[i];
            out.splice(i + 1..i + 1, node.children.iter());
            i += 1;
        }
        out
    }

    fn record(&mut self, line: u32, score: f64) {
        self.contributing_lines.push((line, score));
        self.score = Some(match self.score {
            Some(s) if s >= score => s,
            _ => score,
        });
    }

    fn node_at_mut(&mut self, path: &[usize]) -> &mut SpanNode {
        path.iter().fold(self, |n, i| &mut n.children[*i])
    }

    fn node_at(&self, path: &[usize]) -> &SpanNode {
        path.iter().fold(self, |n, i| &n.children[*i])
    }
}

/// Builds the span tree of `source`. In strict mode unbalanced delimiters
/// are an error; otherwise open blocks are closed at end of file.
pub fn build_span_tree(
    file: &str,
    source: &str,
    syntax: &SourceSyntax,
) -> Result<SpanNode, BridgeError> {
    let scanned = scan(source, syntax);
    if scanned.unbalanced && syntax.strict {
        return Err(BridgeError::UnbalancedDelimiters {
            file: file.to_string(),
        });
    }
    Ok(tree_from_scan(file, &scanned))
}

struct ArenaNode {
    start: u32,
    end: u32,
    kind: SpanKind,
    children: Vec<usize>,
}

pub(crate) fn tree_from_scan(file: &str, scanned: &BlockScan) -> SpanNode {
    let last = scanned.line_count.max(1);
    let mut groups = normalized_groups(&scanned.groups, last);

    let mut arena = vec![ArenaNode {
        start: 1,
        end: last,
        kind: SpanKind::File,
        children: Vec::new(),
    }];
    let mut stack = vec![0usize];
    for (s, mut e) in groups.drain(..) {
        loop {
            let top = &arena[*stack.last().expect("root never popped")];
            if top.start <= s && s <= top.end {
                // Only reachable for malformed input: clip to the parent.
                e = e.min(top.end);
                break;
            }
            stack.pop();
        }
        let parent = *stack.last().expect("root never popped");
        let p = &arena[parent];
        if s >= e || (s == p.start && e == p.end) {
            continue;
        }
        arena.push(ArenaNode {
            start: s,
            end: e,
            kind: SpanKind::Block,
            children: Vec::new(),
        });
        let id = arena.len() - 1;
        arena[parent].children.push(id);
        stack.push(id);
    }

    for line in scanned.executable_lines() {
        let mut at = 0usize;
        while let Some(&c) = arena[at]
            .children
            .iter()
            .find(|&&c| arena[c].start <= line && line <= arena[c].end)
        {
            at = c;
        }
        if arena[at].start == line && arena[at].end == line {
            continue;
        }
        arena.push(ArenaNode {
            start: line,
            end: line,
            kind: SpanKind::Line,
            children: Vec::new(),
        });
        let id = arena.len() - 1;
        arena[at].children.push(id);
    }

    fn materialize(arena: &[ArenaNode], id: usize, file: &str) -> SpanNode {
        let a = &arena[id];
        let mut children: Vec<SpanNode> = a
            .children
            .iter()
            .map(|&c| materialize(arena, c, file))
            .collect();
        children.sort_by_key(|c| c.start);
        SpanNode::new(file, a.start, a.end, a.kind).with_children(children)
    }
    materialize(&arena, 0, file)
}

/// Multi-line groups with shared boundary lines resolved: when one block
/// closes on the line where a following block opens (`} else {`), the line
/// goes to the later block. Sorted by (start, end descending).
fn normalized_groups(raw: &[(u32, u32)], last: u32) -> Vec<(u32, u32)> {
    let mut groups: Vec<(u32, u32)> = raw
        .iter()
        .map(|&(s, e)| (s.max(1), e.min(last)))
        .filter(|(s, e)| s < e)
        .collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    groups.dedup();

    loop {
        let mut changed = false;
        for i in 0..groups.len() {
            for j in 0..groups.len() {
                let (si, ei) = groups[i];
                let (sj, ej) = groups[j];
                if si < sj && sj <= ei && ei < ej {
                    groups[i].1 = sj - 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    groups.retain(|(s, e)| s < e);
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    groups.dedup();
    groups
}

fn locate(tree: &SpanNode, line: u32) -> Result<Vec<usize>, BridgeError> {
    if !tree.contains(line) || line == 0 {
        return Err(BridgeError::LineOutsideFile {
            file: tree.file.clone(),
            line,
            last: tree.end,
        });
    }

    // Shallowest node spanning exactly this line (breadth-first).
    let mut level: Vec<Vec<usize>> = vec![Vec::new()];
    while !level.is_empty() {
        for path in &level {
            let n = tree.node_at(path);
            if n.start == line && n.end == line {
                return Ok(path.clone());
            }
        }
        level = level
            .iter()
            .flat_map(|path| {
                let n = tree.node_at(path);
                (0..n.children.len()).map(move |i| {
                    let mut p = path.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }

    // Otherwise the smallest container, deepest on ties.
    let mut best: Vec<usize> = Vec::new();
    let mut best_amp = tree.amplitude();
    let mut todo: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(path) = todo.pop() {
        let n = tree.node_at(&path);
        if !n.contains(line) {
            continue;
        }
        let amp = n.amplitude();
        if amp < best_amp || (amp == best_amp && path.len() > best.len()) {
            best = path.clone();
            best_amp = amp;
        }
        for i in (0..n.children.len()).rev() {
            let mut p = path.clone();
            p.push(i);
            todo.push(p);
        }
    }
    Ok(best)
}

/// The node a line's suspiciousness is attributed to: the shallowest node
/// spanning exactly that line if one exists, else the containing node with
/// the fewest lines (deepest on ties).
pub fn map_line_to_node(tree: &SpanNode, line: u32) -> Result<&SpanNode, BridgeError> {
    locate(tree, line).map(|p| tree.node_at(&p))
}

/// Attributes each location's score to its mapped node. Locations in files
/// without a tree, or outside their file, are skipped and reported.
pub fn annotate(
    trees: &mut BTreeMap<String, SpanNode>,
    results: &[SuspiciousLocation],
) -> Vec<String> {
    let mut warnings = Vec::new();
    for r in results {
        let Some(tree) = trees.get_mut(&r.location.file) else {
            warnings.push(format!("no span tree for {}; skipped", r.location));
            continue;
        };
        match locate(tree, r.location.line) {
            Ok(path) => tree.node_at_mut(&path).record(r.location.line, r.score),
            Err(e) => warnings.push(format!("{e}; skipped")),
        }
    }
    warnings
}
