//! Lightweight source scanning: which lines carry code, and which line
//! ranges form delimiter- or indentation-nested blocks.

/// How blocks are delimited in a source language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStyle {
    /// `{ ... }` blocks, with `"..."` strings and `/* */` comments skipped.
    Braces,
    /// Python-style blocks: a line followed by more deeply indented lines.
    Indentation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSyntax {
    pub style: BlockStyle,
    pub comment_prefixes: Vec<String>,
    pub block_comment: Option<(String, String)>,
    /// Reject unbalanced delimiters instead of closing open blocks at EOF.
    pub strict: bool,
}

impl SourceSyntax {
    pub fn braces() -> Self {
        SourceSyntax {
            style: BlockStyle::Braces,
            comment_prefixes: vec!["//".into()],
            block_comment: Some(("/*".into(), "*/".into())),
            strict: false,
        }
    }

    pub fn indentation() -> Self {
        SourceSyntax {
            style: BlockStyle::Indentation,
            comment_prefixes: vec!["#".into()],
            block_comment: None,
            strict: false,
        }
    }

    /// Picks a style from the file extension; anything unrecognized is
    /// treated as a brace language.
    pub fn for_path(path: &str) -> Self {
        let ext = path.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
        match ext {
            "py" | "pyw" | "pyi" => Self::indentation(),
            "sh" | "bash" | "pl" | "r" | "R" => Self {
                comment_prefixes: vec!["#".into()],
                block_comment: None,
                ..Self::braces()
            },
            _ => Self::braces(),
        }
    }

    pub fn with_comment_prefixes(mut self, prefixes: Vec<String>) -> Self {
        self.comment_prefixes = prefixes;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }
}

/// Result of scanning one source file. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockScan {
    pub line_count: u32,
    /// Block line ranges in the order they close. May include single-line
    /// ranges.
    pub groups: Vec<(u32, u32)>,
    executable: Vec<bool>,
    pub unbalanced: bool,
}

impl BlockScan {
    /// Not blank, not comment-only, and not made of closing punctuation.
    pub fn is_executable(&self, line: u32) -> bool {
        line >= 1 && self.executable.get(line as usize - 1).copied().unwrap_or(false)
    }

    pub fn executable_lines(&self) -> impl Iterator<Item = u32> + '_ {
        self.executable
            .iter()
            .enumerate()
            .filter(|(_, e)| **e)
            .map(|(i, _)| i as u32 + 1)
    }
}

pub fn line_count(source: &str) -> u32 {
    source.lines().count() as u32
}

pub fn scan(source: &str, syntax: &SourceSyntax) -> BlockScan {
    match syntax.style {
        BlockStyle::Braces => scan_braces(source, syntax),
        BlockStyle::Indentation => scan_indentation(source, syntax),
    }
}

fn scan_braces(source: &str, syntax: &SourceSyntax) -> BlockScan {
    let lines: Vec<&str> = source.lines().collect();
    let n = lines.len() as u32;
    let mut executable = vec![false; lines.len()];
    let mut groups = Vec::new();
    let mut open: Vec<u32> = Vec::new();
    let mut unbalanced = false;
    let mut in_block_comment = false;

    for (idx, text) in lines.iter().enumerate() {
        let lineno = idx as u32 + 1;
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        let mut has_code = false;
        while i < chars.len() {
            if in_block_comment {
                let (_, close) = syntax.block_comment.as_ref().expect("in comment implies markers");
                if starts_with_at(&chars, i, close) {
                    in_block_comment = false;
                    i += close.chars().count();
                } else {
                    i += 1;
                }
                continue;
            }
            if let Some((open_mark, _)) = &syntax.block_comment {
                if starts_with_at(&chars, i, open_mark) {
                    in_block_comment = true;
                    i += open_mark.chars().count();
                    continue;
                }
            }
            if syntax
                .comment_prefixes
                .iter()
                .any(|p| !p.is_empty() && starts_with_at(&chars, i, p))
            {
                break;
            }
            let c = chars[i];
            match c {
                '"' => {
                    has_code = true;
                    i = skip_string(&chars, i);
                    continue;
                }
                '\'' => {
                    has_code = true;
                    if let Some(end) = char_literal_end(&chars, i) {
                        i = end;
                        continue;
                    }
                }
                '{' => open.push(lineno),
                '}' => match open.pop() {
                    Some(start) => groups.push((start, lineno)),
                    None => unbalanced = true,
                },
                c if c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | ';' | ',') => {}
                _ => has_code = true,
            }
            i += 1;
        }
        executable[idx] = has_code;
    }

    if !open.is_empty() {
        unbalanced = true;
        while let Some(start) = open.pop() {
            groups.push((start, n.max(start)));
        }
    }

    BlockScan {
        line_count: n,
        groups,
        executable,
        unbalanced,
    }
}

fn starts_with_at(chars: &[char], i: usize, pat: &str) -> bool {
    pat.chars().enumerate().all(|(k, p)| chars.get(i + k) == Some(&p))
}

/// Index just past the closing quote, or the end of the line.
fn skip_string(chars: &[char], start: usize) -> usize {
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '\\' => i += 2,
            '"' => return i + 1,
            _ => i += 1,
        }
    }
    chars.len()
}

/// Recognizes `'x'` and `'\x'`; anything else (lifetimes, apostrophes) is
/// left alone.
fn char_literal_end(chars: &[char], start: usize) -> Option<usize> {
    match (chars.get(start + 1), chars.get(start + 2), chars.get(start + 3)) {
        (Some('\\'), Some(_), Some('\'')) => Some(start + 4),
        (Some(c), Some('\''), _) if *c != '\\' && *c != '\'' => Some(start + 3),
        _ => None,
    }
}

fn indent_width(text: &str) -> usize {
    let mut w = 0;
    for c in text.chars() {
        match c {
            ' ' => w += 1,
            '\t' => w = (w / 8 + 1) * 8,
            _ => break,
        }
    }
    w
}

fn scan_indentation(source: &str, syntax: &SourceSyntax) -> BlockScan {
    let lines: Vec<&str> = source.lines().collect();
    let n = lines.len() as u32;
    let executable: Vec<bool> = lines
        .iter()
        .map(|l| {
            let t = l.trim();
            !t.is_empty()
                && !syntax
                    .comment_prefixes
                    .iter()
                    .any(|p| !p.is_empty() && t.starts_with(p.as_str()))
        })
        .collect();

    let mut groups = Vec::new();
    // (header line, indent)
    let mut stack: Vec<(u32, usize)> = Vec::new();
    let mut last_code: u32 = 0;
    for (idx, text) in lines.iter().enumerate() {
        if !executable[idx] {
            continue;
        }
        let lineno = idx as u32 + 1;
        let depth = indent_width(text);
        while let Some(&(header, d)) = stack.last() {
            if d < depth {
                break;
            }
            stack.pop();
            if last_code > header {
                groups.push((header, last_code));
            }
        }
        stack.push((lineno, depth));
        last_code = lineno;
    }
    while let Some((header, _)) = stack.pop() {
        if last_code > header {
            groups.push((header, last_code));
        }
    }

    BlockScan {
        line_count: n,
        groups,
        executable,
        unbalanced: false,
    }
}
