use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
    Note,
}

/// One compiler message in the classic `file:line:col: severity: text` form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: u32,
    pub column: Option<u32>,
    pub severity: Severity,
    pub message: String,
    /// The header line plus any snippet/caret lines that followed it,
    /// exactly as the compiler printed them (joined by `\n`).
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Diagnostic(usize),
    Unparsed(usize),
}

/// Result of splitting compiler stderr into diagnostics and everything else.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedStderr {
    pub diagnostics: Vec<Diagnostic>,
    pub unparsed: Vec<String>,
    layout: Vec<Segment>,
    trailing_newline: bool,
}

impl ParsedStderr {
    /// Rebuilds the original stderr text byte for byte.
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for (idx, segment) in self.layout.iter().enumerate() {
            if idx > 0 {
                out.push('\n');
            }
            match *segment {
                Segment::Diagnostic(i) => out.push_str(&self.diagnostics[i].raw_text),
                Segment::Unparsed(i) => out.push_str(&self.unparsed[i]),
            }
        }
        if self.trailing_newline {
            out.push('\n');
        }
        out
    }
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):(?:(?P<col>\d+):)? (?P<sev>fatal error|error|warning|note): (?P<msg>.*)$",
    )
    .unwrap()
});

// `   6 |     x = 1;`, `      |     ^~~`, `    x = 1;`, `    ^`
static CONTINUATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\s+\S|\s*\d*\s*\|)").unwrap());

fn parse_header(line: &str) -> Option<Diagnostic> {
    let caps = HEADER.captures(line)?;
    let line_no: u32 = caps["line"].parse().ok().filter(|n| *n >= 1)?;
    let column = match caps.name("col") {
        Some(col) => Some(col.as_str().parse::<u32>().ok().filter(|n| *n >= 1)?),
        None => None,
    };
    let severity = match &caps["sev"] {
        "warning" => Severity::Warning,
        "note" => Severity::Note,
        _ => Severity::Error,
    };
    Some(Diagnostic {
        file: caps["file"].to_string(),
        line: line_no,
        column,
        severity,
        message: caps["msg"].to_string(),
        raw_text: line.to_string(),
    })
}

/// Splits compiler stderr into structured diagnostics.
///
/// Lines indented like source snippets or caret markers that directly follow
/// a diagnostic are attached to that diagnostic's `raw_text`; every other
/// non-diagnostic line is returned as unparsed.
pub fn parse_diagnostics(stderr: &str) -> ParsedStderr {
    let mut parsed = ParsedStderr::default();
    if stderr.is_empty() {
        return parsed;
    }
    let body = match stderr.strip_suffix('\n') {
        Some(body) => {
            parsed.trailing_newline = true;
            body
        }
        None => stderr,
    };
    let mut attach_to: Option<usize> = None;
    for line in body.split('\n') {
        if let Some(diag) = parse_header(line) {
            attach_to = Some(parsed.diagnostics.len());
            parsed.layout.push(Segment::Diagnostic(parsed.diagnostics.len()));
            parsed.diagnostics.push(diag);
            continue;
        }
        if let Some(idx) = attach_to {
            if CONTINUATION.is_match(line) {
                let raw = &mut parsed.diagnostics[idx].raw_text;
                raw.push('\n');
                raw.push_str(line);
                continue;
            }
        }
        attach_to = None;
        parsed.layout.push(Segment::Unparsed(parsed.unparsed.len()));
        parsed.unparsed.push(line.to_string());
    }
    parsed
}

/// Picks the diagnostic to explain: the first error, else the first warning.
pub fn select_primary_diagnostic(diagnostics: &[Diagnostic]) -> Option<&Diagnostic> {
    diagnostics
        .iter()
        .find(|d| d.severity == Severity::Error)
        .or_else(|| diagnostics.iter().find(|d| d.severity == Severity::Warning))
}
