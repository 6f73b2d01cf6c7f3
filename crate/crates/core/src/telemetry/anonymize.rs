//! Removal of student identifiers from comments and file names.

use std::ops::Range;

use regex::{Regex, RegexBuilder};

pub const REDACTED: &str = "[redacted]";
const EMAIL: &str = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}";

/// Scrubs e-mail addresses, student IDs and known names.
#[derive(Debug, Clone)]
pub struct Anonymizer {
    patterns: Vec<Regex>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizedFile {
    pub file_name: String,
    pub source: String,
}

impl Anonymizer {
    /// `id_pattern` matches student IDs; `known` lists names and usernames.
    /// Names match case-insensitively on word boundaries, with any run of
    /// whitespace, `_`, `-` or `.` between their words.
    pub fn new(id_pattern: &str, known: &[String]) -> Result<Self, regex::Error> {
        let mut patterns = vec![Regex::new(EMAIL)?, Regex::new(id_pattern)?];
        for name in known {
            let words: Vec<String> = name.split_whitespace().map(regex::escape).collect();
            if words.is_empty() || REDACTED.to_lowercase().contains(&name.to_lowercase()) {
                continue;
            }
            let pattern = format!(r"\b{}\b", words.join(r"[\s_.\-]+"));
            patterns.push(RegexBuilder::new(&pattern).case_insensitive(true).build()?);
        }
        Ok(Anonymizer { patterns })
    }

    fn ranges(&self, text: &str) -> Vec<Range<usize>> {
        // Separators become spaces so that `\b` also works inside names such
        // as `z1234567_lab1.c`; the mapping keeps byte offsets.
        let spaced: String = text
            .chars()
            .map(|c| if matches!(c, '_' | '-' | '.') { ' ' } else { c })
            .collect();
        let mut found: Vec<Range<usize>> = Vec::new();
        for re in &self.patterns {
            for view in [text, spaced.as_str()] {
                found.extend(re.find_iter(view).map(|m| m.range()).filter(|r| !r.is_empty()));
            }
        }
        found.sort_by_key(|r| (r.start, std::cmp::Reverse(r.end)));
        let mut merged: Vec<Range<usize>> = Vec::new();
        for r in found {
            match merged.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => merged.push(r),
            }
        }
        merged
    }

    /// Redacts identifiers anywhere in `text`.
    pub fn scrub(&self, text: &str) -> String {
        let ranges = self.ranges(text);
        if ranges.is_empty() {
            return text.to_string();
        }
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        for r in ranges {
            out.push_str(&text[pos..r.start]);
            out.push_str(REDACTED);
            pos = r.end;
        }
        out.push_str(&text[pos..]);
        out
    }

    /// Redacts identifiers in the comments of C source `text`. Code, string
    /// and character literals are copied unchanged.
    pub fn scrub_comments(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        for span in comment_spans(text) {
            out.push_str(&text[pos..span.start]);
            out.push_str(&self.scrub(&text[span.clone()]));
            pos = span.end;
        }
        out.push_str(&text[pos..]);
        out
    }

    /// Scrubs one source file: its comments and its file name.
    pub fn anonymize(&self, source: &str, file_name: &str) -> AnonymizedFile {
        AnonymizedFile {
            file_name: self.scrub(file_name),
            source: self.scrub_comments(source),
        }
    }
}

/// Scrubs `source` and `file_name` with the default ID pattern and `known`.
pub fn anonymize(source: &str, file_name: &str, known: &[String], id_pattern: &str) -> Result<AnonymizedFile, regex::Error> {
    Ok(Anonymizer::new(id_pattern, known)?.anonymize(source, file_name))
}

/// Byte ranges of comment bodies (without the `//`, `/*` and `*/`).
pub fn comment_spans(text: &str) -> Vec<Range<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Code,
        Line(usize),
        Block(usize),
        Str,
        Chr,
    }
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut state = State::Code;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let next = bytes.get(i + 1).copied();
        match state {
            State::Code => match (b, next) {
                (b'/', Some(b'/')) => {
                    state = State::Line(i + 2);
                    i += 2;
                    continue;
                }
                (b'/', Some(b'*')) => {
                    state = State::Block(i + 2);
                    i += 2;
                    continue;
                }
                (b'"', _) => state = State::Str,
                (b'\'', _) => state = State::Chr,
                _ => {}
            },
            State::Line(start) => match b {
                // A backslash-newline continues a line comment.
                b'\\' if next == Some(b'\n') => {
                    i += 2;
                    continue;
                }
                b'\\' if next == Some(b'\r') && bytes.get(i + 2) == Some(&b'\n') => {
                    i += 3;
                    continue;
                }
                b'\n' => {
                    spans.push(start..i);
                    state = State::Code;
                }
                _ => {}
            },
            State::Block(start) => {
                if b == b'*' && next == Some(b'/') {
                    spans.push(start..i);
                    state = State::Code;
                    i += 2;
                    continue;
                }
            }
            State::Str | State::Chr => match b {
                b'\\' => {
                    i += 2;
                    continue;
                }
                b'"' if state == State::Str => state = State::Code,
                b'\'' if state == State::Chr => state = State::Code,
                // Unterminated literals end at the line.
                b'\n' => state = State::Code,
                _ => {}
            },
        }
        i += 1;
    }
    match state {
        State::Line(start) | State::Block(start) => spans.push(start..bytes.len()),
        _ => {}
    }
    spans
}
