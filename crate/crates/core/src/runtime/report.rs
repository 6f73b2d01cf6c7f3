//! Parsing of run-time fault reports printed by AddressSanitizer,
//! UndefinedBehaviorSanitizer, LeakSanitizer, MemorySanitizer and Valgrind.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::symbolize::{FrameResolver, NoResolver, ResolvedFrame};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SanitizerKind {
    HeapBufferOverflow,
    StackBufferOverflow,
    UseAfterFree,
    NullDeref,
    IntegerDivZero,
    Leak,
    UseOfUninitialized,
    Other(String),
}

impl SanitizerKind {
    pub fn as_str(&self) -> &str {
        match self {
            SanitizerKind::HeapBufferOverflow => "heap-buffer-overflow",
            SanitizerKind::StackBufferOverflow => "stack-buffer-overflow",
            SanitizerKind::UseAfterFree => "use-after-free",
            SanitizerKind::NullDeref => "null-deref",
            SanitizerKind::IntegerDivZero => "integer-div-zero",
            SanitizerKind::Leak => "leak",
            SanitizerKind::UseOfUninitialized => "use-of-uninitialized",
            SanitizerKind::Other(text) => text,
        }
    }
}

impl fmt::Display for SanitizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportCause {
    /// A fatal signal with no sanitizer report, e.g. `SIGSEGV`.
    Signal(String),
    SanitizerReport(SanitizerKind),
    /// A record left behind by the linked-in crash handler.
    ShimCrashRecord { signal: i32 },
}

impl ReportCause {
    /// Short token used by rule patterns, e.g. `heap-buffer-overflow` or
    /// `SIGSEGV`.
    pub fn token(&self) -> String {
        match self {
            ReportCause::Signal(name) => name.clone(),
            ReportCause::SanitizerReport(kind) => kind.as_str().to_string(),
            ReportCause::ShimCrashRecord { signal } => signal_name(*signal).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub cause: ReportCause,
    /// Student source file containing the fault, as passed to the compiler.
    pub error_file: Option<String>,
    pub error_line: Option<u32>,
    pub function_name: Option<String>,
    /// One-line description taken from the report.
    pub headline: String,
    pub raw_report: String,
}

impl RuntimeReport {
    /// Text that explanation rules are matched against: the cause token
    /// followed by the report headline.
    pub fn match_text(&self) -> String {
        format!("{}: {}", self.cause.token(), self.headline)
    }
}

pub fn signal_name(signal: i32) -> &'static str {
    match signal {
        libc::SIGSEGV => "SIGSEGV",
        libc::SIGFPE => "SIGFPE",
        libc::SIGABRT => "SIGABRT",
        libc::SIGBUS => "SIGBUS",
        libc::SIGILL => "SIGILL",
        libc::SIGKILL => "SIGKILL",
        libc::SIGTERM => "SIGTERM",
        libc::SIGINT => "SIGINT",
        libc::SIGPIPE => "SIGPIPE",
        libc::SIGTRAP => "SIGTRAP",
        _ => "signal",
    }
}

/// One stack frame as printed in a report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct Frame {
    pub index: usize,
    pub function: Option<String>,
    pub file: Option<String>,
    pub line: Option<u32>,
    pub module: Option<String>,
    pub offset: Option<u64>,
}

static UBSAN_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):(?P<col>\d+): runtime error: (?P<msg>.*)$").unwrap()
});
static SAN_ERROR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^==\d+==(?:ERROR|WARNING): (?P<tool>AddressSanitizer|LeakSanitizer|MemorySanitizer|ThreadSanitizer): (?P<what>.*)$").unwrap()
});
static VALGRIND_ERROR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^==\d+== (?P<what>Conditional jump or move depends on uninitialised value\(s\)|Use of uninitialised value of size \d+|Syscall param .* uninitialised byte\(s\)|Invalid (?:read|write) of size \d+|Invalid free\(\) / delete / delete\[\] / realloc\(\)|Process terminating with default action of signal \d+ \((?P<sig>SIG[A-Z]+)\)|[\d,]+ (?:\([\d,]+ direct, [\d,]+ indirect\) )?bytes in [\d,]+ blocks are definitely lost in loss record .*)$").unwrap()
});
// `#3 0x4f1a in main /tmp/x/prog.c:12:5`
static FRAME_SYMBOLIZED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*#(?P<idx>\d+) 0x[0-9a-fA-F]+ in (?P<func>.+?) (?P<file>[^\s()]+?):(?P<line>\d+)(?::\d+)?\s*$").unwrap()
});
// `#0 0x4f1a  (/tmp/x/prog+0xdbf46) (BuildId: ...)` or `#3 0x4f1a in _start (/tmp/x/prog+0x1124)`
static FRAME_MODULE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*#(?P<idx>\d+) 0x[0-9a-fA-F]+\s+(?:in (?P<func>\S+)\s+)?\((?P<module>[^()+]+)\+0x(?P<off>[0-9a-fA-F]+)\)").unwrap()
});
// `#1 0x4f1a in __libc_start_main` (no location at all)
static FRAME_BARE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*#(?P<idx>\d+) 0x[0-9a-fA-F]+(?: in (?P<func>\S+))?").unwrap());
// `==42==    at 0x10916D: main (prog.c:7)`
static FRAME_VALGRIND: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^==\d+==\s+(?:at|by) 0x[0-9A-Fa-f]+: (?P<func>.+?) \((?:(?P<file>[^():\s]+):(?P<line>\d+)|in (?P<module>[^()]+))\)\s*$").unwrap()
});
static NEAR_NULL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:address|Address) 0x(?P<addr>[0-9a-fA-F]+)").unwrap());

fn parse_frame(line: &str) -> Option<Frame> {
    if let Some(c) = FRAME_SYMBOLIZED.captures(line) {
        return Some(Frame {
            index: c["idx"].parse().ok()?,
            function: Some(c["func"].to_string()),
            file: Some(c["file"].to_string()),
            line: c["line"].parse().ok(),
            ..Frame::default()
        });
    }
    if let Some(c) = FRAME_MODULE.captures(line) {
        return Some(Frame {
            index: c["idx"].parse().ok()?,
            function: c.name("func").map(|m| m.as_str().to_string()),
            module: Some(c["module"].to_string()),
            offset: u64::from_str_radix(&c["off"], 16).ok(),
            ..Frame::default()
        });
    }
    if let Some(c) = FRAME_VALGRIND.captures(line) {
        return Some(Frame {
            index: 0,
            function: Some(c["func"].to_string()),
            file: c.name("file").map(|m| m.as_str().to_string()),
            line: c.name("line").and_then(|m| m.as_str().parse().ok()),
            module: c.name("module").map(|m| m.as_str().to_string()),
            ..Frame::default()
        });
    }
    let c = FRAME_BARE.captures(line)?;
    Some(Frame {
        index: c["idx"].parse().ok()?,
        function: c.name("func").map(|m| m.as_str().to_string()),
        ..Frame::default()
    })
}

fn address_in(text: &str) -> Option<u64> {
    NEAR_NULL
        .captures(text)
        .and_then(|c| u64::from_str_radix(&c["addr"], 16).ok())
}

fn is_near_null(text: &str) -> bool {
    address_in(text).is_some_and(|addr| addr < 0x1000)
}

fn ubsan_kind(message: &str) -> SanitizerKind {
    if message.contains("division by zero") {
        SanitizerKind::IntegerDivZero
    } else if message.contains("null pointer") {
        SanitizerKind::NullDeref
    } else if message.contains("out of bounds for type") {
        SanitizerKind::Other("index-out-of-bounds".into())
    } else if message.contains("signed integer overflow") {
        SanitizerKind::Other("signed-integer-overflow".into())
    } else if message.contains("shift exponent") || message.contains("left shift") {
        SanitizerKind::Other("invalid-shift".into())
    } else if message.contains("misaligned") {
        SanitizerKind::Other("misaligned-access".into())
    } else {
        SanitizerKind::Other("undefined-behavior".into())
    }
}

fn sanitizer_cause(tool: &str, what: &str) -> ReportCause {
    let kind = match tool {
        "LeakSanitizer" => SanitizerKind::Leak,
        "MemorySanitizer" => SanitizerKind::UseOfUninitialized,
        _ => {
            let token = what.split_whitespace().next().unwrap_or("");
            match token {
                "heap-buffer-overflow" => SanitizerKind::HeapBufferOverflow,
                "stack-buffer-overflow" | "stack-buffer-underflow" => SanitizerKind::StackBufferOverflow,
                "heap-use-after-free" => SanitizerKind::UseAfterFree,
                "FPE" => SanitizerKind::IntegerDivZero,
                "SEGV" if is_near_null(what) => SanitizerKind::NullDeref,
                "SEGV" => return ReportCause::Signal("SIGSEGV".into()),
                "BUS" => return ReportCause::Signal("SIGBUS".into()),
                "ILL" => return ReportCause::Signal("SIGILL".into()),
                "stack-overflow" => SanitizerKind::Other("stack-overflow".into()),
                other => SanitizerKind::Other(other.trim_end_matches(':').to_string()),
            }
        }
    };
    ReportCause::SanitizerReport(kind)
}

fn valgrind_cause(what: &str, following: &[&str]) -> ReportCause {
    if what.contains("uninitialised") {
        return ReportCause::SanitizerReport(SanitizerKind::UseOfUninitialized);
    }
    if what.contains("definitely lost") {
        return ReportCause::SanitizerReport(SanitizerKind::Leak);
    }
    if let Some(sig) = what.strip_prefix("Process terminating with default action of signal ") {
        let name = sig
            .split('(')
            .nth(1)
            .map(|s| s.trim_end_matches(')'))
            .unwrap_or("signal");
        return match name {
            "SIGFPE" => ReportCause::SanitizerReport(SanitizerKind::IntegerDivZero),
            _ => ReportCause::Signal(name.to_string()),
        };
    }
    if what.starts_with("Invalid free") {
        return ReportCause::SanitizerReport(SanitizerKind::Other("invalid-free".into()));
    }
    // Invalid read/write: the "Address ... is ..." line says what was hit.
    let detail = following
        .iter()
        .find(|l| l.contains(" Address 0x"))
        .copied()
        .unwrap_or("");
    let kind = if detail.contains("free'd") {
        SanitizerKind::UseAfterFree
    } else if detail.contains("after a block") || detail.contains("before a block") {
        SanitizerKind::HeapBufferOverflow
    } else if detail.contains("not stack'd, malloc'd") && is_near_null(detail) {
        SanitizerKind::NullDeref
    } else if detail.contains("on thread") && detail.contains("stack") {
        SanitizerKind::StackBufferOverflow
    } else {
        SanitizerKind::Other("invalid-memory-access".into())
    };
    ReportCause::SanitizerReport(kind)
}

/// Matches a reported file name against the student's sources. Returns the
/// source path as the student wrote it.
pub(crate) fn own_source(file: &str, sources: &[PathBuf]) -> Option<String> {
    let reported = Path::new(file);
    for source in sources {
        if reported == source.as_path() {
            return Some(source.display().to_string());
        }
        if let (Ok(a), Ok(b)) = (reported.canonicalize(), source.canonicalize()) {
            if a == b {
                return Some(source.display().to_string());
            }
            continue;
        }
        // One side is not resolvable from here (different cwd or a
        // compile-directory-relative name): fall back to suffix matching.
        if reported.file_name().is_some()
            && reported.file_name() == source.file_name()
            && (reported.ends_with(source) || source.ends_with(reported) || reported.is_absolute())
        {
            return Some(source.display().to_string());
        }
    }
    None
}

struct Block<'a> {
    cause: ReportCause,
    headline: String,
    /// Location printed on the report line itself (UBSan).
    location: Option<(String, u32)>,
    start: usize,
    body: &'a [&'a str],
}

fn find_block<'a>(lines: &'a [&'a str]) -> Option<Block<'a>> {
    for (idx, line) in lines.iter().enumerate() {
        let rest = &lines[idx + 1..];
        if let Some(c) = UBSAN_LINE.captures(line) {
            return Some(Block {
                cause: ReportCause::SanitizerReport(ubsan_kind(&c["msg"])),
                headline: format!("runtime error: {}", &c["msg"]),
                location: c["line"].parse().ok().map(|l| (c["file"].to_string(), l)),
                start: idx,
                body: rest,
            });
        }
        if let Some(c) = SAN_ERROR.captures(line) {
            return Some(Block {
                cause: sanitizer_cause(&c["tool"], &c["what"]),
                headline: c["what"].trim().to_string(),
                location: None,
                start: idx,
                body: rest,
            });
        }
        if let Some(c) = VALGRIND_ERROR.captures(line) {
            let what = c["what"].to_string();
            return Some(Block {
                cause: valgrind_cause(&what, &rest[..rest.len().min(12)]),
                headline: what,
                location: None,
                start: idx,
                body: rest,
            });
        }
    }
    None
}

/// Frames of the first stack trace in a block. Sanitizer traces end at a
/// blank line; Valgrind traces end at the first `==PID== ` line that is not
/// a frame.
fn first_trace(body: &[&str]) -> Vec<Frame> {
    let mut frames = Vec::new();
    let mut started = false;
    for line in body {
        match parse_frame(line) {
            Some(mut frame) => {
                if frame.index == 0 && !frames.is_empty() && line.trim_start().starts_with("==") {
                    frame.index = frames.len();
                }
                started = true;
                frames.push(frame);
            }
            None if started => break,
            None => {
                // Give up if another report starts before any frame.
                if SAN_ERROR.is_match(line) || UBSAN_LINE.is_match(line) {
                    break;
                }
            }
        }
    }
    frames
}

/// Finds the first report in `stderr` and locates the fault in the student's
/// own code. Frames printed without file information are left unresolved;
/// see [`parse_sanitizer_report_with`].
pub fn parse_sanitizer_report(stderr: &str, sources: &[PathBuf]) -> Option<RuntimeReport> {
    parse_sanitizer_report_with(stderr, sources, &NoResolver)
}

/// Like [`parse_sanitizer_report`], resolving `module+offset` frames through
/// `resolver`.
pub fn parse_sanitizer_report_with(
    stderr: &str,
    sources: &[PathBuf],
    resolver: &dyn FrameResolver,
) -> Option<RuntimeReport> {
    let lines: Vec<&str> = stderr.lines().collect();
    let block = find_block(&lines)?;

    let mut report = RuntimeReport {
        cause: block.cause,
        error_file: None,
        error_line: None,
        function_name: None,
        headline: block.headline,
        raw_report: lines[block.start..].join("\n"),
    };

    if let Some((file, line)) = &block.location {
        if let Some(own) = own_source(file, sources) {
            report.error_file = Some(own);
            report.error_line = Some(*line);
        }
    }

    for frame in first_trace(block.body) {
        let resolved = match (&frame.file, &frame.module, frame.offset) {
            (Some(file), _, _) => Some(ResolvedFrame {
                function: frame.function.clone(),
                file: file.clone(),
                line: frame.line.unwrap_or(0),
            }),
            (None, Some(module), Some(offset)) => resolver.resolve(module, offset, frame.index > 0),
            _ => None,
        };
        let Some(resolved) = resolved else { continue };
        let Some(own) = own_source(&resolved.file, sources) else {
            continue;
        };
        if report.error_line.is_none() && resolved.line > 0 {
            report.error_file = Some(own);
            report.error_line = Some(resolved.line);
        }
        report.function_name = resolved.function.or(frame.function);
        break;
    }
    Some(report)
}
