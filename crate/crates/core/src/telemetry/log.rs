//! Append-only usage log: one tab-separated event per line, one file per
//! UTC day.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use hmac::{Hmac, Mac};
use serde::Serialize;
use sha2::Sha256;
use thiserror::Error;

pub const LOG_SCHEMA_VERSION: u32 = 1;
/// Lines are written with one `write` call on an `O_APPEND` descriptor;
/// staying under `PIPE_BUF` keeps them whole with concurrent writers.
pub const MAX_LINE_BYTES: usize = 512;
const EVENT_PREFIX: &str = "events-";
const TRANSCRIPT_PREFIX: &str = "help-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    CompileOk,
    CompileError,
    RuntimeError,
    HelpCompile,
    HelpRuntime,
    HelpRefused,
    ToolError,
}

const KIND_NAMES: [(EventKind, &str); 7] = [
    (EventKind::CompileOk, "compile-ok"),
    (EventKind::CompileError, "compile-error"),
    (EventKind::RuntimeError, "runtime-error"),
    (EventKind::HelpCompile, "help-compile"),
    (EventKind::HelpRuntime, "help-runtime"),
    (EventKind::HelpRefused, "help-refused"),
    (EventKind::ToolError, "tool-error"),
];

impl EventKind {
    pub fn as_str(self) -> &'static str {
        KIND_NAMES.iter().find(|(k, _)| *k == self).map(|(_, n)| *n).unwrap()
    }

    pub fn is_help(self) -> bool {
        matches!(self, EventKind::HelpCompile | EventKind::HelpRuntime)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = LogError;
    fn from_str(s: &str) -> Result<Self, LogError> {
        KIND_NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(k, _)| *k)
            .ok_or_else(|| LogError::Parse(format!("unknown event kind `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad log line: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageEvent {
    /// UTC seconds.
    pub timestamp: i64,
    pub kind: EventKind,
    pub user_hash: String,
    pub source_bytes: u64,
    /// ISO week of the timestamp, e.g. `2026-W42`.
    pub week: String,
}

/// ISO week label of a UTC timestamp.
pub fn iso_week(timestamp: i64) -> String {
    let week = utc(timestamp).iso_week();
    format!("{}-W{:02}", week.year(), week.week())
}

fn utc(timestamp: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(timestamp, 0).unwrap_or_default()
}

/// Keyed digest of a user name: the first 16 hex digits of
/// HMAC-SHA256(salt, user).
pub fn user_hash(salt: &str, user: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(salt.as_bytes()).expect("any key length");
    mac.update(user.as_bytes());
    hex::encode(&mac.finalize().into_bytes()[..8])
}

/// Name of the current user, from the environment.
pub fn current_user() -> String {
    ["USER", "LOGNAME", "USERNAME"]
        .iter()
        .find_map(|v| std::env::var(v).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| "unknown".to_string())
}

impl UsageEvent {
    pub fn new(timestamp: i64, kind: EventKind, user_hash: String, source_bytes: u64) -> Self {
        UsageEvent {
            timestamp,
            kind,
            user_hash,
            source_bytes,
            week: iso_week(timestamp),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{LOG_SCHEMA_VERSION}\t{}\t{}\t{}\t{}\t{}\n",
            self.timestamp, self.kind, self.user_hash, self.source_bytes, self.week
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, LogError> {
        let bad = || LogError::Parse(line.to_string());
        let fields: Vec<&str> = line.trim_end_matches(['\n', '\r']).split('\t').collect();
        let [version, timestamp, kind, user_hash, source_bytes, week] = fields[..] else {
            return Err(bad());
        };
        if version.parse::<u32>().map_err(|_| bad())? != LOG_SCHEMA_VERSION {
            return Err(LogError::Parse(format!("unsupported schema version {version}")));
        }
        if user_hash.len() != 16 || !user_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad());
        }
        Ok(UsageEvent {
            timestamp: timestamp.parse().map_err(|_| bad())?,
            kind: kind.parse()?,
            user_hash: user_hash.to_string(),
            source_bytes: source_bytes.parse().map_err(|_| bad())?,
            week: week.to_string(),
        })
    }
}

/// A help request and its reply, kept for later review. The source is
/// anonymized before it is written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub timestamp: i64,
    pub user_hash: String,
    pub phase: crate::phase::Phase,
    pub file_name: String,
    pub source: String,
    pub explanation: String,
    pub reply: String,
    pub interrupted: bool,
}

/// The log directory.
#[derive(Debug, Clone)]
pub struct EventLog {
    dir: PathBuf,
}

fn day(timestamp: i64) -> String {
    utc(timestamp).format("%Y-%m-%d").to_string()
}

impl EventLog {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EventLog { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&self, name: String, line: &[u8]) -> Result<(), LogError> {
        let path = self.dir.join(name);
        let io = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.dir).map_err(io)?;
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        file.write_all(line).map_err(io)?;
        file.sync_all().map_err(io)
    }

    pub fn log_event(&self, event: &UsageEvent) -> Result<(), LogError> {
        let line = event.to_line();
        if line.len() > MAX_LINE_BYTES || event.user_hash.contains(['\t', '\n']) || event.week.contains(['\t', '\n']) {
            return Err(LogError::Parse(line));
        }
        self.append(format!("{EVENT_PREFIX}{}.tsv", day(event.timestamp)), line.as_bytes())
    }

    /// Appends one JSON line. Transcripts can be large, so these go to their
    /// own files and are written with a single call but no size limit.
    pub fn log_transcript(&self, transcript: &Transcript) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(transcript).map_err(|e| LogError::Parse(e.to_string()))?;
        line.push(b'\n');
        self.append(format!("{TRANSCRIPT_PREFIX}{}.jsonl", day(transcript.timestamp)), &line)
    }

    /// Reads every event file. Malformed lines are skipped and counted.
    pub fn read_events(&self) -> Result<(Vec<UsageEvent>, usize), LogError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
            Err(source) => {
                return Err(LogError::Io {
                    path: self.dir.clone(),
                    source,
                })
            }
        };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(EVENT_PREFIX) && n.ends_with(".tsv"))
            })
            .collect();
        files.sort();
        let mut events = Vec::new();
        let mut skipped = 0;
        for path in files {
            let text = fs::read_to_string(&path).map_err(|source| LogError::Io {
                path: path.clone(),
                source,
            })?;
            for line in text.lines().filter(|l| !l.is_empty()) {
                match UsageEvent::parse_line(line) {
                    Ok(event) => events.push(event),
                    Err(_) => skipped += 1,
                }
            }
        }
        Ok((events, skipped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::new(dir.path().join("logs"));
        let events: Vec<UsageEvent> = [EventKind::CompileError, EventKind::HelpCompile, EventKind::HelpRuntime]
            .into_iter()
            .enumerate()
            .map(|(i, kind)| UsageEvent::new(1_760_000_000 + i as i64, kind, user_hash("salt", "z1234567"), 120))
            .collect();
        for e in &events {
            log.log_event(e).unwrap();
        }
        let (read, skipped) = log.read_events().unwrap();
        assert_eq!(read, events);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn user_hash_is_keyed() {
        let h = user_hash("salt", "z1234567");
        assert_eq!(h.len(), 16);
        assert_ne!(h, user_hash("other", "z1234567"));
        assert!(!h.contains("z1234567"));
    }

    #[test]
    fn iso_week_labels() {
        // 2021-01-03 is a Sunday in ISO week 2020-W53.
        assert_eq!(iso_week(1_609_632_000), "2020-W53");
        assert_eq!(iso_week(1_609_718_400), "2021-W01");
    }

    #[test]
    fn bad_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventLog::new(dir.path());
        let good = UsageEvent::new(0, EventKind::CompileOk, user_hash("s", "u"), 0);
        fs::write(
            dir.path().join("events-1970-01-01.tsv"),
            format!("{}garbage\n2\t0\tcompile-ok\t0123456789abcdef\t0\tx\n", good.to_line()),
        )
        .unwrap();
        let (events, skipped) = log.read_events().unwrap();
        assert_eq!(events, [good]);
        assert_eq!(skipped, 2);
    }

    #[test]
    fn unwritable_dir_is_an_error_not_a_panic() {
        let log = EventLog::new("/proc/ccoach-cannot-exist");
        assert!(log.log_event(&UsageEvent::new(0, EventKind::CompileOk, user_hash("s", "u"), 0)).is_err());
    }
}
