//! Persistence of the most recent error, so that a later `ccoach --help` can
//! rebuild the full prompt.
//!
//! # File format
//!
//! ```text
//! magic     10 bytes  "CCOACHCTX\0"
//! version    1 byte   0x01
//! metadata   8-byte big-endian length, then UTF-8 JSON
//! source 1   8-byte big-endian length, then the file's raw bytes
//! ...
//! source N
//! ```
//!
//! The metadata lists the source paths in section order, so source bytes
//! never pass through a text encoding. Writes go to a temporary file in the
//! same directory which is then renamed over the old context.

use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compile::Diagnostic;
use crate::phase::Phase;
use crate::runtime::{LocalsSnapshot, RuntimeReport};

pub const CONTEXT_MAGIC: &[u8; 10] = b"CCOACHCTX\0";
pub const SNAPSHOT_MAGIC: &[u8; 10] = b"CCOACHSRC\0";
pub const FORMAT_VERSION: u8 = 0x01;
pub const STORE_DIR: &str = ".ccoach";
const CONTEXT_FILE: &str = "last-error.ctx";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("context store I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("stored context is corrupt: {0}")]
    Corrupt(String),
    #[error("refusing to store an inconsistent context: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub contents: Vec<u8>,
}

impl SourceFile {
    pub fn read(path: &Path) -> io::Result<Self> {
        Ok(SourceFile {
            path: path.display().to_string(),
            contents: fs::read(path)?,
        })
    }

    pub fn text(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.contents)
    }
}

/// Everything known about the most recent failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorContext {
    pub phase: Phase,
    /// UTC seconds.
    pub timestamp: i64,
    pub source_files: Vec<SourceFile>,
    pub diagnostics: Vec<Diagnostic>,
    pub primary_diagnostic: Option<Diagnostic>,
    pub enhanced_message: Option<String>,
    pub runtime_report: Option<RuntimeReport>,
    pub locals: Option<LocalsSnapshot>,
    /// SHA-256 of the program binary for run-time errors, of the sources for
    /// compile-time errors.
    pub binary_hash: String,
}

impl ErrorContext {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.source_files.is_empty() {
            return Err(StoreError::Invalid("no source files"));
        }
        match self.phase {
            Phase::CompileTime if self.runtime_report.is_some() || self.locals.is_some() => Err(
                StoreError::Invalid("compile-time context carries run-time data"),
            ),
            Phase::RunTime if self.runtime_report.is_none() => {
                Err(StoreError::Invalid("run-time context without a report"))
            }
            _ => Ok(()),
        }
    }

    /// File the error is in, as written by the student.
    pub fn error_file(&self) -> Option<&str> {
        match self.phase {
            Phase::CompileTime => self.primary_diagnostic.as_ref().map(|d| d.file.as_str()),
            Phase::RunTime => self.runtime_report.as_ref()?.error_file.as_deref(),
        }
    }

    pub fn error_line(&self) -> Option<u32> {
        match self.phase {
            Phase::CompileTime => self.primary_diagnostic.as_ref().map(|d| d.line),
            Phase::RunTime => self.runtime_report.as_ref()?.error_line,
        }
    }

    /// The source file holding the error, falling back to the first source.
    pub fn error_source(&self) -> &SourceFile {
        self.error_file()
            .and_then(|file| {
                self.source_files.iter().find(|s| {
                    s.path == file || Path::new(&s.path).file_name() == Path::new(file).file_name()
                })
            })
            .unwrap_or(&self.source_files[0])
    }
}

pub fn hash_bytes(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for chunk in chunks {
        hasher.update(chunk);
    }
    hex::encode(hasher.finalize())
}

pub fn now_utc() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    phase: Phase,
    timestamp: i64,
    sources: Vec<String>,
    diagnostics: Vec<Diagnostic>,
    primary_diagnostic: Option<Diagnostic>,
    enhanced_message: Option<String>,
    runtime_report: Option<RuntimeReport>,
    locals: Option<LocalsSnapshot>,
    binary_hash: String,
}

pub(crate) fn encode_container(magic: &[u8; 10], metadata: &str, sections: &[&[u8]]) -> Vec<u8> {
    let total = 11 + 8 + metadata.len() + sections.iter().map(|s| 8 + s.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(metadata.len() as u64).to_be_bytes());
    out.extend_from_slice(metadata.as_bytes());
    for section in sections {
        out.extend_from_slice(&(section.len() as u64).to_be_bytes());
        out.extend_from_slice(section);
    }
    out
}

fn take_section<'a>(bytes: &mut &'a [u8]) -> Result<&'a [u8], StoreError> {
    if bytes.len() < 8 {
        return Err(StoreError::Corrupt("truncated section length".into()));
    }
    let (len, rest) = bytes.split_at(8);
    let len = u64::from_be_bytes(len.try_into().unwrap());
    if (rest.len() as u64) < len {
        return Err(StoreError::Corrupt("truncated section".into()));
    }
    let (section, rest) = rest.split_at(len as usize);
    *bytes = rest;
    Ok(section)
}

pub(crate) fn decode_container<'a>(
    magic: &[u8; 10],
    mut bytes: &'a [u8],
) -> Result<(&'a str, Vec<&'a [u8]>), StoreError> {
    if bytes.len() < 11 || &bytes[..10] != magic {
        return Err(StoreError::Corrupt("bad magic".into()));
    }
    if bytes[10] != FORMAT_VERSION {
        return Err(StoreError::Corrupt(format!("unsupported version {}", bytes[10])));
    }
    bytes = &bytes[11..];
    let metadata = std::str::from_utf8(take_section(&mut bytes)?)
        .map_err(|_| StoreError::Corrupt("metadata is not UTF-8".into()))?;
    let mut sections = Vec::new();
    while !bytes.is_empty() {
        sections.push(take_section(&mut bytes)?);
    }
    Ok((metadata, sections))
}

pub fn encode_context(ctx: &ErrorContext) -> Vec<u8> {
    let metadata = Metadata {
        phase: ctx.phase,
        timestamp: ctx.timestamp,
        sources: ctx.source_files.iter().map(|s| s.path.clone()).collect(),
        diagnostics: ctx.diagnostics.clone(),
        primary_diagnostic: ctx.primary_diagnostic.clone(),
        enhanced_message: ctx.enhanced_message.clone(),
        runtime_report: ctx.runtime_report.clone(),
        locals: ctx.locals.clone(),
        binary_hash: ctx.binary_hash.clone(),
    };
    let json = serde_json::to_string(&metadata).expect("context metadata serializes");
    let sections: Vec<&[u8]> = ctx.source_files.iter().map(|s| s.contents.as_slice()).collect();
    encode_container(CONTEXT_MAGIC, &json, &sections)
}

pub fn decode_context(bytes: &[u8]) -> Result<ErrorContext, StoreError> {
    let (json, sections) = decode_container(CONTEXT_MAGIC, bytes)?;
    let meta: Metadata =
        serde_json::from_str(json).map_err(|e| StoreError::Corrupt(format!("metadata: {e}")))?;
    if meta.sources.len() != sections.len() {
        return Err(StoreError::Corrupt(format!(
            "metadata lists {} sources but file has {} sections",
            meta.sources.len(),
            sections.len()
        )));
    }
    let ctx = ErrorContext {
        phase: meta.phase,
        timestamp: meta.timestamp,
        source_files: meta
            .sources
            .into_iter()
            .zip(sections)
            .map(|(path, contents)| SourceFile {
                path,
                contents: contents.to_vec(),
            })
            .collect(),
        diagnostics: meta.diagnostics,
        primary_diagnostic: meta.primary_diagnostic,
        enhanced_message: meta.enhanced_message,
        runtime_report: meta.runtime_report,
        locals: meta.locals,
        binary_hash: meta.binary_hash,
    };
    ctx.validate()
        .map_err(|e| StoreError::Corrupt(e.to_string()))?;
    Ok(ctx)
}

/// Source files captured at build time, keyed by the binary they built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSnapshot {
    pub binary_hash: String,
    pub sources: Vec<SourceFile>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotMetadata {
    binary_hash: String,
    sources: Vec<String>,
}

impl SourceSnapshot {
    pub fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_string(&SnapshotMetadata {
            binary_hash: self.binary_hash.clone(),
            sources: self.sources.iter().map(|s| s.path.clone()).collect(),
        })
        .expect("snapshot metadata serializes");
        let sections: Vec<&[u8]> = self.sources.iter().map(|s| s.contents.as_slice()).collect();
        encode_container(SNAPSHOT_MAGIC, &json, &sections)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let (json, sections) = decode_container(SNAPSHOT_MAGIC, bytes)?;
        let meta: SnapshotMetadata =
            serde_json::from_str(json).map_err(|e| StoreError::Corrupt(format!("metadata: {e}")))?;
        if meta.sources.len() != sections.len() {
            return Err(StoreError::Corrupt("source count mismatch".into()));
        }
        Ok(SourceSnapshot {
            binary_hash: meta.binary_hash,
            sources: meta
                .sources
                .into_iter()
                .zip(sections)
                .map(|(path, contents)| SourceFile {
                    path,
                    contents: contents.to_vec(),
                })
                .collect(),
        })
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = temp_sibling(path);
    write_temp(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("ctx");
    path.with_file_name(format!(".{name}.{}.{nanos}.tmp", std::process::id()))
}

fn write_temp(tmp: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut file = File::create(tmp)?;
    file.write_all(bytes)?;
    file.sync_all()
}

/// Location of the most recent error context.
#[derive(Debug, Clone)]
pub struct ContextStore {
    path: PathBuf,
    expiry_seconds: i64,
}

impl ContextStore {
    pub const DEFAULT_EXPIRY_SECONDS: i64 = 24 * 60 * 60;

    /// Store for a workspace: `<dir>/.ccoach/last-error.ctx`.
    pub fn for_workspace(dir: &Path) -> Self {
        Self::at(dir.join(STORE_DIR).join(CONTEXT_FILE))
    }

    /// Per-user store inside the state directory.
    pub fn for_user(state_dir: &Path) -> Self {
        Self::at(state_dir.join(CONTEXT_FILE))
    }

    pub fn at(path: impl Into<PathBuf>) -> Self {
        ContextStore {
            path: path.into(),
            expiry_seconds: Self::DEFAULT_EXPIRY_SECONDS,
        }
    }

    pub fn with_expiry_hours(mut self, hours: u64) -> Self {
        self.expiry_seconds = (hours as i64).saturating_mul(3600);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Replaces the stored context.
    pub fn save(&self, ctx: &ErrorContext) -> Result<(), StoreError> {
        ctx.validate()?;
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomically(&self.path, &encode_context(ctx))?;
        Ok(())
    }

    pub fn load(&self) -> Result<Option<ErrorContext>, StoreError> {
        self.load_at(now_utc())
    }

    /// Loads the stored context as seen at time `now`; contexts older than
    /// the expiry window are treated as absent.
    pub fn load_at(&self, now: i64) -> Result<Option<ErrorContext>, StoreError> {
        let bytes = match fs::read(&self.path) {
            Ok(bytes) => bytes,
            Err(err) if err.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(err) => return Err(err.into()),
        };
        let ctx = decode_context(&bytes)?;
        if now.saturating_sub(ctx.timestamp) > self.expiry_seconds {
            return Ok(None);
        }
        Ok(Some(ctx))
    }
}
