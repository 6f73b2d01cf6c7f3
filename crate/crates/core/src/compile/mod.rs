//! Running the system C compiler and interpreting what it prints.

mod diagnostics;

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::config::ToolConfig;
use crate::runtime::{self, InstrumentError, LaunchOptions};

pub use diagnostics::{parse_diagnostics, select_primary_diagnostic, Diagnostic, ParsedStderr, Severity};

/// Flags added to every compile, ahead of the student's own flags. DWARF 4
/// because older binutils cannot read the DWARF 5 that clang emits by default.
pub const INJECTED_FLAGS: &[&str] = &[
    "-gdwarf-4",
    "-fsanitize=address,undefined",
    "-fno-omit-frame-pointer",
    "-Wall",
    "-Wextra",
    "-fdiagnostics-color=never",
];

/// Flags for the unsanitized binary used by the Valgrind tier.
pub const MEMCHECK_FLAGS: &[&str] = &["-gdwarf-4", "-O0", "-fno-omit-frame-pointer", "-w"];

// Flags that stop the compiler before linking; nothing to wrap then.
const NO_LINK_FLAGS: &[&str] = &["-c", "-S", "-E", "-M", "-MM", "-fsyntax-only"];

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("no C compiler found (set `compiler` in the config file or install clang or gcc)")]
    CompilerNotFound,
    #[error("{0}: no such file")]
    SourceMissing(PathBuf),
    #[error("{0}: not a C source file (expected a .c suffix)")]
    NotCSource(PathBuf),
    #[error("failed to run the compiler: {0}")]
    Spawn(#[source] io::Error),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileOutcome {
    pub exit_status: i32,
    pub diagnostics: Vec<Diagnostic>,
    pub unparsed_lines: Vec<String>,
    pub output_binary: Option<PathBuf>,
    /// Compiler stdout and stderr, verbatim.
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl CompileOutcome {
    pub fn primary_diagnostic(&self) -> Option<&Diagnostic> {
        select_primary_diagnostic(&self.diagnostics)
    }
}

/// What to compile and how to wrap the result.
#[derive(Debug, Clone)]
pub struct CompileRequest {
    pub sources: Vec<PathBuf>,
    pub output: PathBuf,
    pub passthrough: Vec<String>,
    /// Executable that the launcher script calls back into. `None` leaves the
    /// compiled binary unwrapped.
    pub supervisor: Option<PathBuf>,
}

impl CompileRequest {
    pub fn new(sources: Vec<PathBuf>, output: impl Into<PathBuf>) -> Self {
        CompileRequest {
            sources,
            output: output.into(),
            passthrough: Vec::new(),
            supervisor: None,
        }
    }

    fn links(&self) -> bool {
        !self
            .passthrough
            .iter()
            .any(|flag| NO_LINK_FLAGS.contains(&flag.as_str()))
    }
}

fn check_sources(sources: &[PathBuf]) -> Result<(), CompileError> {
    for source in sources {
        if source.extension().and_then(|e| e.to_str()) != Some("c") {
            return Err(CompileError::NotCSource(source.clone()));
        }
        if !source.is_file() {
            return Err(CompileError::SourceMissing(source.clone()));
        }
    }
    Ok(())
}

fn compiler_command(compiler: &Path) -> Command {
    let mut cmd = Command::new(compiler);
    // Plain ASCII quotes and English messages keep the parser and rules stable.
    cmd.env("LC_ALL", "C");
    cmd
}

/// Compiles `request.sources` with the checking flags and parses the
/// compiler's diagnostics. On a successful link the binary is wrapped in a
/// supervising launcher (when `request.supervisor` is set).
pub fn invoke_compiler(request: &CompileRequest, config: &ToolConfig) -> Result<CompileOutcome, CompileError> {
    let compiler = config.resolve_compiler().ok_or(CompileError::CompilerNotFound)?;
    check_sources(&request.sources)?;

    let mut cmd = compiler_command(&compiler);
    cmd.args(INJECTED_FLAGS);
    if let Some(shim) = &config.crash_shim {
        // Crash records carry absolute addresses; a fixed load address lets
        // the supervisor resolve them without knowing the runtime base.
        cmd.arg("-no-pie").arg(shim);
    }
    cmd.args(&request.sources);
    cmd.args(&request.passthrough);
    cmd.arg("-o").arg(&request.output);

    let output = cmd.output().map_err(CompileError::Spawn)?;
    let exit_status = output.status.code().unwrap_or(1);
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    let parsed = parse_diagnostics(&stderr);

    let mut outcome = CompileOutcome {
        exit_status,
        diagnostics: parsed.diagnostics,
        unparsed_lines: parsed.unparsed,
        output_binary: None,
        stdout: output.stdout,
        stderr,
    };
    if exit_status != 0 || !request.output.exists() {
        return Ok(outcome);
    }
    outcome.output_binary = Some(request.output.clone());

    if let (Some(supervisor), true) = (&request.supervisor, request.links()) {
        let memcheck = if config.uninit_tier {
            build_memcheck_binary(&compiler, request)
        } else {
            None
        };
        let options = LaunchOptions {
            supervisor: supervisor.clone(),
            memcheck_binary: memcheck,
            crash_shim: config.crash_shim.is_some(),
        };
        runtime::instrument_build(&request.output, &request.sources, &options)?;
    }
    Ok(outcome)
}

fn build_memcheck_binary(compiler: &Path, request: &CompileRequest) -> Option<PathBuf> {
    let mut target = OsString::from(request.output.as_os_str());
    target.push(runtime::MEMCHECK_SUFFIX);
    let target = PathBuf::from(target);
    let status = compiler_command(compiler)
        .args(MEMCHECK_FLAGS)
        .args(&request.sources)
        .args(&request.passthrough)
        .arg("-o")
        .arg(&target)
        .output()
        .ok()?;
    if status.status.success() {
        Some(target)
    } else {
        let _ = fs::remove_file(&target);
        None
    }
}
