//! Recovering local variable values at the point of failure.
//!
//! The program is re-run under gdb (or under Valgrind with gdb attached
//! through vgdb) with its input redirected from `/dev/null`; a Python script
//! walks the stack and prints the student's frames as JSON.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::{own_source, RuntimeReport, SanitizerKind};
use super::report::ReportCause;
use crate::config::find_on_path;

const SCRIPT: &str = include_str!("locals_script.py");
const JSON_MARKER: &str = "CCOACH-JSON ";
const VGDB_READY: &str = "(action on error) vgdb me";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub rendered_value: String,
    pub is_uninitialized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLocals {
    pub function: String,
    pub file: Option<String>,
    pub line: Option<u32>,
    pub variables: Vec<Variable>,
}

/// Local variables of the student's frames, innermost first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalsSnapshot {
    pub frames: Vec<FrameLocals>,
}

impl LocalsSnapshot {
    /// `name = value` lines for the innermost frame.
    pub fn render(&self) -> String {
        let Some(frame) = self.frames.first() else {
            return String::new();
        };
        frame
            .variables
            .iter()
            .map(|v| format!("{} = {}\n", v.name, v.rendered_value))
            .collect()
    }

    pub fn has_uninitialized(&self) -> bool {
        self.frames
            .iter()
            .flat_map(|f| &f.variables)
            .any(|v| v.is_uninitialized)
    }
}

/// How to re-run a program to collect its locals.
#[derive(Debug, Clone)]
pub struct LocalsRequest {
    pub binary: PathBuf,
    pub args: Vec<OsString>,
    /// Student sources, absolute.
    pub sources: Vec<PathBuf>,
    /// Run under Valgrind and query definedness of each value.
    pub memcheck: bool,
    pub timeout: Duration,
    pub max_frames: usize,
}

impl LocalsRequest {
    pub fn new(binary: impl Into<PathBuf>, sources: Vec<PathBuf>) -> Self {
        LocalsRequest {
            binary: binary.into(),
            args: Vec::new(),
            sources,
            memcheck: false,
            timeout: Duration::from_secs(20),
            max_frames: 8,
        }
    }
}

/// Re-runs `binary` under the debugger and returns the locals at `report`'s
/// fault. The report's own file is the only source considered.
pub fn capture_locals(binary: &Path, report: &RuntimeReport) -> Option<LocalsSnapshot> {
    let sources = report
        .error_file
        .iter()
        .filter_map(|f| Path::new(f).canonicalize().ok())
        .collect();
    capture_locals_with(&LocalsRequest::new(binary, sources), report)
}

/// Returns `None` when no debugger is installed, the re-run does not stop
/// in the student's code, or it stops on a different line than `report`.
pub fn capture_locals_with(request: &LocalsRequest, report: &RuntimeReport) -> Option<LocalsSnapshot> {
    if matches!(report.cause, ReportCause::SanitizerReport(SanitizerKind::Leak)) {
        // Leaks are found after main returns; there is no frame to inspect.
        return None;
    }
    let gdb = find_on_path("gdb")?;
    let scratch = Scratch::new()?;
    let script = scratch.path.join("locals.py");
    fs::write(&script, SCRIPT).ok()?;

    let stdout = if request.memcheck {
        run_under_vgdb(&gdb, request, &script, &scratch.path)?
    } else {
        run_under_gdb(&gdb, request, &script)?
    };
    let mut snapshot = parse_script_output(&stdout)?;
    for frame in &mut snapshot.frames {
        frame.file = frame
            .file
            .take()
            .map(|f| own_source(&f, &request.sources).unwrap_or(f));
    }
    let top = snapshot.frames.first()?;
    if let Some(line) = report.error_line {
        if top.line != Some(line) {
            return None;
        }
    }
    Some(snapshot)
}

fn gdb_command(gdb: &Path, request: &LocalsRequest) -> Command {
    let mut cmd = Command::new(gdb);
    cmd.args(["-nx", "-nh", "-batch", "-q"])
        .args(["-ex", "set pagination off", "-ex", "set confirm off", "-ex", "set print elements 200"])
        .env("CCOACH_SOURCES", join_paths(&request.sources))
        .env("CCOACH_MAX_FRAMES", request.max_frames.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    cmd
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

fn run_under_gdb(gdb: &Path, request: &LocalsRequest, script: &Path) -> Option<String> {
    let mut cmd = gdb_command(gdb, request);
    // Make sanitizers abort after reporting so the debugger stops in place.
    for (name, value) in super::supervise::sanitizer_env(|n| std::env::var(n).ok()) {
        cmd.env(name, format!("{value}:abort_on_error=1:detect_leaks=0"));
    }
    cmd.args(["-ex", "run > /dev/null 2>&1 < /dev/null"])
        .arg("-x")
        .arg(script)
        .args(["-ex", "kill"])
        .arg("--args")
        .arg(&request.binary)
        .args(&request.args);
    let child = cmd.spawn().ok()?;
    collect_stdout(child, request.timeout)
}

fn run_under_vgdb(gdb: &Path, request: &LocalsRequest, script: &Path, scratch: &Path) -> Option<String> {
    let valgrind = find_on_path("valgrind")?;
    let vgdb = find_on_path("vgdb")?;
    let prefix = scratch.join("vgdb");
    let mut program = Command::new(valgrind)
        .arg("--quiet")
        .arg("--vgdb=yes")
        .arg("--vgdb-error=1")
        .arg(format!("--vgdb-prefix={}", prefix.display()))
        .arg("--leak-check=no")
        .arg(&request.binary)
        .args(&request.args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .ok()?;
    // Valgrind prints connection instructions at startup; this line means it
    // has actually stopped at the first error.
    let stderr = program.stderr.take()?;
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(stderr);
        let mut line = String::new();
        let mut found = false;
        while !found && reader.read_line(&mut line).map(|n| n > 0).unwrap_or(false) {
            found = line.contains(VGDB_READY);
            line.clear();
        }
        let _ = tx.send(found);
        // Keep draining so Valgrind never blocks on a full pipe.
        let _ = std::io::copy(&mut reader, &mut std::io::sink());
    });
    let ready = rx.recv_timeout(request.timeout).unwrap_or(false);
    let result = ready.then(|| {
        let mut cmd = gdb_command(gdb, request);
        cmd.env("CCOACH_VBITS", "1")
            .arg(&request.binary)
            .args([
                "-ex",
                &format!("target remote | {} --wait=10 --vgdb-prefix={}", vgdb.display(), prefix.display()),
            ])
            .arg("-x")
            .arg(script)
            .args(["-ex", "monitor v.kill"]);
        cmd.spawn().ok().and_then(|child| collect_stdout(child, request.timeout))
    });
    let _ = program.kill();
    let _ = program.wait();
    result.flatten()
}

fn collect_stdout(mut child: Child, timeout: Duration) -> Option<String> {
    let mut stdout = child.stdout.take()?;
    let reader = std::thread::spawn(move || {
        let mut out = String::new();
        let _ = stdout.read_to_string(&mut out);
        out
    });
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
            _ => {
                let _ = child.kill();
                let _ = child.wait();
                return None;
            }
        }
    }
    reader.join().ok()
}

pub(crate) fn parse_script_output(stdout: &str) -> Option<LocalsSnapshot> {
    let json = stdout.lines().find_map(|l| l.strip_prefix(JSON_MARKER))?;
    let frames: Vec<FrameLocals> = serde_json::from_str(json).ok()?;
    (!frames.is_empty()).then_some(LocalsSnapshot { frames })
}

/// A private temporary directory removed on drop.
struct Scratch {
    path: PathBuf,
}

impl Scratch {
    fn new() -> Option<Self> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()?
            .subsec_nanos();
        let path = std::env::temp_dir().join(format!("ccoach-{}-{nanos}", std::process::id()));
        fs::create_dir(&path).ok()?;
        Some(Scratch { path })
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.path);
    }
}
