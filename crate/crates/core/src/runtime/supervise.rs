//! Running the real binary behind a launcher and catching its failures.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::{Arc, LazyLock, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;

use super::crash_record::CrashRecord;
use super::launcher::{read_manifest, InstrumentError, LaunchManifest};
use super::locals::{capture_locals_with, LocalsRequest, LocalsSnapshot};
use super::report::{own_source, parse_sanitizer_report_with, signal_name, ReportCause, RuntimeReport, SanitizerKind};
use super::symbolize::{Addr2Line, ResolvedFrame};
use crate::context::{now_utc, ErrorContext, SourceFile, SourceSnapshot};
use crate::phase::Phase;

/// Sanitizer settings exported to the child. A value the user already has
/// in the environment is appended, so the user's settings win.
pub const SANITIZER_DEFAULTS: &[(&str, &str)] = &[
    ("ASAN_OPTIONS", "detect_leaks=1"),
    ("UBSAN_OPTIONS", "halt_on_error=1:print_stacktrace=1"),
    // Leak reports must not change the exit status of an otherwise clean
    // run. This is a common flag, so every other report exits 0 as well;
    // see `sanitized_exit`.
    ("LSAN_OPTIONS", "exitcode=0"),
];

/// Environment variable through which the crash handler learns where to
/// write its record.
pub const CRASH_RECORD_ENV: &str = "CCOACH_CRASH_RECORD";
pub const CRASH_RECORD_SUFFIX: &str = ".crash";

/// Signals that mean the program itself went wrong, as opposed to being
/// stopped from outside (Ctrl-C, `kill`, a closed pipe).
const FAULT_SIGNALS: &[i32] = &[
    libc::SIGSEGV,
    libc::SIGFPE,
    libc::SIGBUS,
    libc::SIGILL,
    libc::SIGABRT,
    libc::SIGTRAP,
    libc::SIGSYS,
];

pub fn sanitizer_env(existing: impl Fn(&str) -> Option<String>) -> Vec<(String, String)> {
    SANITIZER_DEFAULTS
        .iter()
        .map(|(name, ours)| {
            let value = match existing(name) {
                Some(user) if !user.is_empty() => format!("{ours}:{user}"),
                _ => ours.to_string(),
            };
            (name.to_string(), value)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildExit {
    Code(i32),
    Signal(i32),
}

impl ChildExit {
    fn from_status(status: ExitStatus) -> Self {
        match (status.code(), status.signal()) {
            (Some(code), _) => ChildExit::Code(code),
            (None, Some(sig)) => ChildExit::Signal(sig),
            _ => ChildExit::Code(1),
        }
    }

    /// Status as a shell would report it.
    pub fn shell_status(self) -> i32 {
        match self {
            ChildExit::Code(code) => code,
            ChildExit::Signal(sig) => 128 + sig,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuperviseOptions {
    pub capture_locals: bool,
    pub locals_timeout: Duration,
}

impl Default for SuperviseOptions {
    fn default() -> Self {
        SuperviseOptions {
            capture_locals: true,
            locals_timeout: Duration::from_secs(20),
        }
    }
}

#[derive(Debug)]
pub struct SupervisedRun {
    pub exit: ChildExit,
    pub report: Option<RuntimeReport>,
    pub locals: Option<LocalsSnapshot>,
    /// Present exactly when `report` is.
    pub context: Option<ErrorContext>,
    /// Sanitizer and Valgrind output held back from the terminal.
    pub suppressed_stderr: Vec<u8>,
    pub stdin_consumed: bool,
}

/// Runs the program behind `launcher` with arguments `argv` (program name
/// excluded). Stdout is inherited; stderr is copied to this process's stderr
/// minus sanitizer reports.
pub fn supervise_run(launcher: &Path, argv: &[OsString]) -> Result<SupervisedRun, InstrumentError> {
    let mut stderr = io::stderr();
    supervise_run_with(launcher, argv, &SuperviseOptions::default(), &mut stderr)
}

pub fn supervise_run_with(
    launcher: &Path,
    argv: &[OsString],
    options: &SuperviseOptions,
    stderr_sink: &mut (dyn Write + Send),
) -> Result<SupervisedRun, InstrumentError> {
    let manifest = read_manifest(launcher)?;
    let real = manifest.resolve(launcher, &manifest.real);
    let memcheck = manifest
        .memcheck
        .as_ref()
        .map(|m| manifest.resolve(launcher, m))
        .filter(|m| m.is_file());
    let crash_path = crash_record_path(&real);
    let _ = fs::remove_file(&crash_path);

    let mut cmd = match &memcheck {
        Some(binary) => valgrind_command(binary),
        None => Command::new(&real),
    };
    cmd.arg0(launcher.as_os_str()).args(argv);
    if memcheck.is_none() {
        for (name, value) in sanitizer_env(|n| std::env::var(n).ok()) {
            cmd.env(name, value);
        }
    }
    if manifest.crash_shim {
        cmd.env(CRASH_RECORD_ENV, &crash_path);
    }
    cmd.stdout(Stdio::inherit()).stderr(Stdio::piped());
    // SAFETY: `signal` is async-signal-safe.
    unsafe {
        cmd.pre_exec(|| {
            libc::signal(libc::SIGINT, libc::SIG_DFL);
            libc::signal(libc::SIGQUIT, libc::SIG_DFL);
            Ok(())
        });
    }

    let stdin = StdinPlan::detect();
    let forward = match &stdin {
        StdinPlan::Forward => {
            let pipe = StdinForwarder::new().map_err(io_err(launcher))?;
            cmd.stdin(pipe.child_end().map_err(io_err(launcher))?);
            Some(pipe)
        }
        _ => {
            cmd.stdin(Stdio::inherit());
            None
        }
    };

    let ignore = IgnoreInterrupts::new();
    let mut child = cmd.spawn().map_err(io_err(&real))?;
    let forwarder = forward.map(StdinForwarder::start);
    let child_stderr = child.stderr.take().expect("stderr is piped");
    let (status, filtered) = std::thread::scope(|scope| {
        let tee = scope.spawn(move || tee_stderr(child_stderr, stderr_sink));
        let status = child.wait();
        (status, tee.join().expect("stderr reader panicked"))
    });
    drop(ignore);
    let status = status.map_err(io_err(&real))?;
    let mut exit = ChildExit::from_status(status);
    let stdin_consumed = match (&stdin, forwarder) {
        (StdinPlan::Forward, Some(fwd)) => fwd.consumed(),
        (plan, _) => plan.consumed(),
    };

    let absolute: Vec<PathBuf> = manifest.sources.iter().map(|s| s.absolute.clone()).collect();
    let resolver = Addr2Line::new(&real);
    let mut report = parse_sanitizer_report_with(&filtered.all, &absolute, &resolver);
    if report.is_none() {
        report = crash_report(&crash_path, &real, &absolute, exit);
    }
    let _ = fs::remove_file(&crash_path);
    exit = sanitized_exit(exit, report.as_ref());

    let mut locals = None;
    if let Some(report) = report.as_mut() {
        if options.capture_locals && !stdin_consumed {
            let request = LocalsRequest {
                binary: memcheck.clone().unwrap_or_else(|| real.clone()),
                args: argv.to_vec(),
                sources: absolute.clone(),
                memcheck: memcheck.is_some(),
                timeout: options.locals_timeout,
                max_frames: 8,
            };
            locals = capture_locals_with(&request, report);
            if let (None, Some(top)) = (report.error_line, locals.as_ref().and_then(|l| l.frames.first())) {
                report.error_file = top.file.clone();
                report.error_line = top.line;
                report.function_name = Some(top.function.clone());
            }
        }
        relabel(report, &manifest);
    }
    if let Some(locals) = locals.as_mut() {
        for frame in &mut locals.frames {
            if let Some(file) = frame.file.as_mut() {
                *file = display_name(file, &manifest);
            }
        }
    }

    let context = report.as_ref().map(|report| ErrorContext {
        phase: Phase::RunTime,
        timestamp: now_utc(),
        source_files: snapshot_sources(launcher, &manifest),
        diagnostics: Vec::new(),
        primary_diagnostic: None,
        enhanced_message: None,
        runtime_report: Some(report.clone()),
        locals: locals.clone(),
        binary_hash: manifest.binary_hash.clone(),
    });
    Ok(SupervisedRun {
        exit,
        report,
        locals,
        context,
        suppressed_stderr: filtered.suppressed,
        stdin_consumed,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InstrumentError + '_ {
    move |source| InstrumentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Restores the status an unwrapped sanitized binary exits with after a
/// non-leak report (1), which `exitcode=0` turned into 0.
fn sanitized_exit(exit: ChildExit, report: Option<&RuntimeReport>) -> ChildExit {
    match (exit, report.map(|r| &r.cause)) {
        (ChildExit::Code(0), Some(ReportCause::SanitizerReport(kind))) if *kind != SanitizerKind::Leak => ChildExit::Code(1),
        _ => exit,
    }
}

pub fn crash_record_path(real: &Path) -> PathBuf {
    let mut name = real.as_os_str().to_owned();
    name.push(CRASH_RECORD_SUFFIX);
    PathBuf::from(name)
}

fn valgrind_command(binary: &Path) -> Command {
    let mut cmd = Command::new("valgrind");
    cmd.args([
        "--quiet",
        "--exit-on-first-error=yes",
        "--error-exitcode=1",
        "--leak-check=full",
        "--errors-for-leak-kinds=none",
        "--track-origins=no",
    ])
    .arg(binary);
    cmd
}

/// Falls back to the crash handler's record, then to the bare signal.
fn crash_report(crash_path: &Path, real: &Path, sources: &[PathBuf], exit: ChildExit) -> Option<RuntimeReport> {
    if let Some(record) = CrashRecord::read(crash_path) {
        let resolver = Addr2Line::new(real);
        let mut report = RuntimeReport {
            cause: ReportCause::ShimCrashRecord {
                signal: record.signal_number,
            },
            error_file: None,
            error_line: None,
            function_name: None,
            headline: format!(
                "program terminated by {} at address 0x{:x}",
                signal_name(record.signal_number),
                record.fault_address
            ),
            raw_report: String::new(),
        };
        let frame = record.frame_addresses.iter().enumerate().find_map(|(i, &addr)| {
            let resolved: ResolvedFrame = resolver.resolve_address(addr, i > 0)?;
            Some((own_source(&resolved.file, sources)?, resolved))
        });
        if let Some((file, resolved)) = frame {
            report.error_file = Some(file);
            report.error_line = Some(resolved.line);
            report.function_name = resolved.function;
        }
        return Some(report);
    }
    match exit {
        ChildExit::Signal(sig) if FAULT_SIGNALS.contains(&sig) => Some(RuntimeReport {
            cause: ReportCause::Signal(signal_name(sig).to_string()),
            error_file: None,
            error_line: None,
            function_name: None,
            headline: format!("program terminated by {}", signal_name(sig)),
            raw_report: String::new(),
        }),
        _ => None,
    }
}

fn display_name(file: &str, manifest: &LaunchManifest) -> String {
    manifest
        .sources
        .iter()
        .find(|s| s.absolute.as_os_str() == file || s.path == file)
        .map(|s| s.path.clone())
        .unwrap_or_else(|| file.to_string())
}

/// Reports name files by absolute path internally; show them as the student
/// typed them.
fn relabel(report: &mut RuntimeReport, manifest: &LaunchManifest) {
    if let Some(file) = report.error_file.as_mut() {
        *file = display_name(file, manifest);
    }
}

fn snapshot_sources(launcher: &Path, manifest: &LaunchManifest) -> Vec<SourceFile> {
    let snapshot = fs::read(manifest.resolve(launcher, &manifest.snapshot))
        .ok()
        .and_then(|bytes| SourceSnapshot::decode(&bytes).ok())
        .filter(|snap| !snap.sources.is_empty());
    if let Some(snap) = snapshot {
        return snap.sources;
    }
    // Snapshot lost: the files on disk are the best remaining guess.
    manifest
        .sources
        .iter()
        .map(|s| SourceFile {
            path: s.path.clone(),
            contents: fs::read(&s.absolute).unwrap_or_default(),
        })
        .collect()
}

/// Whether and how the child's input can be observed.
enum StdinPlan {
    /// `/dev/null`, closed, or something the child cannot consume.
    Inert,
    /// A regular file; consumption shows up as a moved offset.
    File { offset: i64 },
    /// A terminal, pipe or socket, relayed through our own pipe.
    Forward,
}

impl StdinPlan {
    fn detect() -> Self {
        // SAFETY: fstat on fd 0 with a zeroed out-buffer.
        let mut st: libc::stat = unsafe { std::mem::zeroed() };
        if unsafe { libc::fstat(0, &mut st) } != 0 {
            return StdinPlan::Inert;
        }
        match st.st_mode & libc::S_IFMT {
            libc::S_IFREG => StdinPlan::File {
                offset: unsafe { libc::lseek(0, 0, libc::SEEK_CUR) },
            },
            libc::S_IFCHR if is_dev_null(&st) => StdinPlan::Inert,
            _ => StdinPlan::Forward,
        }
    }

    fn consumed(&self) -> bool {
        match self {
            StdinPlan::Inert => false,
            StdinPlan::File { offset } => (unsafe { libc::lseek(0, 0, libc::SEEK_CUR) }) != *offset,
            StdinPlan::Forward => true,
        }
    }
}

fn is_dev_null(st: &libc::stat) -> bool {
    use std::os::unix::fs::MetadataExt;
    fs::metadata("/dev/null").map(|m| m.rdev() == st.st_rdev).unwrap_or(false)
}

struct Relay {
    writer: Option<File>,
    forwarded: u64,
}

/// Copies our stdin into a pipe for the child, counting bytes, so that we
/// can tell afterwards whether the child read anything.
struct StdinForwarder {
    read_end: Option<OwnedFd>,
    probe: OwnedFd,
    relay: Arc<Mutex<Relay>>,
}

impl StdinForwarder {
    fn new() -> io::Result<Self> {
        let mut fds = [0; 2];
        // SAFETY: pipe2 fills both descriptors on success.
        if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
            return Err(io::Error::last_os_error());
        }
        let (read_end, write_end) = unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) };
        let probe = read_end.try_clone()?;
        Ok(StdinForwarder {
            read_end: Some(read_end),
            probe,
            relay: Arc::new(Mutex::new(Relay {
                writer: Some(File::from(write_end)),
                forwarded: 0,
            })),
        })
    }

    fn child_end(&self) -> io::Result<Stdio> {
        Ok(Stdio::from(self.read_end.as_ref().expect("unused").try_clone()?))
    }

    fn start(mut self) -> Self {
        self.read_end = None;
        let relay = Arc::clone(&self.relay);
        // Detached: the thread may stay blocked on our stdin after the child
        // is gone, which is harmless since this process exits soon after.
        std::thread::spawn(move || {
            let mut stdin = io::stdin().lock();
            let mut buf = [0u8; 8192];
            loop {
                let n = match stdin.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                let mut relay = relay.lock().unwrap();
                let Some(writer) = relay.writer.as_mut() else { break };
                if writer.write_all(&buf[..n]).is_err() {
                    break;
                }
                relay.forwarded += n as u64;
            }
            relay.lock().unwrap().writer = None;
        });
        self
    }

    /// True when the child read at least one byte. A relay stuck writing into
    /// a full pipe counts as consumed; we cannot tell otherwise.
    fn consumed(&self) -> bool {
        let deadline = Instant::now() + Duration::from_millis(200);
        let relay = loop {
            match self.relay.try_lock() {
                Ok(relay) => break relay,
                Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                Err(_) => return true,
            }
        };
        let mut pending: libc::c_int = 0;
        // SAFETY: FIONREAD writes an int.
        if unsafe { libc::ioctl(self.probe.as_raw_fd(), libc::FIONREAD, &mut pending) } != 0 {
            return true;
        }
        relay.forwarded > pending as u64
    }
}

/// Ignores terminal interrupts in the supervisor while the child runs, so
/// Ctrl-C reaches only the child, as with `system(3)`.
struct IgnoreInterrupts {
    int: libc::sighandler_t,
    quit: libc::sighandler_t,
}

impl IgnoreInterrupts {
    fn new() -> Self {
        // SAFETY: replacing and later restoring dispositions.
        unsafe {
            IgnoreInterrupts {
                int: libc::signal(libc::SIGINT, libc::SIG_IGN),
                quit: libc::signal(libc::SIGQUIT, libc::SIG_IGN),
            }
        }
    }
}

impl Drop for IgnoreInterrupts {
    fn drop(&mut self) {
        unsafe {
            libc::signal(libc::SIGINT, self.int);
            libc::signal(libc::SIGQUIT, self.quit);
        }
    }
}

static SUPPRESS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"^(?:==\d+==|={60,}\s*$|SUMMARY: (?:Address|Undefined|Leak|Memory)Sanitizer|",
        r"AddressSanitizer:DEADLYSIGNAL|[^:\s][^:]*:\d+:\d+: runtime error: )"
    ))
    .unwrap()
});
static SENTINEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:==\d+==(?:ERROR|WARNING): \w+Sanitizer|[^:\s][^:]*:\d+:\d+: runtime error: )").unwrap()
});

pub(crate) struct FilteredStderr {
    pub all: String,
    pub suppressed: Vec<u8>,
}

/// Copies the child's stderr line by line to `sink`, holding back report
/// lines and everything after the first report header. Blank lines wait for
/// the next line, since reports are preceded by one.
pub(crate) fn tee_stderr(source: impl Read, sink: &mut (dyn Write + Send)) -> FilteredStderr {
    let mut reader = BufReader::new(source);
    let mut all = Vec::new();
    let mut suppressed = Vec::new();
    let mut blanks = Vec::new();
    let mut in_report = false;
    let mut line = Vec::new();
    loop {
        line.clear();
        match reader.read_until(b'\n', &mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        all.extend_from_slice(&line);
        if !in_report && line.iter().all(u8::is_ascii_whitespace) {
            blanks.extend_from_slice(&line);
            continue;
        }
        let text = String::from_utf8_lossy(&line);
        in_report |= SENTINEL.is_match(&text);
        if in_report || SUPPRESS.is_match(&text) {
            suppressed.append(&mut blanks);
            suppressed.extend_from_slice(&line);
        } else {
            blanks.extend_from_slice(&line);
            let _ = sink.write_all(&blanks);
            let _ = sink.flush();
            blanks.clear();
        }
    }
    let _ = sink.write_all(&blanks);
    let _ = sink.flush();
    FilteredStderr {
        all: String::from_utf8_lossy(&all).into_owned(),
        suppressed,
    }
}
