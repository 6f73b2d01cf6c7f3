//! Supervised execution of student programs: the launcher that replaces a
//! compiled binary, report parsing, crash records and locals capture.

mod crash_record;
mod launcher;
mod locals;
mod report;
mod supervise;
mod symbolize;

pub use crash_record::{CrashRecord, CrashRecordError, MAX_FRAMES, RECORD_SIZE};
pub use launcher::{
    instrument_build, read_manifest, InstrumentError, LaunchManifest, LaunchOptions, ManifestSource,
    MEMCHECK_SUFFIX, REAL_SUFFIX,
};
pub use locals::{capture_locals, capture_locals_with, FrameLocals, LocalsRequest, LocalsSnapshot, Variable};
pub use report::{
    parse_sanitizer_report, parse_sanitizer_report_with, signal_name, ReportCause, RuntimeReport,
    SanitizerKind,
};
pub use supervise::{
    crash_record_path, sanitizer_env, supervise_run, supervise_run_with, ChildExit, SuperviseOptions,
    SupervisedRun, CRASH_RECORD_ENV, SANITIZER_DEFAULTS,
};
pub use symbolize::{Addr2Line, FrameResolver, NoResolver, ResolvedFrame};
