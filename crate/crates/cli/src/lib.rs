//! The `ccoach` command: compile C programs with error explanations, run
//! them under supervision, and ask for AI help with the last error.

pub mod args;
pub mod driver;

use std::ffi::OsString;
use std::io::{self, Write};

use ccoach_core::context::now_utc;
use ccoach_core::runtime::ChildExit;
use ccoach_core::ToolConfig;

use args::{parse_args, Mode, USAGE};
use driver::Session;

/// Entry point; returns the process exit status.
pub fn run(argv: &[OsString]) -> ChildExit {
    let mode = match parse_args(argv) {
        Ok(mode) => mode,
        Err(e) => {
            eprintln!("ccoach: {e}");
            return ChildExit::Code(2);
        }
    };
    let config = match ToolConfig::load() {
        Ok(config) => config,
        // A broken config file must not stop the student's program.
        Err(e) if matches!(mode, Mode::Supervise { .. }) => {
            eprintln!("ccoach: warning: {e}; using defaults");
            ToolConfig::default()
        }
        Err(e) => {
            eprintln!("ccoach: {e}");
            return ChildExit::Code(2);
        }
    };
    let mut out = io::stdout().lock();
    let mut err = io::stderr();
    let mut session = Session {
        config,
        out: &mut out,
        err: &mut err,
        now: now_utc(),
        cwd: std::env::current_dir().unwrap_or_else(|_| ".".into()),
    };
    let code = match mode {
        Mode::Compile {
            sources,
            output,
            passthrough,
        } => driver::compile(&mut session, &sources, &output, &passthrough),
        Mode::Supervise { launcher, args } => return driver::supervise(&mut session, &launcher, &args),
        Mode::Help => driver::help(&mut session, None),
        Mode::Stats { from, to, csv } => driver::stats(&mut session, from, to, csv),
        Mode::Eval { input } => driver::eval(&mut session, &input),
        Mode::Assign {
            pairs,
            reviewers,
            per_reviewer,
            overlap,
            seed,
        } => driver::assign(&mut session, &pairs, reviewers, per_reviewer, overlap, seed),
        Mode::Usage => {
            let _ = session.out.write_all(USAGE.as_bytes());
            0
        }
        Mode::Version => {
            let _ = writeln!(session.out, "ccoach {}", env!("CARGO_PKG_VERSION"));
            0
        }
    };
    ChildExit::Code(code)
}

/// Exits like the supervised program did, re-raising its signal.
pub fn exit_like(status: ChildExit) -> ! {
    let _ = io::stdout().flush();
    let _ = io::stderr().flush();
    if let ChildExit::Signal(sig) = status {
        // SAFETY: resetting a disposition and raising a signal in our own
        // process; no handlers of ours run.
        unsafe {
            libc::signal(sig, libc::SIG_DFL);
            libc::raise(sig);
        }
    }
    std::process::exit(status.shell_status())
}
