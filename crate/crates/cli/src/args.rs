//! Command-line parsing.
//!
//! `--help` asks for an AI explanation of the last error, so clap's own help
//! and version flags are disabled; `--usage` prints the usage text.

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use thiserror::Error;

pub const DEFAULT_OUTPUT: &str = "a.out";
pub const SUPERVISE_FLAG: &str = "--supervise";

pub const USAGE: &str = "\
Usage:
  ccoach <file.c>... [-o <output>] [-- <compiler flags>...]
  ccoach --help                  explain the last error with AI help
  ccoach --stats [--from <date>] [--to <date>] [--csv]
  ccoach --eval <records.csv>
  ccoach --assign <pairs.txt> --reviewers <n> --per <n> [--overlap <f>] [--seed <n>]
  ccoach --usage
  ccoach --version
";

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Compile {
        sources: Vec<PathBuf>,
        output: PathBuf,
        passthrough: Vec<String>,
    },
    Help,
    Stats {
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
        csv: bool,
    },
    Eval {
        input: PathBuf,
    },
    Assign {
        pairs: PathBuf,
        reviewers: usize,
        per_reviewer: usize,
        overlap: f64,
        seed: u64,
    },
    Usage,
    Version,
    /// Internal: run a compiled program behind its launcher script.
    Supervise {
        launcher: PathBuf,
        args: Vec<OsString>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{message}\n\n{USAGE}")]
pub struct UsageError {
    pub message: String,
}

fn usage_error(message: impl Into<String>) -> UsageError {
    UsageError {
        message: message.into(),
    }
}

fn command() -> Command {
    let flag = |name: &'static str| Arg::new(name).long(name).action(ArgAction::SetTrue);
    let date = |name: &'static str| {
        Arg::new(name)
            .long(name)
            .value_name("YYYY-MM-DD")
            .value_parser(|s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| e.to_string()))
    };
    Command::new("ccoach")
        .no_binary_name(true)
        .disable_help_flag(true)
        .disable_version_flag(true)
        .disable_help_subcommand(true)
        .arg(Arg::new("sources").value_parser(value_parser!(PathBuf)).num_args(0..))
        .arg(Arg::new("output").short('o').value_parser(value_parser!(PathBuf)))
        .arg(Arg::new("passthrough").num_args(0..).last(true).allow_hyphen_values(true))
        .arg(flag("help"))
        .arg(flag("usage"))
        .arg(flag("version"))
        .arg(flag("stats"))
        .arg(date("from"))
        .arg(date("to"))
        .arg(flag("csv"))
        .arg(Arg::new("eval").long("eval").value_parser(value_parser!(PathBuf)))
        .arg(Arg::new("assign").long("assign").value_parser(value_parser!(PathBuf)))
        .arg(Arg::new("reviewers").long("reviewers").value_parser(value_parser!(usize)))
        .arg(Arg::new("per").long("per").value_parser(value_parser!(usize)))
        .arg(Arg::new("overlap").long("overlap").value_parser(value_parser!(f64)))
        .arg(Arg::new("seed").long("seed").value_parser(value_parser!(u64)))
}

const MODE_FLAGS: [&str; 6] = ["help", "usage", "version", "stats", "eval", "assign"];
const STATS_ONLY: [&str; 3] = ["from", "to", "csv"];
const ASSIGN_ONLY: [&str; 4] = ["reviewers", "per", "overlap", "seed"];

fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(clap::parser::ValueSource::CommandLine)
}

/// Parses arguments, program name excluded.
pub fn parse_args(argv: &[OsString]) -> Result<Mode, UsageError> {
    if argv.first().is_some_and(|a| a == SUPERVISE_FLAG) {
        let launcher = argv.get(1).ok_or_else(|| usage_error("--supervise needs a launcher"))?;
        let rest = match argv.get(2) {
            Some(sep) if sep == "--" => &argv[3..],
            None => &[][..],
            Some(_) => return Err(usage_error("--supervise <launcher> must be followed by --")),
        };
        return Ok(Mode::Supervise {
            launcher: PathBuf::from(launcher),
            args: rest.to_vec(),
        });
    }
    let m = command()
        .try_get_matches_from(argv)
        .map_err(|e| usage_error(e.render().to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string()))?;

    let modes: Vec<&str> = MODE_FLAGS.iter().copied().filter(|f| given(&m, f)).collect();
    let sources: Vec<PathBuf> = m.get_many::<PathBuf>("sources").map(|v| v.cloned().collect()).unwrap_or_default();
    let compile_args = ["output", "passthrough"].iter().any(|a| given(&m, a));
    let stray = |allowed: &[&str]| {
        STATS_ONLY
            .iter()
            .chain(&ASSIGN_ONLY)
            .find(|a| !allowed.contains(a) && given(&m, a))
            .map(|a| usage_error(format!("--{a} is not valid here")))
    };

    if modes.len() > 1 {
        return Err(usage_error(format!("choose one of --{}", modes.join(", --"))));
    }
    let Some(&mode) = modes.first() else {
        if let Some(err) = stray(&[]) {
            return Err(err);
        }
        if sources.is_empty() {
            return Err(usage_error("no source files given"));
        }
        return Ok(Mode::Compile {
            sources,
            output: m.get_one::<PathBuf>("output").cloned().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
            passthrough: m.get_many::<String>("passthrough").map(|v| v.cloned().collect()).unwrap_or_default(),
        });
    };
    if !sources.is_empty() || compile_args {
        return Err(usage_error(format!("--{mode} takes no source files or compiler options")));
    }
    let allowed: &[&str] = match mode {
        "stats" => &STATS_ONLY,
        "assign" => &ASSIGN_ONLY,
        _ => &[],
    };
    if let Some(err) = stray(allowed) {
        return Err(err);
    }
    Ok(match mode {
        "help" => Mode::Help,
        "usage" => Mode::Usage,
        "version" => Mode::Version,
        "stats" => Mode::Stats {
            from: m.get_one::<NaiveDate>("from").copied(),
            to: m.get_one::<NaiveDate>("to").copied(),
            csv: m.get_flag("csv"),
        },
        "eval" => Mode::Eval {
            input: m.get_one::<PathBuf>("eval").cloned().unwrap(),
        },
        _ => Mode::Assign {
            pairs: m.get_one::<PathBuf>("assign").cloned().unwrap(),
            reviewers: *m
                .get_one::<usize>("reviewers")
                .ok_or_else(|| usage_error("--assign needs --reviewers"))?,
            per_reviewer: *m.get_one::<usize>("per").ok_or_else(|| usage_error("--assign needs --per"))?,
            overlap: m.get_one::<f64>("overlap").copied().unwrap_or(0.1),
            seed: m.get_one::<u64>("seed").copied().unwrap_or(0),
        },
    })
}
