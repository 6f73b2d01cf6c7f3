//! Core library for `ccoach`, a C compiler wrapper aimed at first-year
//! programmers.
//!
//! The crate covers the whole error pipeline:
//!
//! * [`compile`] runs the system C compiler with extra checking flags and
//!   parses its diagnostics.
//! * [`runtime`] wraps the produced binary in a supervising launcher that
//!   catches sanitizer reports and fatal signals, and recovers local
//!   variable values with a debugger.
//! * [`explain`] turns a captured error into a hand-written, plain-language
//!   explanation using a rule table.
//! * [`context`] persists the most recent error so that `ccoach --help` can
//!   explain it later.
//! * [`help`] builds the tutor prompt, applies guardrails and streams a
//!   chat-completion response to the terminal.
//! * [`telemetry`] keeps an anonymized usage log and aggregates it.
//! * [`eval`] implements the rubric-based review tooling (reviewer
//!   assignment, frequency tables, Cohen's and Light's kappa).

pub mod compile;
pub mod config;
pub mod context;
pub mod eval;
pub mod explain;
pub mod help;
pub mod runtime;
pub mod telemetry;

mod phase;

pub use compile::{
    invoke_compiler, parse_diagnostics, select_primary_diagnostic, CompileError, CompileOutcome,
    Diagnostic, ParsedStderr, Severity,
};
pub use config::{ConfigError, ToolConfig};
pub use context::{ContextStore, ErrorContext, SourceFile, StoreError};
pub use explain::{match_rules, render_enhanced_message, ExplainRule, RuleTable};
pub use help::{
    build_prompt, check_guardrails, strip_code_blocks, stream_completion, truncate_to_budget,
    GuardrailDecision, GuardrailState, PromptBundle,
};
pub use phase::Phase;
pub use runtime::{
    capture_locals, instrument_build, parse_sanitizer_report, supervise_run, LocalsSnapshot,
    ReportCause, RuntimeReport, SanitizerKind,
};
pub use telemetry::{aggregate_stats, anonymize, EventKind, UsageEvent, UsageSummary};
