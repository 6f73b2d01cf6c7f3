//! What each mode does.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use ccoach_core::compile::{invoke_compiler, CompileRequest};
use ccoach_core::context::hash_bytes;
use ccoach_core::eval::{assign_reviews, frequency_table, read_records};
use ccoach_core::help::{
    build_prompt, check_guardrails, resolve_api_key, stream_completion, transport_for, CodeBlockFilter,
    GuardrailDecision, GuardrailState, HelpError, RetryPolicy, StreamEvent, Transport,
};
use ccoach_core::runtime::{supervise_run_with, ChildExit, SuperviseOptions};
use ccoach_core::telemetry::{
    aggregate_stats, current_user, user_hash, Anonymizer, EventKind, EventLog, Transcript,
    UsageEvent,
};
use ccoach_core::{
    match_rules, render_enhanced_message, ContextStore, ErrorContext, Phase, RuleTable, SourceFile, ToolConfig,
};

pub const HINT: &str = "Don't understand? Get AI-generated help with `ccoach --help`";
pub const NO_PRIOR_ERROR: &str = "no recent error to explain";

/// Where output goes, plus the clock; swapped out in tests.
pub struct Session<'a> {
    pub config: ToolConfig,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub now: i64,
    /// Directory searched for the workspace context when asking for help.
    pub cwd: PathBuf,
}

impl Session<'_> {
    fn warn(&mut self, message: impl std::fmt::Display) {
        let _ = writeln!(self.err, "ccoach: {message}");
    }

    fn record(&mut self, kind: EventKind, source_bytes: u64) {
        let event = UsageEvent::new(
            self.now,
            kind,
            user_hash(&self.config.telemetry_salt, &current_user()),
            source_bytes,
        );
        if let Err(e) = EventLog::new(&self.config.log_directory).log_event(&event) {
            self.warn(format_args!("warning: usage log not written: {e}"));
        }
    }

    fn rules(&mut self) -> RuleTable {
        let bundled = RuleTable::bundled();
        let Some(path) = self.config.rules_path.clone() else {
            return bundled;
        };
        match RuleTable::load_file(&path).and_then(|extra| bundled.clone().with_extra(extra)) {
            Ok(table) => table,
            Err(e) => {
                self.warn(format_args!("warning: ignoring extra rules: {e}"));
                bundled
            }
        }
    }

    fn stores(&self, workspace: &Path) -> [ContextStore; 2] {
        let hours = self.config.context_expiry_hours;
        [
            ContextStore::for_workspace(workspace).with_expiry_hours(hours),
            ContextStore::for_user(&self.config.state_directory).with_expiry_hours(hours),
        ]
    }

    /// Saves beside the build and in the per-user state directory, so that
    /// help works from any directory.
    fn save_context(&mut self, workspace: &Path, ctx: &ErrorContext) {
        let results: Vec<_> = self.stores(workspace).iter().map(|s| s.save(ctx)).collect();
        if let Some(Err(e)) = results.iter().find(|r| r.is_err()).filter(|_| results.iter().all(|r| r.is_err())) {
            self.warn(format_args!("warning: error not saved for --help: {e}"));
        }
    }

    /// The newer of the workspace and per-user contexts.
    fn load_context(&mut self) -> Option<ErrorContext> {
        let cwd = self.cwd.clone();
        let mut best: Option<ErrorContext> = None;
        for store in self.stores(&cwd) {
            match store.load_at(self.now) {
                Ok(Some(ctx)) if best.as_ref().is_none_or(|b| ctx.timestamp > b.timestamp) => best = Some(ctx),
                Ok(_) => {}
                Err(e) => self.warn(format_args!("warning: ignoring {}: {e}", store.path().display())),
            }
        }
        best
    }
}

fn explain(ctx: &ErrorContext, rules: &RuleTable) -> Option<String> {
    let rule = match_rules(ctx, rules.rules())?;
    render_enhanced_message(rule, ctx).ok()
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn supervisor_path() -> io::Result<PathBuf> {
    std::env::current_exe()
}

pub fn compile(s: &mut Session<'_>, sources: &[PathBuf], output: &Path, passthrough: &[String]) -> i32 {
    let source_bytes: u64 = sources.iter().filter_map(|p| fs::metadata(p).ok()).map(|m| m.len()).sum();
    let mut request = CompileRequest::new(sources.to_vec(), output);
    request.passthrough = passthrough.to_vec();
    request.supervisor = match supervisor_path() {
        Ok(path) => Some(path),
        Err(e) => {
            s.warn(format_args!("warning: programs will run without error checking: {e}"));
            None
        }
    };
    let outcome = match invoke_compiler(&request, &s.config) {
        Ok(outcome) => outcome,
        Err(e) => {
            s.warn(&e);
            s.record(EventKind::ToolError, source_bytes);
            return 1;
        }
    };
    let _ = s.out.write_all(&outcome.stdout);
    let _ = s.out.flush();
    let _ = s.err.write_all(outcome.stderr.as_bytes());

    if let Some(primary) = outcome.primary_diagnostic().cloned() {
        let files: Vec<SourceFile> = sources.iter().filter_map(|p| SourceFile::read(p).ok()).collect();
        if !files.is_empty() {
            let hash = hash_bytes(&files.iter().map(|f| f.contents.as_slice()).collect::<Vec<_>>());
            let mut ctx = ErrorContext {
                phase: Phase::CompileTime,
                timestamp: s.now,
                source_files: files,
                diagnostics: outcome.diagnostics.clone(),
                primary_diagnostic: Some(primary),
                enhanced_message: None,
                runtime_report: None,
                locals: None,
                binary_hash: hash,
            };
            let rules = s.rules();
            ctx.enhanced_message = explain(&ctx, &rules);
            if let Some(text) = &ctx.enhanced_message {
                let _ = write!(s.err, "\n{text}");
            }
            s.save_context(&parent_dir(output), &ctx);
            if !s.config.exam_mode {
                let _ = writeln!(s.err, "{HINT}");
            }
        }
    }
    let kind = if outcome.exit_status == 0 {
        EventKind::CompileOk
    } else {
        EventKind::CompileError
    };
    s.record(kind, source_bytes);
    outcome.exit_status
}

/// Runs the program behind `launcher`. Errors are explained on stderr.
pub fn supervise(s: &mut Session<'_>, launcher: &Path, args: &[OsString]) -> ChildExit {
    let options = SuperviseOptions::default();
    let run = match supervise_run_with(launcher, args, &options, &mut io::stderr()) {
        Ok(run) => run,
        Err(e) => {
            s.warn(&e);
            s.record(EventKind::ToolError, 0);
            return ChildExit::Code(127);
        }
    };
    if let Some(mut ctx) = run.context {
        let rules = s.rules();
        ctx.enhanced_message = explain(&ctx, &rules);
        match &ctx.enhanced_message {
            Some(text) => {
                let _ = s.err.write_all(text.as_bytes());
            }
            None => {
                let _ = s.err.write_all(&run.suppressed_stderr);
            }
        }
        s.save_context(&parent_dir(launcher), &ctx);
        if !s.config.exam_mode {
            let _ = writeln!(s.err, "{HINT}");
        }
        let bytes = ctx.source_files.iter().map(|f| f.contents.len() as u64).sum();
        s.record(EventKind::RuntimeError, bytes);
    }
    run.exit
}

/// AI help for the most recent error. `transport` replaces the configured
/// backend.
pub fn help(s: &mut Session<'_>, transport: Option<&dyn Transport>) -> i32 {
    if s.config.exam_mode {
        let _ = writeln!(s.err, "{}", ccoach_core::help::EXAM_MODE_MESSAGE);
        s.record(EventKind::HelpRefused, 0);
        return 1;
    }
    let Some(ctx) = s.load_context() else {
        s.warn(NO_PRIOR_ERROR);
        s.record(EventKind::ToolError, 0);
        return 1;
    };
    let source_bytes = ctx.error_source().contents.len() as u64;

    let state_dir = s.config.state_directory.clone();
    let mut state = GuardrailState::load(&state_dir);
    let decision = check_guardrails(&mut state, s.now, &s.config);
    if let Err(e) = state.save(&state_dir) {
        s.warn(format_args!("warning: help history not saved: {e}"));
    }
    match decision {
        GuardrailDecision::Refuse(text) => {
            let _ = writeln!(s.err, "{text}");
            s.record(EventKind::HelpRefused, source_bytes);
            return 1;
        }
        GuardrailDecision::ProceedWithWarning(text) => {
            let _ = writeln!(s.err, "{text}\n");
        }
        GuardrailDecision::Proceed => {}
    }

    let bundle = match build_prompt(&ctx, s.config.token_budget) {
        Ok(bundle) => bundle,
        Err(e) => {
            s.warn(&e);
            s.record(EventKind::ToolError, source_bytes);
            return 1;
        }
    };
    let needs_key = transport.is_none() && s.config.mock_responses.is_none();
    let owned;
    let transport: &dyn Transport = match transport {
        Some(t) => t,
        None => match transport_for(&s.config) {
            Ok(t) => {
                owned = t;
                owned.as_ref()
            }
            Err(e) => {
                s.warn(&e);
                s.record(EventKind::ToolError, source_bytes);
                return 1;
            }
        },
    };
    let api_key = resolve_api_key(&s.config);
    if api_key.is_none() && needs_key {
        s.warn(HelpError::MissingApiKey(s.config.api_key_env_var.clone()));
        s.record(EventKind::ToolError, source_bytes);
        return 1;
    }

    let mut filter = s.config.strip_code_blocks.then(CodeBlockFilter::new);
    let out = &mut *s.out;
    let ended_with_newline = std::cell::Cell::new(true);
    let mut show = |text: &str| {
        if !text.is_empty() {
            ended_with_newline.set(text.ends_with('\n'));
            let _ = out.write_all(text.as_bytes());
            let _ = out.flush();
        }
    };
    let result = stream_completion(&bundle, &s.config, transport, api_key, RetryPolicy::default(), &mut |event| {
        match event {
            StreamEvent::Disclaimer(line) => show(&format!("{line}\n\n")),
            StreamEvent::Delta(delta) => match filter.as_mut() {
                Some(f) => show(&f.push(delta)),
                None => show(delta),
            },
        }
    });
    if let Some(f) = filter.as_mut() {
        show(&f.finish());
    }
    if !ended_with_newline.get() {
        show("\n");
    }

    let kind = match ctx.phase {
        Phase::CompileTime => EventKind::HelpCompile,
        Phase::RunTime => EventKind::HelpRuntime,
    };
    let (reply, interrupted, status) = match result {
        Ok(text) => (text, false, 0),
        Err(HelpError::StreamInterrupted { partial }) => {
            s.warn("the AI reply was cut off; try again in a moment");
            (partial, true, 1)
        }
        Err(e) => {
            s.warn(&e);
            s.record(EventKind::ToolError, source_bytes);
            return 1;
        }
    };
    s.record(kind, source_bytes);
    log_transcript(s, &ctx, reply, interrupted);
    status
}

fn log_transcript(s: &mut Session<'_>, ctx: &ErrorContext, reply: String, interrupted: bool) {
    let anonymizer = match Anonymizer::new(&s.config.student_id_pattern, &[current_user()]) {
        Ok(a) => a,
        Err(e) => {
            s.warn(format_args!("warning: transcript not saved: {e}"));
            return;
        }
    };
    let source = ctx.error_source();
    // Directories can name the student (home directories); keep the base name.
    let name = Path::new(&source.path)
        .file_name()
        .map_or_else(|| source.path.clone(), |n| n.to_string_lossy().into_owned());
    let scrubbed = anonymizer.anonymize(&source.text(), &name);
    let transcript = Transcript {
        timestamp: s.now,
        user_hash: user_hash(&s.config.telemetry_salt, &current_user()),
        phase: ctx.phase,
        file_name: scrubbed.file_name,
        source: scrubbed.source,
        explanation: ctx.enhanced_message.clone().map(|m| anonymizer.scrub(&m)).unwrap_or_default(),
        reply: anonymizer.scrub(&reply),
        interrupted,
    };
    if let Err(e) = EventLog::new(&s.config.log_directory).log_transcript(&transcript) {
        s.warn(format_args!("warning: transcript not saved: {e}"));
    }
}

fn local_date(timestamp: i64, utc_offset_minutes: i32) -> NaiveDate {
    chrono::DateTime::from_timestamp(timestamp + i64::from(utc_offset_minutes) * 60, 0)
        .unwrap_or_default()
        .date_naive()
}

pub fn stats(s: &mut Session<'_>, from: Option<NaiveDate>, to: Option<NaiveDate>, csv: bool) -> i32 {
    let (events, skipped) = match EventLog::new(&s.config.log_directory).read_events() {
        Ok(read) => read,
        Err(e) => {
            s.warn(&e);
            return 1;
        }
    };
    if skipped > 0 {
        s.warn(format_args!("warning: skipped {skipped} malformed log lines"));
    }
    let offset = s.config.utc_offset_minutes;
    let events: Vec<UsageEvent> = events
        .into_iter()
        .filter(|e| to.is_none_or(|to| local_date(e.timestamp, offset) <= to))
        .collect();
    // Without --from, weeks count from the Monday before the first help use.
    let start = from.unwrap_or_else(|| {
        events
            .iter()
            .filter(|e| e.kind.is_help())
            .map(|e| local_date(e.timestamp, offset))
            .min()
            .map(|d| d - Duration::days(i64::from(d.weekday().num_days_from_monday())))
            .unwrap_or_default()
    });
    let summary = aggregate_stats(&events, start, offset);
    let text = if csv { summary.to_csv() } else { summary.render_table() };
    let _ = s.out.write_all(text.as_bytes());
    0
}

pub fn eval(s: &mut Session<'_>, input: &Path) -> i32 {
    let records = fs::File::open(input)
        .map_err(|e| e.to_string())
        .and_then(|f| read_records(f).map_err(|e| e.to_string()));
    match records {
        Ok(records) => {
            let _ = s.out.write_all(frequency_table(&records).render().as_bytes());
            0
        }
        Err(e) => {
            s.warn(format_args!("{}: {e}", input.display()));
            1
        }
    }
}

pub fn assign(s: &mut Session<'_>, pairs: &Path, reviewers: usize, per: usize, overlap: f64, seed: u64) -> i32 {
    let text = match fs::read_to_string(pairs) {
        Ok(text) => text,
        Err(e) => {
            s.warn(format_args!("{}: {e}", pairs.display()));
            return 1;
        }
    };
    let ids: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let names: Vec<String> = (1..=reviewers).map(|i| format!("reviewer{i}")).collect();
    match assign_reviews(&ids, &names, per, overlap, seed) {
        Ok(assignment) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let _ = w.write_record(["reviewer_id", "pair_id"]);
            for (reviewer, list) in &assignment {
                for pair in list {
                    let _ = w.write_record([reviewer, pair]);
                }
            }
            let _ = s.out.write_all(&w.into_inner().unwrap_or_default());
            0
        }
        Err(e) => {
            s.warn(&e);
            1
        }
    }
}
