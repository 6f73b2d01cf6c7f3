//! Anonymized usage logging and the weekly usage report.

mod anonymize;
mod log;
mod stats;

pub use anonymize::{anonymize, comment_spans, AnonymizedFile, Anonymizer, REDACTED};
pub use log::{
    current_user, iso_week, user_hash, EventKind, EventLog, LogError, Transcript, UsageEvent,
    LOG_SCHEMA_VERSION, MAX_LINE_BYTES,
};
pub use stats::{
    aggregate_stats, is_night, teaching_week, OverallStats, UsageSummary, WeekStats,
    NIGHT_END_HOUR, NIGHT_START_HOUR,
};
