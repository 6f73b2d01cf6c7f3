//! Weekly usage aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use chrono::{DateTime, NaiveDate, Timelike};

use super::log::{EventKind, UsageEvent};

/// Local hours counted as night: from 18:00 up to, not including, 08:00.
pub const NIGHT_START_HOUR: u32 = 18;
pub const NIGHT_END_HOUR: u32 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WeekStats {
    pub compile_help: u64,
    pub runtime_help: u64,
    pub total: u64,
    pub unique_users: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverallStats {
    pub total_help: u64,
    pub compile_help: u64,
    pub runtime_help: u64,
    pub unique_users: u64,
    pub mean_per_user: f64,
    pub median_per_user: f64,
    pub night_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UsageSummary {
    /// Teaching weeks numbered from 1; weeks without help use are present
    /// with zero counts.
    pub per_week: BTreeMap<u32, WeekStats>,
    pub overall: OverallStats,
    /// Help events dated before the start of term, left out of all figures.
    pub before_term: u64,
}

fn local(timestamp: i64, utc_offset_minutes: i32) -> chrono::NaiveDateTime {
    DateTime::from_timestamp(timestamp + i64::from(utc_offset_minutes) * 60, 0)
        .unwrap_or_default()
        .naive_utc()
}

pub fn is_night(timestamp: i64, utc_offset_minutes: i32) -> bool {
    let hour = local(timestamp, utc_offset_minutes).hour();
    !(NIGHT_END_HOUR..NIGHT_START_HOUR).contains(&hour)
}

/// Teaching week of `timestamp`, counting from the week starting on
/// `term_start`; `None` before the start of term.
pub fn teaching_week(timestamp: i64, term_start: NaiveDate, utc_offset_minutes: i32) -> Option<u32> {
    let days = (local(timestamp, utc_offset_minutes).date() - term_start).num_days();
    (days >= 0).then(|| (days / 7) as u32 + 1)
}

fn median(sorted: &[u64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

/// Aggregates help events into teaching weeks. Only `HelpCompile` and
/// `HelpRuntime` events count; the result does not depend on input order.
pub fn aggregate_stats(events: &[UsageEvent], term_start: NaiveDate, utc_offset_minutes: i32) -> UsageSummary {
    let mut summary = UsageSummary::default();
    let mut week_users: BTreeMap<u32, HashSet<&str>> = BTreeMap::new();
    let mut per_user: HashMap<&str, u64> = HashMap::new();
    let mut night = 0u64;
    for event in events.iter().filter(|e| e.kind.is_help()) {
        let Some(week) = teaching_week(event.timestamp, term_start, utc_offset_minutes) else {
            summary.before_term += 1;
            continue;
        };
        let stats = summary.per_week.entry(week).or_default();
        if event.kind == EventKind::HelpCompile {
            stats.compile_help += 1;
            summary.overall.compile_help += 1;
        } else {
            stats.runtime_help += 1;
            summary.overall.runtime_help += 1;
        }
        stats.total += 1;
        week_users.entry(week).or_default().insert(&event.user_hash);
        *per_user.entry(&event.user_hash).or_default() += 1;
        if is_night(event.timestamp, utc_offset_minutes) {
            night += 1;
        }
    }
    if let Some(&last) = summary.per_week.keys().next_back() {
        for week in 1..last {
            summary.per_week.entry(week).or_default();
        }
    }
    for (week, users) in week_users {
        summary.per_week.get_mut(&week).unwrap().unique_users = users.len() as u64;
    }
    let overall = &mut summary.overall;
    overall.total_help = overall.compile_help + overall.runtime_help;
    overall.unique_users = per_user.len() as u64;
    let mut counts: Vec<u64> = per_user.into_values().collect();
    counts.sort_unstable();
    if !counts.is_empty() {
        overall.mean_per_user = overall.total_help as f64 / counts.len() as f64;
        overall.median_per_user = median(&counts);
    }
    if overall.total_help > 0 {
        overall.night_fraction = night as f64 / overall.total_help as f64;
    }
    summary
}

impl UsageSummary {
    /// Per-week CSV: `week,unique_users,compile_help,runtime_help,total`.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["week", "unique_users", "compile_help", "runtime_help", "total"])
            .expect("in-memory write");
        for (week, s) in &self.per_week {
            writer
                .write_record([u64::from(*week), s.unique_users, s.compile_help, s.runtime_help, s.total].map(|v| v.to_string()))
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ASCII")
    }

    /// Aligned text table with an overall section.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>4}  {:>8}  {:>8}  {:>8}  {:>8}", "week", "users", "compile", "runtime", "total");
        for (week, s) in &self.per_week {
            let _ = writeln!(
                out,
                "{week:>4}  {:>8}  {:>8}  {:>8}  {:>8}",
                s.unique_users, s.compile_help, s.runtime_help, s.total
            );
        }
        let o = &self.overall;
        let _ = writeln!(out);
        let _ = writeln!(out, "help requests:   {} ({} compile-time, {} run-time)", o.total_help, o.compile_help, o.runtime_help);
        let _ = writeln!(out, "users:           {}", o.unique_users);
        let _ = writeln!(out, "per user:        mean {:.1}, median {:.1}", o.mean_per_user, o.median_per_user);
        let _ = writeln!(out, "18:00 to 08:00:  {:.0}%", o.night_fraction * 100.0);
        if self.before_term > 0 {
            let _ = writeln!(out, "before term:     {} (not counted)", self.before_term);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::log::user_hash;
    use proptest::prelude::*;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2026, 2, 16).unwrap()
    }

    fn at(day: i64, hour: i64) -> i64 {
        start().and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() + day * 86_400 + hour * 3_600
    }

    fn help(ts: i64, user: &str, compile: bool) -> UsageEvent {
        let kind = if compile { EventKind::HelpCompile } else { EventKind::HelpRuntime };
        UsageEvent::new(ts, kind, user_hash("s", user), 10)
    }

    #[test]
    fn mean_and_median_of_two_users() {
        let mut events: Vec<UsageEvent> = (0..10).map(|i| help(at(0, i), "a", true)).collect();
        events.extend((0..66).map(|i| help(at(1, 0) + i, "b", false)));
        let s = aggregate_stats(&events, start(), 0);
        assert_eq!(s.overall.mean_per_user, 38.0);
        assert_eq!(s.overall.median_per_user, 38.0);
    }

    #[test]
    fn noon_only_log_has_no_night_use() {
        let events: Vec<UsageEvent> = (0..20).map(|d| help(at(d, 12), "a", true)).collect();
        assert_eq!(aggregate_stats(&events, start(), 0).overall.night_fraction, 0.0);
    }

    #[test]
    fn night_window_edges() {
        assert!(is_night(at(0, 18), 0));
        assert!(is_night(at(0, 7) + 3_599, 0));
        assert!(!is_night(at(0, 8), 0));
        assert!(!is_night(at(0, 17) + 3_599, 0));
        // 10:00 UTC is 20:00 at UTC+10.
        assert!(is_night(at(0, 10), 600));
    }

    #[test]
    fn weeks_and_gaps() {
        let events = vec![
            help(at(0, 9), "a", true),
            help(at(6, 9), "b", false),
            help(at(21, 9), "a", true),
            help(at(-1, 9), "a", true),
            UsageEvent::new(at(1, 9), EventKind::CompileError, user_hash("s", "a"), 1),
        ];
        let s = aggregate_stats(&events, start(), 0);
        assert_eq!(s.per_week.len(), 4);
        assert_eq!(s.per_week[&1], WeekStats { compile_help: 1, runtime_help: 1, total: 2, unique_users: 2 });
        assert_eq!(s.per_week[&2], WeekStats::default());
        assert_eq!(s.per_week[&4].total, 1);
        assert_eq!(s.before_term, 1);
        assert_eq!(
            s.to_csv(),
            "week,unique_users,compile_help,runtime_help,total\n1,2,1,1,2\n2,0,0,0,0\n3,0,0,0,0\n4,1,1,0,1\n"
        );
    }

    proptest! {
        #[test]
        fn totals_add_up_and_order_is_irrelevant(
            raw in proptest::collection::vec((0i64..70, 0i64..24, 0u8..4, any::<bool>()), 0..200),
        ) {
            let events: Vec<UsageEvent> = raw
                .iter()
                .map(|&(d, h, u, c)| help(at(d, h), &format!("u{u}"), c))
                .collect();
            let s = aggregate_stats(&events, start(), 0);
            let sum: u64 = s.per_week.values().map(|w| w.total).sum();
            prop_assert_eq!(sum, s.overall.total_help);
            for w in s.per_week.values() {
                prop_assert_eq!(w.total, w.compile_help + w.runtime_help);
            }
            prop_assert!((0.0..=1.0).contains(&s.overall.night_fraction));
            let mut reversed = events.clone();
            reversed.reverse();
            prop_assert_eq!(aggregate_stats(&reversed, start(), 0), s);
        }
    }
}
