//! Rate warnings and the exam-mode switch for AI help.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ToolConfig;

pub const EXAM_MODE_MESSAGE: &str = "AI help is not available in exam mode.";
const STATE_FILE: &str = "help-calls.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardrailDecision {
    Proceed,
    ProceedWithWarning(String),
    Refuse(String),
}

/// Timestamps of recent help requests, at most `rate_limit_max_calls` of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailState {
    pub call_timestamps: VecDeque<i64>,
    pub warnings_issued: u64,
}

fn warning_text(calls: usize, window_seconds: u64) -> String {
    let minutes = window_seconds.div_ceil(60);
    format!(
        "You have asked for AI help {calls} times in the last {minutes} minutes.\n\
         Try to work through errors on your own first, and make sure you understand\n\
         every line of code you write."
    )
}

/// Decides whether a help request at `now` may go ahead, and records it.
pub fn check_guardrails(state: &mut GuardrailState, now: i64, config: &ToolConfig) -> GuardrailDecision {
    if config.exam_mode {
        return GuardrailDecision::Refuse(EXAM_MODE_MESSAGE.to_string());
    }
    let capacity = config.rate_limit_max_calls.max(1);
    let window = config.rate_limit_window_seconds as i64;
    // Clocks can step backwards; keep the history ordered.
    let now = state.call_timestamps.back().map_or(now, |&last| now.max(last));
    while state.call_timestamps.len() > capacity {
        state.call_timestamps.pop_front();
    }
    let recent = state
        .call_timestamps
        .iter()
        .filter(|&&t| now - t < window)
        .count();
    let decision = if recent >= capacity {
        state.warnings_issued += 1;
        GuardrailDecision::ProceedWithWarning(warning_text(recent + 1, config.rate_limit_window_seconds))
    } else {
        GuardrailDecision::Proceed
    };
    if state.call_timestamps.len() == capacity {
        state.call_timestamps.pop_front();
    }
    state.call_timestamps.push_back(now);
    decision
}

impl GuardrailState {
    pub fn path(state_dir: &Path) -> PathBuf {
        state_dir.join(STATE_FILE)
    }

    /// Reads the saved history; a missing or unreadable file starts afresh.
    pub fn load(state_dir: &Path) -> Self {
        fs::read(Self::path(state_dir))
            .ok()
            .and_then(|bytes| serde_json::from_slice::<GuardrailState>(&bytes).ok())
            .filter(|s| s.call_timestamps.iter().zip(s.call_timestamps.iter().skip(1)).all(|(a, b)| a <= b))
            .unwrap_or_default()
    }

    pub fn save(&self, state_dir: &Path) -> io::Result<()> {
        fs::create_dir_all(state_dir)?;
        let bytes = serde_json::to_vec(self).map_err(io::Error::other)?;
        crate::context::write_atomically(&Self::path(state_dir), &bytes)
    }
}
