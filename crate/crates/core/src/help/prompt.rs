//! The tutor prompt sent with `ccoach --help`.

use thiserror::Error;

use crate::context::ErrorContext;
use crate::phase::Phase;

pub const SYSTEM_MESSAGE: &str =
    "You are a tutor helping a student.\nDo not fix the program.\nDo not provide code.";
pub const OMITTED_MARKER: &str = "/* ... omitted ... */";
/// Share of the token budget the source code may take, in percent.
pub const SOURCE_SHARE_PERCENT: usize = 70;

const CLOSING: &str = "Remember, you are tutor helping a student.\nDo not write code for the student.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("the stored error has nothing to explain")]
    EmptyContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_message: String,
    pub user_message: String,
    pub estimated_tokens: usize,
    pub truncated: bool,
}

impl PromptBundle {
    /// Key used to look up canned replies in the offline backend.
    pub fn hash(&self) -> String {
        crate::context::hash_bytes(&[
            self.system_message.as_bytes(),
            b"\0",
            self.user_message.as_bytes(),
        ])
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Cuts `source` down to a contiguous window of lines around `error_line`
/// (1-based) whose estimate fits `budget_tokens`. Each elided region becomes
/// one marker line.
pub fn truncate_to_budget(source: &str, error_line: usize, budget_tokens: usize) -> String {
    let limit = budget_tokens.saturating_mul(4);
    if char_len(source) <= limit {
        return source.to_string();
    }
    let lines: Vec<&str> = source.split_inclusive('\n').collect();
    let marker_len = char_len(OMITTED_MARKER) + 1;
    let centre = error_line.clamp(1, lines.len()) - 1;
    let (mut lo, mut hi) = (centre, centre);
    let mut used = char_len(lines[centre]);
    let cost = |lo: usize, hi: usize, used: usize| {
        used + if lo > 0 { marker_len } else { 0 } + if hi + 1 < lines.len() { marker_len } else { 0 }
    };
    if cost(lo, hi, used) > limit {
        // Not even the error line fits; keep as much of it as possible.
        return lines[centre].chars().take(limit).collect();
    }
    loop {
        let mut grew = false;
        if hi + 1 < lines.len() {
            let next = used + char_len(lines[hi + 1]);
            if cost(lo, hi + 1, next) <= limit {
                hi += 1;
                used = next;
                grew = true;
            }
        }
        if lo > 0 {
            let next = used + char_len(lines[lo - 1]);
            if cost(lo - 1, hi, next) <= limit {
                lo -= 1;
                used = next;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    let mut out = String::with_capacity(used + 2 * marker_len);
    if lo > 0 {
        out.push_str(OMITTED_MARKER);
        out.push('\n');
    }
    for line in &lines[lo..=hi] {
        out.push_str(line);
    }
    if hi + 1 < lines.len() {
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(OMITTED_MARKER);
        out.push('\n');
    }
    out
}

fn with_newline(text: &str) -> String {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

fn compose(source: &str, explanation: &str, line: Option<u32>, values: Option<&str>) -> String {
    let mut msg = String::new();
    msg.push_str("This is my C program\n");
    msg.push_str(&with_newline(source));
    msg.push_str("Help me understand this message from the C compiler:\n");
    msg.push_str(&with_newline(explanation));
    if let Some(line) = line {
        msg.push_str(&format!("Error location: Line {line}\n"));
    }
    if let Some(values) = values {
        msg.push_str("Values:\n");
        msg.push_str(&with_newline(values));
    }
    msg.push_str(CLOSING);
    msg
}

/// Builds the prompt for `ctx`, truncating the program (and if need be the
/// explanation) to stay within `token_budget`.
pub fn build_prompt(ctx: &ErrorContext, token_budget: usize) -> Result<PromptBundle, PromptError> {
    if ctx.source_files.is_empty() {
        return Err(PromptError::EmptyContext);
    }
    let explanation = ctx
        .enhanced_message
        .clone()
        .or_else(|| match ctx.phase {
            Phase::CompileTime => ctx.primary_diagnostic.as_ref().map(|d| d.raw_text.clone()),
            Phase::RunTime => ctx.runtime_report.as_ref().map(|r| {
                if r.raw_report.trim().is_empty() {
                    r.headline.clone()
                } else {
                    r.raw_report.clone()
                }
            }),
        })
        .filter(|text| !text.trim().is_empty())
        .ok_or(PromptError::EmptyContext)?;
    let line = ctx.error_line();
    let values = match ctx.phase {
        Phase::RunTime => ctx
            .locals
            .as_ref()
            .map(|l| l.render())
            .filter(|v| !v.is_empty()),
        Phase::CompileTime => None,
    };
    let values = values.as_deref();
    let source = ctx.error_source().text();

    let total = |source: &str, explanation: &str| {
        estimate_tokens(SYSTEM_MESSAGE) + estimate_tokens(&compose(source, explanation, line, values))
    };
    let mut user = compose(&source, &explanation, line, values);
    let mut truncated = false;
    if total(&source, &explanation) > token_budget {
        truncated = true;
        let share = token_budget * SOURCE_SHARE_PERCENT / 100;
        let source = truncate_to_budget(&source, line.unwrap_or(1) as usize, share);
        let mut explanation = explanation;
        if total(&source, &explanation) > token_budget {
            let over = (total(&source, &explanation) - token_budget) * 4 + char_len(OMITTED_MARKER) + 2;
            let keep = char_len(&explanation).saturating_sub(over);
            explanation = explanation.chars().take(keep).collect::<String>() + "\n" + OMITTED_MARKER;
        }
        user = compose(&source, &explanation, line, values);
    }
    Ok(PromptBundle {
        estimated_tokens: estimate_tokens(SYSTEM_MESSAGE) + estimate_tokens(&user),
        system_message: SYSTEM_MESSAGE.to_string(),
        user_message: user,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(n: usize) -> String {
        (1..=n).map(|i| format!("line {i:05} of the program;\n")).collect()
    }

    #[test]
    fn under_budget_is_identity() {
        let src = numbered(10);
        assert_eq!(truncate_to_budget(&src, 5, 10_000), src);
    }

    #[test]
    fn window_at_file_start_extends_downward() {
        let src = numbered(100);
        let out = truncate_to_budget(&src, 1, 100);
        assert!(out.starts_with("line 00001"));
        assert!(out.ends_with(&format!("{OMITTED_MARKER}\n")));
        assert_eq!(out.matches(OMITTED_MARKER).count(), 1);
    }

    #[test]
    fn two_thousand_lines_keep_about_two_hundred() {
        let src = numbered(2000);
        let line_len = src.lines().next().unwrap().len() + 1;
        let budget = (200 * line_len).div_ceil(4);
        let out = truncate_to_budget(&src, 1000, budget);
        let kept = out.lines().filter(|l| l.starts_with("line ")).count();
        // Two marker lines take the place of a couple of program lines.
        let markers = 2 * (OMITTED_MARKER.len() + 1);
        assert_eq!(kept, (budget * 4 - markers) / line_len);
        assert!((195..=200).contains(&kept), "{kept}");
        assert!(out.contains("line 01000 "));
        assert!(estimate_tokens(&out) <= budget);
    }

    proptest! {
        #[test]
        fn window_is_contiguous_and_within_budget(
            n in 1usize..400,
            line in 1usize..400,
            budget in 1usize..2000,
        ) {
            let src = numbered(n);
            let out = truncate_to_budget(&src, line, budget);
            prop_assert!(estimate_tokens(&out) <= budget);
            let kept: Vec<usize> = out
                .lines()
                .filter_map(|l| l.strip_prefix("line ")?.get(..5)?.parse().ok())
                .collect();
            if !kept.is_empty() {
                let target = line.min(n);
                prop_assert!(kept.contains(&target));
                prop_assert!(kept.windows(2).all(|w| w[1] == w[0] + 1));
                let marker = format!("{OMITTED_MARKER}\n");
                prop_assert!(src.contains(&out.replace(&marker, "")));
            }
        }
    }
}
