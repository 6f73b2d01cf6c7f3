//! Hand-written, rule-based explanations of compiler and run-time errors.
//!
//! Rules live in a small TOML table (see `rules.toml` for the schema) that is
//! compiled into the binary; instructors can prepend their own table through
//! the `rules` config key.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::compile::Severity;
use crate::context::ErrorContext;
use crate::phase::Phase;

const BUNDLED: &str = include_str!("rules.toml");
pub const RULES_VERSION: u32 = 1;
const PLACEHOLDERS: &[&str] = &["file", "line", "symbol", "function"];
const CONTEXT_LINES: u32 = 3;
/// How far above the error line the excerpt may reach to include the
/// enclosing function's header.
const HEADER_REACH: u32 = 6;
const MARKER: &str = "--> ";

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule table: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("rule table version {0} is not supported (expected {RULES_VERSION})")]
    Version(u32),
    #[error("rule '{id}': bad pattern: {source}")]
    Pattern {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("duplicate rule id '{0}'")]
    DuplicateId(String),
    #[error("rule '{id}': unknown placeholder {{{name}}}")]
    UnknownPlaceholder { id: String, name: String },
    #[error("rule '{0}': template uses {{symbol}} but the pattern has no `symbol` group")]
    NoSymbolGroup(String),
    #[error("rule '{0}': template is empty")]
    EmptyTemplate(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no value for placeholder {{{0}}}")]
    Unresolved(String),
    #[error("the error has no source location")]
    MissingLocation,
}

#[derive(Debug, Clone)]
pub struct ExplainRule {
    pub id: String,
    pub phase: Phase,
    pub pattern: Regex,
    pub template: String,
}

#[derive(Deserialize)]
struct RawTable {
    version: u32,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    phase: Phase,
    pattern: String,
    template: String,
}

/// An ordered, validated list of rules.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: Vec<ExplainRule>,
}

impl RuleTable {
    /// The rules shipped with the tool.
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED).expect("bundled rule table is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, RuleError> {
        let raw: RawTable = toml::from_str(text)?;
        if raw.version != RULES_VERSION {
            return Err(RuleError::Version(raw.version));
        }
        let rules = raw
            .rules
            .into_iter()
            .map(|r| {
                let pattern = Regex::new(&r.pattern).map_err(|source| RuleError::Pattern {
                    id: r.id.clone(),
                    source,
                })?;
                Ok(ExplainRule {
                    id: r.id,
                    phase: r.phase,
                    pattern,
                    template: r.template.trim_end().to_string(),
                })
            })
            .collect::<Result<Vec<_>, RuleError>>()?;
        let table = RuleTable { rules };
        table.validate()?;
        Ok(table)
    }

    pub fn load_file(path: &Path) -> Result<Self, RuleError> {
        let text = fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Puts `extra` ahead of this table, so its rules take precedence.
    pub fn with_extra(self, extra: RuleTable) -> Result<Self, RuleError> {
        let mut rules = extra.rules;
        rules.extend(self.rules);
        let table = RuleTable { rules };
        table.validate()?;
        Ok(table)
    }

    pub fn rules(&self) -> &[ExplainRule] {
        &self.rules
    }

    fn validate(&self) -> Result<(), RuleError> {
        let mut seen = std::collections::HashSet::new();
        for rule in &self.rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(RuleError::DuplicateId(rule.id.clone()));
            }
            if rule.template.trim().is_empty() {
                return Err(RuleError::EmptyTemplate(rule.id.clone()));
            }
            for name in placeholders(&rule.template) {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(RuleError::UnknownPlaceholder {
                        id: rule.id.clone(),
                        name: name.to_string(),
                    });
                }
                if name == "symbol" && !rule.pattern.capture_names().any(|n| n == Some("symbol")) {
                    return Err(RuleError::NoSymbolGroup(rule.id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// `{name}` occurrences in a template. Braces around anything else (e.g.
/// `{1, 2}`) are literal text.
fn placeholders(template: &str) -> impl Iterator<Item = &str> {
    template.match_indices('{').filter_map(move |(start, _)| {
        let rest = &template[start + 1..];
        let end = rest.find('}')?;
        let name = &rest[..end];
        (!name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')).then_some(name)
    })
}

/// Text a rule's pattern is matched against.
fn match_text(ctx: &ErrorContext) -> Option<String> {
    match ctx.phase {
        Phase::CompileTime => ctx.primary_diagnostic.as_ref().map(|d| d.message.clone()),
        Phase::RunTime => ctx.runtime_report.as_ref().map(|r| r.match_text()),
    }
}

/// The first rule, in table order, whose phase and pattern match `ctx`.
pub fn match_rules<'a>(ctx: &ErrorContext, rules: &'a [ExplainRule]) -> Option<&'a ExplainRule> {
    let text = match_text(ctx)?;
    rules
        .iter()
        .find(|rule| rule.phase == ctx.phase && rule.pattern.is_match(&text))
}

fn fill(rule: &ExplainRule, ctx: &ErrorContext, file: &str, line: u32) -> Result<String, TemplateError> {
    let text = match_text(ctx).unwrap_or_default();
    let captures = rule.pattern.captures(&text);
    let function = ctx
        .runtime_report
        .as_ref()
        .and_then(|r| r.function_name.clone())
        .or_else(|| ctx.locals.as_ref()?.frames.first().map(|f| f.function.clone()));
    let mut out = String::with_capacity(rule.template.len() + 32);
    let mut rest = rule.template.as_str();
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let name = after
            .find('}')
            .map(|end| &after[..end])
            .filter(|name| PLACEHOLDERS.contains(name));
        let Some(name) = name else {
            out.push('{');
            rest = after;
            continue;
        };
        let value = match name {
            "file" => Some(file.to_string()),
            "line" => Some(line.to_string()),
            "symbol" => captures
                .as_ref()
                .and_then(|c| c.name("symbol"))
                .map(|m| m.as_str().to_string()),
            _ => function.clone(),
        };
        out.push_str(&value.ok_or_else(|| TemplateError::Unresolved(name.to_string()))?);
        rest = &after[name.len() + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn is_top_level(line: &str) -> bool {
    line.starts_with(|c: char| !c.is_whitespace())
}

/// Line numbers (1-based, inclusive) of the excerpt around `line`: up to
/// three lines each side, not crossing into a neighbouring function. A
/// function header a little further up is included too.
pub(crate) fn excerpt_window(lines: &[&str], line: u32) -> (u32, u32) {
    let count = lines.len() as u32;
    let text = |n: u32| lines[(n - 1) as usize];
    let mut first = line;
    while first > 1 && line - first < CONTEXT_LINES {
        let above = text(first - 1);
        if above.starts_with('}') {
            break;
        }
        first -= 1;
        if is_top_level(above) {
            break;
        }
    }
    if first > 1 && !is_top_level(text(first)) {
        let mut k = first;
        while k > 1 && line - (k - 1) <= HEADER_REACH {
            let above = text(k - 1);
            if above.starts_with('}') {
                break;
            }
            k -= 1;
            if is_top_level(above) {
                first = k;
                break;
            }
        }
    }
    let mut last = line;
    if !(line <= count && text(line).starts_with('}')) {
        while last < count && last - line < CONTEXT_LINES {
            last += 1;
            if text(last).starts_with('}') {
                break;
            }
            if is_top_level(text(last)) {
                last -= 1;
                break;
            }
        }
    }
    (first, last.min(count.max(line)))
}

fn marked(line: &str) -> String {
    let rest = if let Some(rest) = line.strip_prefix("    ") {
        rest
    } else if let Some(rest) = line.strip_prefix('\t') {
        rest
    } else {
        line.trim_start()
    };
    format!("{MARKER}{rest}")
}

/// Renders the explanation: the headline (first template line), the
/// location, a source excerpt with the error line marked, for run-time
/// errors the values of local variables, then the rest of the template.
pub fn render_enhanced_message(rule: &ExplainRule, ctx: &ErrorContext) -> Result<String, TemplateError> {
    let (file, line) = match (ctx.error_file(), ctx.error_line()) {
        (Some(file), Some(line)) if line > 0 => (file.to_string(), line),
        _ => return Err(TemplateError::MissingLocation),
    };
    let filled = fill(rule, ctx, &file, line)?;
    let (headline, details) = filled.split_once('\n').unwrap_or((&filled, ""));
    let mut out = format!("{headline}\n");

    match ctx.phase {
        Phase::RunTime => {
            let function = ctx
                .runtime_report
                .as_ref()
                .and_then(|r| r.function_name.as_deref());
            match function {
                Some(f) => writeln!(out, "Execution stopped in {f}() in {file} at line {line}:"),
                None => writeln!(out, "Execution stopped in {file} at line {line}:"),
            }
        }
        Phase::CompileTime => {
            let kind = match ctx.primary_diagnostic.as_ref().map(|d| d.severity) {
                Some(Severity::Warning) => "Warning",
                Some(Severity::Note) => "Note",
                _ => "Error",
            };
            writeln!(out, "{kind} in {file} at line {line}:")
        }
    }
    .expect("writing to a String");
    out.push('\n');

    let source = ctx.error_source().text();
    let lines: Vec<&str> = source.lines().collect();
    if (line as usize) <= lines.len() {
        let (first, last) = excerpt_window(&lines, line);
        for n in first..=last {
            let text = lines[(n - 1) as usize];
            if n == line {
                out.push_str(&marked(text));
            } else {
                out.push_str(text);
            }
            out.push('\n');
        }
    }

    if ctx.phase == Phase::RunTime {
        if let Some(locals) = ctx.locals.as_ref().filter(|l| !l.frames.is_empty()) {
            out.push_str("Values when execution stopped:\n\n");
            out.push_str(&locals.render());
        }
    }
    if !details.trim().is_empty() {
        out.push('\n');
        out.push_str(details.trim_end());
        out.push('\n');
    }
    Ok(out)
}
