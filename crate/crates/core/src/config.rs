//! Tool configuration.
//!
//! Configuration lives in a plain `key = value` file, read from
//! `$CCOACH_CONFIG` or `~/.ccoach.conf`. Blank lines and lines starting with
//! `#` are ignored. Every key is optional.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub const CONFIG_ENV_VAR: &str = "CCOACH_CONFIG";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "CCOACH_API_KEY";
pub const MIN_TOKEN_BUDGET: usize = 512;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config key `{key}`: invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    /// Wrapped compiler. `None` picks the first of `clang`, `gcc` on `PATH`.
    pub compiler_path: Option<PathBuf>,
    pub model_name: String,
    pub api_base_url: String,
    pub api_key_env_var: String,
    pub exam_mode: bool,
    pub rate_limit_window_seconds: u64,
    pub rate_limit_max_calls: usize,
    pub token_budget: usize,
    pub strip_code_blocks: bool,
    pub log_directory: PathBuf,
    /// Per-user state: rate-limit history and the fallback context store.
    pub state_directory: PathBuf,
    pub temperature: f64,
    /// Key for the user-hash HMAC in telemetry.
    pub telemetry_salt: String,
    /// Offset of the institution's local time from UTC, used for the
    /// time-of-day split in usage reports.
    pub utc_offset_minutes: i32,
    /// Regex matching student identifiers that must never reach the logs.
    pub student_id_pattern: String,
    pub context_expiry_hours: u64,
    /// Run programs under Valgrind memcheck so that reads of uninitialized
    /// memory are caught. Slower; off by default.
    pub uninit_tier: bool,
    /// Object file of the native crash handler, linked in when set.
    pub crash_shim: Option<PathBuf>,
    /// Extra explanation rules appended to the bundled table.
    pub rules_path: Option<PathBuf>,
    /// Directory of canned replies; selects the offline mock backend.
    pub mock_responses: Option<PathBuf>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        let home = home_dir();
        let state = home.join(".ccoach");
        ToolConfig {
            compiler_path: None,
            model_name: DEFAULT_MODEL.to_string(),
            api_base_url: DEFAULT_API_BASE.to_string(),
            api_key_env_var: DEFAULT_API_KEY_ENV.to_string(),
            exam_mode: false,
            rate_limit_window_seconds: 600,
            rate_limit_max_calls: 5,
            token_budget: 4096,
            strip_code_blocks: false,
            log_directory: state.join("logs"),
            state_directory: state,
            temperature: 0.0,
            telemetry_salt: "ccoach".to_string(),
            utc_offset_minutes: 0,
            student_id_pattern: r"\b[A-Za-z]\d{7}\b".to_string(),
            context_expiry_hours: 24,
            uninit_tier: false,
            crash_shim: None,
            rules_path: None,
            mock_responses: None,
        }
    }
}

pub(crate) fn home_dir() -> PathBuf {
    env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(env::temp_dir)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(expand_home(value))
    }
}

fn expand_home(value: &str) -> PathBuf {
    match value.strip_prefix("~/") {
        Some(rest) => home_dir().join(rest),
        None => PathBuf::from(value),
    }
}

impl ToolConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = ToolConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = key.trim();
            let value = value.trim();
            config.set(key, value).map_err(|err| match err {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey {
                    line: idx + 1,
                    key,
                },
                other => other,
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "compiler" => self.compiler_path = optional_path(value),
            "model" => self.model_name = value.to_string(),
            "api_base_url" => self.api_base_url = value.trim_end_matches('/').to_string(),
            "api_key_env" => self.api_key_env_var = value.to_string(),
            "exam_mode" => self.exam_mode = parse_bool(key, value)?,
            "rate_limit_window_seconds" => self.rate_limit_window_seconds = parse_value(key, value)?,
            "rate_limit_max_calls" => self.rate_limit_max_calls = parse_value(key, value)?,
            "token_budget" => self.token_budget = parse_value(key, value)?,
            "strip_code_blocks" => self.strip_code_blocks = parse_bool(key, value)?,
            "log_directory" => self.log_directory = expand_home(value),
            "state_directory" => self.state_directory = expand_home(value),
            "temperature" => self.temperature = parse_value(key, value)?,
            "telemetry_salt" => self.telemetry_salt = value.to_string(),
            "utc_offset_minutes" => self.utc_offset_minutes = parse_value(key, value)?,
            "student_id_pattern" => self.student_id_pattern = value.to_string(),
            "context_expiry_hours" => self.context_expiry_hours = parse_value(key, value)?,
            "uninit_tier" => self.uninit_tier = parse_bool(key, value)?,
            "crash_shim" => self.crash_shim = optional_path(value),
            "rules" => self.rules_path = optional_path(value),
            "mock_responses" => self.mock_responses = optional_path(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rate_limit_window_seconds == 0 {
            return Err(ConfigError::Invalid(
                "rate_limit_window_seconds must be positive".into(),
            ));
        }
        if self.rate_limit_max_calls == 0 {
            return Err(ConfigError::Invalid(
                "rate_limit_max_calls must be at least 1".into(),
            ));
        }
        if self.token_budget < MIN_TOKEN_BUDGET {
            return Err(ConfigError::Invalid(format!(
                "token_budget must be at least {MIN_TOKEN_BUDGET}"
            )));
        }
        if regex::Regex::new(&self.student_id_pattern).is_err() {
            return Err(ConfigError::InvalidValue {
                key: "student_id_pattern".into(),
                value: self.student_id_pattern.clone(),
            });
        }
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Loads from `$CCOACH_CONFIG`, then `~/.ccoach.conf`, falling back to
    /// defaults when neither exists.
    pub fn load() -> Result<Self, ConfigError> {
        if let Some(path) = env::var_os(CONFIG_ENV_VAR) {
            return Self::load_file(Path::new(&path));
        }
        let default_path = home_dir().join(".ccoach.conf");
        if default_path.is_file() {
            return Self::load_file(&default_path);
        }
        Ok(ToolConfig::default())
    }

    /// Resolves the compiler to run, searching `PATH` when unset.
    pub fn resolve_compiler(&self) -> Option<PathBuf> {
        match &self.compiler_path {
            Some(path) if path.components().count() > 1 => {
                path.is_file().then(|| path.clone())
            }
            Some(name) => find_on_path(name.as_os_str().to_str()?),
            None => ["clang", "gcc"].iter().find_map(|name| find_on_path(name)),
        }
    }
}

pub fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = env::var_os("PATH")?;
    env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|candidate| is_executable(candidate))
}

fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    fs::metadata(path)
        .map(|meta| meta.is_file() && meta.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}
