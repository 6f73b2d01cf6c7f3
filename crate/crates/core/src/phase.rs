use serde::{Deserialize, Serialize};

/// When an error was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    CompileTime,
    RunTime,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::CompileTime => "compile-time",
            Phase::RunTime => "run-time",
        }
    }
}
