//! Address-to-line resolution for frames printed without debug info.

use std::path::{Path, PathBuf};
use std::process::Command;

use crate::config::find_on_path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedFrame {
    pub function: Option<String>,
    pub file: String,
    pub line: u32,
}

pub trait FrameResolver {
    /// Resolves `offset` inside `module`. Return addresses (every frame but
    /// the innermost) point one past the call, so implementations step back
    /// a byte for them.
    fn resolve(&self, module: &str, offset: u64, is_return_address: bool) -> Option<ResolvedFrame>;
}

pub struct NoResolver;

impl FrameResolver for NoResolver {
    fn resolve(&self, _: &str, _: u64, _: bool) -> Option<ResolvedFrame> {
        None
    }
}

/// Resolves addresses inside one binary with binutils' `addr2line`.
pub struct Addr2Line {
    binary: PathBuf,
    tool: Option<PathBuf>,
}

impl Addr2Line {
    pub fn new(binary: impl Into<PathBuf>) -> Self {
        Addr2Line {
            binary: binary.into(),
            tool: find_on_path("addr2line"),
        }
    }

    fn covers(&self, module: &str) -> bool {
        let module = Path::new(module);
        module == self.binary
            || matches!(
                (module.canonicalize(), self.binary.canonicalize()),
                (Ok(a), Ok(b)) if a == b
            )
    }

    /// Resolves an absolute address in a non-PIE binary.
    pub fn resolve_address(&self, address: u64, is_return_address: bool) -> Option<ResolvedFrame> {
        let tool = self.tool.as_ref()?;
        let address = if is_return_address { address.checked_sub(1)? } else { address };
        let output = Command::new(tool)
            .arg("-f")
            .arg("-e")
            .arg(&self.binary)
            .arg(format!("0x{address:x}"))
            .output()
            .ok()?;
        if !output.status.success() {
            return None;
        }
        parse_addr2line(&String::from_utf8_lossy(&output.stdout))
    }
}

impl FrameResolver for Addr2Line {
    fn resolve(&self, module: &str, offset: u64, is_return_address: bool) -> Option<ResolvedFrame> {
        if !self.covers(module) {
            return None;
        }
        self.resolve_address(offset, is_return_address)
    }
}

/// Parses `addr2line -f` output: a function line then `file:line`, where the
/// line may carry a ` (discriminator N)` suffix and unknowns print as `??`.
pub(crate) fn parse_addr2line(output: &str) -> Option<ResolvedFrame> {
    let mut lines = output.lines();
    let function = lines.next()?.trim();
    let location = lines.next()?.trim();
    let location = location.split(" (").next()?;
    let (file, line) = location.rsplit_once(':')?;
    let line: u32 = line.parse().ok()?;
    if file == "??" || line == 0 {
        return None;
    }
    Some(ResolvedFrame {
        function: (function != "??").then(|| function.to_string()),
        file: file.to_string(),
        line,
    })
}
