//! The launcher script that replaces a freshly linked binary.
//!
//! ```text
//! #!/bin/sh
//! # ccoach-launch: {"real":"a.out.real","snapshot":".ccoach/a.out.snapshot",...}
//! exec '/usr/local/bin/ccoach' --supervise "$0" -- "$@"
//! ```
//!
//! Paths in the manifest line are relative to the launcher's directory so a
//! build directory can be moved as a whole.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{hash_bytes, write_atomically, SourceFile, SourceSnapshot, STORE_DIR};

pub const REAL_SUFFIX: &str = ".real";
pub const MEMCHECK_SUFFIX: &str = ".memcheck";
const MANIFEST_PREFIX: &str = "# ccoach-launch: ";

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0} is not a ccoach launcher")]
    NotALauncher(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InstrumentError + '_ {
    move |source| InstrumentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    /// Executable the launcher hands control to (normally `ccoach` itself).
    pub supervisor: PathBuf,
    /// Unsanitized build for the Valgrind tier, if one was produced.
    pub memcheck_binary: Option<PathBuf>,
    /// Whether the crash handler was linked in.
    pub crash_shim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSource {
    /// As written on the compiler command line.
    pub path: String,
    pub absolute: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchManifest {
    pub real: PathBuf,
    pub snapshot: PathBuf,
    #[serde(default)]
    pub memcheck: Option<PathBuf>,
    pub sources: Vec<ManifestSource>,
    pub binary_hash: String,
    #[serde(default)]
    pub crash_shim: bool,
}

impl LaunchManifest {
    /// Resolves manifest-relative paths against the launcher's directory.
    pub fn resolve(&self, launcher: &Path, path: &Path) -> PathBuf {
        launcher.parent().unwrap_or(Path::new(".")).join(path)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = OsString::from(path.as_os_str());
    name.push(suffix);
    PathBuf::from(name)
}

fn file_name(path: &Path) -> PathBuf {
    PathBuf::from(path.file_name().unwrap_or(path.as_os_str()))
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

/// Moves `binary` to `<binary>.real`, records a snapshot of `sources` and
/// writes a launcher script in its place. Returns the launcher path.
pub fn instrument_build(binary: &Path, sources: &[PathBuf], options: &LaunchOptions) -> Result<PathBuf, InstrumentError> {
    let bytes = fs::read(binary).map_err(io_err(binary))?;
    let binary_hash = hash_bytes(&[&bytes]);
    let mode = fs::metadata(binary).map_err(io_err(binary))?.permissions().mode();

    let mut snapshot = SourceSnapshot {
        binary_hash: binary_hash.clone(),
        sources: Vec::with_capacity(sources.len()),
    };
    let mut manifest_sources = Vec::with_capacity(sources.len());
    for source in sources {
        snapshot.sources.push(SourceFile::read(source).map_err(io_err(source))?);
        manifest_sources.push(ManifestSource {
            path: source.display().to_string(),
            absolute: source.canonicalize().map_err(io_err(source))?,
        });
    }

    let dir = binary.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = file_name(binary);
    let snapshot_rel = Path::new(STORE_DIR).join(with_suffix(&name, ".snapshot"));
    let snapshot_path = dir.join(&snapshot_rel);
    fs::create_dir_all(snapshot_path.parent().unwrap()).map_err(io_err(&snapshot_path))?;
    write_atomically(&snapshot_path, &snapshot.encode()).map_err(io_err(&snapshot_path))?;

    let real = with_suffix(binary, REAL_SUFFIX);
    fs::rename(binary, &real).map_err(io_err(&real))?;

    let manifest = LaunchManifest {
        real: file_name(&real),
        snapshot: snapshot_rel,
        memcheck: options.memcheck_binary.as_deref().map(file_name),
        sources: manifest_sources,
        binary_hash,
        crash_shim: options.crash_shim,
    };
    let script = format!(
        "#!/bin/sh\n{MANIFEST_PREFIX}{}\nexec {} --supervise \"$0\" -- \"$@\"\n",
        serde_json::to_string(&manifest).expect("manifest serializes"),
        shell_quote(&options.supervisor),
    );
    write_atomically(binary, script.as_bytes()).map_err(io_err(binary))?;
    fs::set_permissions(binary, fs::Permissions::from_mode(mode)).map_err(io_err(binary))?;
    Ok(binary.to_path_buf())
}

/// Reads the manifest line back from a launcher script.
pub fn read_manifest(launcher: &Path) -> Result<LaunchManifest, InstrumentError> {
    let text = fs::read(launcher).map_err(io_err(launcher))?;
    // Launchers are tiny; don't scan a real binary byte by byte.
    let head = &text[..text.len().min(64 * 1024)];
    String::from_utf8_lossy(head)
        .lines()
        .find_map(|line| line.strip_prefix(MANIFEST_PREFIX))
        .and_then(|json| serde_json::from_str(json).ok())
        .ok_or_else(|| InstrumentError::NotALauncher(launcher.to_path_buf()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_binary_and_keeps_real_one() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("prog.c");
        fs::write(&src, "int main(void) { return 0; }\n").unwrap();
        let out = dir.path().join("a.out");
        fs::write(&out, b"\x7fELF fake").unwrap();
        fs::set_permissions(&out, fs::Permissions::from_mode(0o755)).unwrap();

        let opts = LaunchOptions {
            supervisor: "/opt/it's here/ccoach".into(),
            memcheck_binary: None,
            crash_shim: false,
        };
        let launcher = instrument_build(&out, std::slice::from_ref(&src), &opts).unwrap();
        assert_eq!(launcher, out);
        assert_eq!(fs::read(dir.path().join("a.out.real")).unwrap(), b"\x7fELF fake");

        let script = fs::read_to_string(&out).unwrap();
        assert!(script.starts_with("#!/bin/sh\n# ccoach-launch: {"));
        assert!(script.ends_with("exec '/opt/it'\\''s here/ccoach' --supervise \"$0\" -- \"$@\"\n"));
        assert_eq!(fs::metadata(&out).unwrap().permissions().mode() & 0o777, 0o755);

        let manifest = read_manifest(&out).unwrap();
        assert_eq!(manifest.real, PathBuf::from("a.out.real"));
        assert_eq!(manifest.binary_hash, hash_bytes(&[b"\x7fELF fake"]));
        assert_eq!(manifest.sources[0].absolute, src.canonicalize().unwrap());

        let snap = fs::read(manifest.resolve(&out, &manifest.snapshot)).unwrap();
        let snap = SourceSnapshot::decode(&snap).unwrap();
        assert_eq!(snap.binary_hash, manifest.binary_hash);
        assert_eq!(snap.sources[0].contents, b"int main(void) { return 0; }\n");
    }

    #[test]
    fn plain_files_are_not_launchers() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x");
        fs::write(&f, "#!/bin/sh\necho hi\n").unwrap();
        assert!(matches!(read_manifest(&f), Err(InstrumentError::NotALauncher(_))));
    }
}
