//! Artifact writing: atomic file replacement, CSV formatting and the
//! provenance block carried by every output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const TOOL: &str = "isores";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool version, resolved configuration and master seed.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
}

impl Provenance {
    pub fn new(seed: Option<u64>, config: Value) -> Self {
        Provenance {
            tool: TOOL,
            version: VERSION,
            seed,
            config,
        }
    }

    /// One-line form for CSV comment headers.
    pub fn comment_line(&self) -> Result<String, CliError> {
        Ok(format!("# {}\n", serde_json::to_string(&to_value(self)?)?))
    }
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(value)?)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Pretty JSON with object keys in sorted order and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&to_value(value)?)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// A float with 17 significant digits.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// CSV body builder: provenance comment, header row, LF line endings.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(prov: &Provenance, header: &[&str]) -> Result<Self, CliError> {
        let mut text = prov.comment_line()?;
        text.push_str(&header.join(","));
        text.push('\n');
        Ok(Csv { text })
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let mut first = true;
        for f in fields {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(&f);
            first = false;
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.text.as_bytes())
    }
}
