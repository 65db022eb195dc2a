//! Output helpers: lossless float formatting and file writing.

use anyhow::{Context, Result};
use std::path::Path;

/// 17 significant digits: round-trips every f64 exactly, locale-independent.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}
