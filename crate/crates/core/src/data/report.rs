use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::{to_canonical_json, write_text};

/// A serializable evaluation artifact.
pub trait Report: Serialize {
    /// Rejects reports that must not be written (e.g. empty ones).
    fn validate(&self) -> Result<()>;
}

/// Writes a report as canonical JSON. Identical reports give identical bytes.
pub fn write_report<R: Report>(report: &R, path: &Path) -> Result<()> {
    report.validate()?;
    let value = serde_json::to_value(report).map_err(|e| Error::format(path, None, e.to_string()))?;
    write_text(path, &to_canonical_json(&value))
}
