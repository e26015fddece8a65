//! File formats and synthetic benchmark generation.
//!
//! All formats carry `format_version` "1". Floats are written with 17
//! significant digits so every round trip is value-exact; NaN and infinity
//! are rejected on both read and write.

mod canonical;
mod features;
mod model_file;
mod raw;
mod report;
mod synth;

pub use canonical::{format_f64, to_canonical_json};
pub use features::{extract_features, manifest_path, read_feature_dump, write_feature_dump, FeatureDump, FeatureManifest, FeatureRow};
pub use model_file::{read_model, write_model, write_model_file, ModelFile};
pub use raw::{read_raw_dataset, write_raw_dataset, RawDataset, RawSample};
pub use report::{write_report, Report};
pub use synth::{synth_generate, OodMode, SynthConfig, SynthData};

pub const FORMAT_VERSION: &str = "1";

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses one CSV float field, rejecting NaN and infinities.
pub(crate) fn parse_field(path: &Path, line: usize, column: &str, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::format(path, Some(line), format!("column `{column}`: cannot parse `{field}` as a number")))?;
    if !v.is_finite() {
        return Err(Error::format(path, Some(line), format!("column `{column}`: non-finite value `{field}`")));
    }
    Ok(v)
}

pub(crate) fn check_finite_row(path: &Path, line: usize, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, Some(line), format!("non-finite value at column {i}")));
    }
    Ok(())
}
