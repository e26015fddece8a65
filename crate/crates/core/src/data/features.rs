//! Feature dumps: per-sample encodings and logits.
//!
//! A dump at `features.csv` is two files: the CSV itself, with header
//! `sample_id,h_0,...,h_{D-1},logit_0,...,logit_{C-1}`, and a JSON manifest
//! sidecar at `features.csv.manifest.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::MicroMlp;
use crate::math::Temperature;

use super::{check_finite_row, RawDataset, format_f64, parse_field, read_text, to_canonical_json, write_text, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub format_version: String,
    pub class_count: usize,
    /// Number of `h_*` columns, including the bias column if present.
    pub encoding_dim: usize,
    pub temperature: Temperature,
    pub source: String,
    /// The last `h_*` column is the constant 1 of the last-layer bias.
    #[serde(default)]
    pub bias_augmented: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub manifest: FeatureManifest,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    pub fn new(class_count: usize, encoding_dim: usize, temperature: Temperature, source: impl Into<String>, bias_augmented: bool) -> Self {
        Self {
            manifest: FeatureManifest {
                format_version: FORMAT_VERSION.to_string(),
                class_count,
                encoding_dim,
                temperature,
                source: source.into(),
                bias_augmented,
            },
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let m = &self.manifest;
        if m.class_count < 2 || m.encoding_dim < 1 {
            return Err(Error::format(path, None, "manifest needs class_count >= 2 and encoding_dim >= 1"));
        }
        let mut seen = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            let line = i + 2;
            if row.h.len() != m.encoding_dim || row.logits.len() != m.class_count {
                return Err(Error::format(
                    path,
                    Some(line),
                    format!(
                        "row has {} encoding and {} logit values, manifest declares {} and {}",
                        row.h.len(),
                        row.logits.len(),
                        m.encoding_dim,
                        m.class_count
                    ),
                ));
            }
            check_finite_row(path, line, &row.h)?;
            check_finite_row(path, line, &row.logits)?;
            if m.bias_augmented && row.h.last() != Some(&1.0) {
                return Err(Error::format(path, Some(line), "bias column must be exactly 1"));
            }
            if !seen.insert(row.sample_id.as_str()) {
                return Err(Error::format(path, Some(line), format!("duplicate sample_id `{}`", row.sample_id)));
            }
        }
        Ok(())
    }
}

/// Runs every sample through the model and records the bias-augmented
/// encoding and the logits.
pub fn extract_features(model: &MicroMlp, data: &RawDataset, source: impl Into<String>) -> Result<FeatureDump> {
    if data.input_dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input dimension",
            expected: model.input_dim(),
            found: data.input_dim,
        });
    }
    let mut dump = FeatureDump::new(model.class_count(), model.encoding_dim() + 1, model.temperature(), source, true);
    for s in &data.samples {
        let out = model.forward(&s.x)?;
        dump.rows.push(FeatureRow {
            sample_id: s.sample_id.clone(),
            h: out.h.augmented().as_slice().to_vec(),
            logits: out.logits.into_vec(),
        });
    }
    Ok(dump)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_feature_dump(dump: &FeatureDump, path: &Path) -> Result<()> {
    dump.validate(path)?;
    let m = &dump.manifest;
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..m.encoding_dim).map(|j| format!("h_{j}")));
    header.extend((0..m.class_count).map(|k| format!("logit_{k}")));
    wtr.write_record(&header).map_err(|e| Error::format(path, None, e.to_string()))?;
    for row in &dump.rows {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(row.sample_id.clone());
        rec.extend(row.h.iter().chain(&row.logits).map(|&v| format_f64(v)));
        wtr.write_record(&rec).map_err(|e| Error::format(path, None, e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::format(path, None, e.to_string()))?;
    write_text(path, std::str::from_utf8(&bytes).expect("CSV output is UTF-8"))?;
    let manifest = serde_json::to_value(m).expect("manifest serializes");
    write_text(&manifest_path(path), &to_canonical_json(&manifest))
}

pub fn read_feature_dump(path: &Path) -> Result<FeatureDump> {
    let mpath = manifest_path(path);
    let mtext = read_text(&mpath)?;
    let raw: serde_json::Value =
        serde_json::from_str(&mtext).map_err(|e| Error::format(&mpath, Some(e.line()), e.to_string()))?;
    check_version(&mpath, &raw)?;
    let manifest: FeatureManifest =
        serde_json::from_value(raw).map_err(|e| Error::format(&mpath, None, e.to_string()))?;

    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::format(path, Some(1), e.to_string()))?.clone();
    let h_cols = header.iter().filter(|c| c.starts_with("h_")).count();
    let logit_cols = header.iter().filter(|c| c.starts_with("logit_")).count();
    if logit_cols != manifest.class_count {
        return Err(Error::format(
            path,
            Some(1),
            format!(
                "manifest declares class_count {} but the header has {logit_cols} logit columns",
                manifest.class_count
            ),
        ));
    }
    if h_cols != manifest.encoding_dim {
        return Err(Error::format(
            path,
            Some(1),
            format!(
                "manifest declares encoding_dim {} but the header has {h_cols} encoding columns",
                manifest.encoding_dim
            ),
        ));
    }
    let expected: Vec<String> = std::iter::once("sample_id".to_string())
        .chain((0..h_cols).map(|j| format!("h_{j}")))
        .chain((0..logit_cols).map(|k| format!("logit_{k}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(path, Some(1), "header must be sample_id, h_0.., logit_0.. in order"));
    }

    let (d, c) = (manifest.encoding_dim, manifest.class_count);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, None, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 1 + d + c {
            return Err(Error::format(
                path,
                Some(line),
                format!("expected {} values after sample_id, found {}", d + c, rec.len().saturating_sub(1)),
            ));
        }
        let values = (1..rec.len())
            .map(|i| parse_field(path, line, &expected[i], &rec[i]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            sample_id: rec[0].to_string(),
            h: values[..d].to_vec(),
            logits: values[d..].to_vec(),
        });
    }
    let dump = FeatureDump { manifest, rows };
    dump.validate(path)?;
    Ok(dump)
}

pub(crate) fn check_version(path: &Path, raw: &serde_json::Value) -> Result<()> {
    match raw.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => Ok(()),
        Some(other) => Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: other.to_string(),
        }),
        None => Err(Error::format(path, None, "missing string field `format_version`")),
    }
}
