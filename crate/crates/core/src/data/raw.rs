//! Raw input datasets: `sample_id,x_0,...,x_{d-1},label`, with label -1
//! marking an out-of-distribution sample.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

use super::{check_finite_row, format_f64, parse_field, read_text, write_text};

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub sample_id: String,
    pub x: Vec<f64>,
    /// `None` for OOD samples.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub input_dim: usize,
    pub samples: Vec<RawSample>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    /// Inputs and labels of the labelled samples only.
    pub fn labelled(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.samples
            .iter()
            .filter_map(|s| s.label.map(|y| (s.x.clone(), y)))
            .unzip()
    }
}

pub fn write_raw_dataset(data: &RawDataset, path: &Path) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..data.input_dim).map(|j| format!("x_{j}")));
    header.push("label".into());
    wtr.write_record(&header).map_err(|e| Error::format(path, None, e.to_string()))?;
    let mut seen = HashSet::new();
    for (i, s) in data.samples.iter().enumerate() {
        if s.x.len() != data.input_dim {
            return Err(Error::format(path, Some(i + 2), format!("sample has {} inputs, expected {}", s.x.len(), data.input_dim)));
        }
        check_finite_row(path, i + 2, &s.x)?;
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::format(path, Some(i + 2), format!("duplicate sample_id `{}`", s.sample_id)));
        }
        let mut rec = vec![s.sample_id.clone()];
        rec.extend(s.x.iter().map(|&v| format_f64(v)));
        rec.push(s.label.map_or_else(|| "-1".to_string(), |y| y.to_string()));
        wtr.write_record(&rec).map_err(|e| Error::format(path, None, e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::format(path, None, e.to_string()))?;
    write_text(path, std::str::from_utf8(&bytes).expect("CSV output is UTF-8"))
}

pub fn read_raw_dataset(path: &Path) -> Result<RawDataset> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::format(path, Some(1), e.to_string()))?.clone();
    let input_dim = header.len().saturating_sub(2);
    let ok = header.len() >= 3
        && &header[0] == "sample_id"
        && &header[header.len() - 1] == "label"
        && (0..input_dim).all(|j| header[j + 1] == format!("x_{j}"));
    if !ok {
        return Err(Error::format(path, Some(1), "header must be sample_id, x_0.., label"));
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, None, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != input_dim + 2 {
            return Err(Error::format(
                path,
                Some(line),
                format!("expected {} inputs and a label, found {} fields", input_dim, rec.len()),
            ));
        }
        let x = (1..=input_dim)
            .map(|j| parse_field(path, line, &header[j], &rec[j]))
            .collect::<Result<Vec<f64>>>()?;
        let label_field = rec[input_dim + 1].trim();
        let label = match label_field.parse::<i64>() {
            Ok(-1) => None,
            Ok(y) if y >= 0 => Some(y as usize),
            _ => {
                return Err(Error::format(path, Some(line), format!("invalid label `{label_field}` (use a class index or -1)")))
            }
        };
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::format(path, Some(line), format!("duplicate sample_id `{}`", &rec[0])));
        }
        samples.push(RawSample {
            sample_id: rec[0].to_string(),
            x,
            label,
        });
    }
    Ok(RawDataset { input_dim, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_ood_labels() {
        let data = RawDataset {
            input_dim: 2,
            samples: vec![
                RawSample { sample_id: "s0".into(), x: vec![0.1, -3.5], label: Some(1) },
                RawSample { sample_id: "s1".into(), x: vec![1e-310, 2.0], label: None },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        write_raw_dataset(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,x_0,x_1,label\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",-1"));
        assert_eq!(read_raw_dataset(&path).unwrap(), data);
        let (xs, ys) = data.labelled();
        assert_eq!((xs.len(), ys), (1, vec![1]));
    }

    #[test]
    fn bad_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        std::fs::write(&path, "sample_id,x_0,label\na,1.0,-2\n").unwrap();
        let err = read_raw_dataset(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
