//! CSV and JSON interchange for path batches.
//!
//! Two CSV layouts are accepted: a single series with header `t,x1,..,xd`,
//! and a long format with header `sample_id,t,x1,..,xd` holding a whole
//! batch. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{PathBatch, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Single,
    Long,
}

fn csv_err(row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        column,
        message: message.into(),
    }
}

fn check_header(header: &[String]) -> Result<(CsvLayout, usize)> {
    let (layout, offset) = match header.first().map(String::as_str) {
        Some("sample_id") => (CsvLayout::Long, 1),
        Some("t") => (CsvLayout::Single, 0),
        _ => return Err(csv_err(1, 1, "header must start with `t` or `sample_id`")),
    };
    if layout == CsvLayout::Long && header.get(1).map(String::as_str) != Some("t") {
        return Err(csv_err(1, 2, "second column of the long format must be `t`"));
    }
    let d = header.len() - offset - 1;
    if d == 0 {
        return Err(csv_err(1, header.len(), "no value columns"));
    }
    for (c, name) in header[offset + 1..].iter().enumerate() {
        if *name != format!("x{}", c + 1) {
            return Err(csv_err(1, offset + c + 2, format!("expected column `x{}`, found `{name}`", c + 1)));
        }
    }
    Ok((layout, d))
}

fn parse_cell(s: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| csv_err(row, column, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(csv_err(row, column, "non-finite value"));
    }
    Ok(v)
}

/// Parse CSV text in either layout. Rows and columns in errors are 1-based,
/// with the header as row 1.
pub fn parse_csv(text: &str) -> Result<PathBatch> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r
            .map_err(|e| csv_err(1, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect(),
        None => return Err(csv_err(1, 1, "empty file")),
    };
    let (layout, d) = check_header(&header)?;
    let width = header.len();
    // sample id -> (times, values), in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut samples: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(row, 1, e.to_string()))?;
        if rec.len() != width {
            return Err(csv_err(
                row,
                rec.len().min(width) + 1,
                format!("row has {} fields, header has {width}", rec.len()),
            ));
        }
        let (id, off) = match layout {
            CsvLayout::Long => (rec[0].to_string(), 1),
            CsvLayout::Single => (String::new(), 0),
        };
        let entry = samples.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.push(parse_cell(&rec[off], row, off + 1)?);
        for c in 0..d {
            entry.1.push(parse_cell(&rec[off + 1 + c], row, off + 2 + c)?);
        }
    }
    if order.is_empty() {
        return Err(csv_err(2, 1, "no data rows"));
    }
    let items = order
        .iter()
        .map(|id| {
            let (t, v) = samples.remove(id).expect("every id was inserted");
            TimeSeries::from_flat(t, v, d).map_err(|e| match layout {
                CsvLayout::Long => Error::Format(format!("sample `{id}`: {e}")),
                CsvLayout::Single => e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::new(items)
}

pub fn load_csv(path: &Path) -> Result<PathBatch> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Render a batch; a single-sample batch may use either layout.
pub fn to_csv(batch: &PathBatch, layout: CsvLayout) -> Result<String> {
    if layout == CsvLayout::Single && batch.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "the single-series layout holds one sample, batch has {}",
            batch.len()
        )));
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let d = batch.dim();
    let mut header: Vec<String> = Vec::new();
    if layout == CsvLayout::Long {
        header.push("sample_id".into());
    }
    header.push("t".into());
    header.extend((1..=d).map(|c| format!("x{c}")));
    let csv_io = |e: csv::Error| Error::Format(e.to_string());
    wtr.write_record(&header).map_err(csv_io)?;
    for (i, s) in batch.items().iter().enumerate() {
        for (t, row) in s.times().iter().zip(s.rows()) {
            let mut rec: Vec<String> = Vec::with_capacity(d + 2);
            if layout == CsvLayout::Long {
                rec.push(i.to_string());
            }
            rec.push(t.to_string());
            rec.extend(row.iter().map(f64::to_string));
            wtr.write_record(&rec).map_err(csv_io)?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_csv(batch: &PathBatch, path: &Path, layout: CsvLayout) -> Result<()> {
    std::fs::write(path, to_csv(batch, layout)?)?;
    Ok(())
}

/// A JSON file listing one single-series CSV per sample, with the expected
/// shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDescriptor {
    pub files: Vec<PathBuf>,
    pub n_points: usize,
    pub dim: usize,
}

/// Load the files of a descriptor; relative paths resolve against the
/// descriptor's directory.
pub fn load_descriptor(path: &Path) -> Result<PathBatch> {
    let desc: BatchDescriptor = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::with_capacity(desc.files.len());
    for f in &desc.files {
        let full = if f.is_absolute() { f.clone() } else { base.join(f) };
        let b = load_csv(&full)?;
        if b.len() != 1 {
            return Err(Error::Format(format!("{} holds {} samples, expected 1", full.display(), b.len())));
        }
        let s = b.into_items().remove(0);
        if s.len() != desc.n_points || s.dim() != desc.dim {
            return Err(Error::ShapeMismatch(format!(
                "{} has shape ({}, {}), descriptor says ({}, {})",
                full.display(),
                s.len(),
                s.dim(),
                desc.n_points,
                desc.dim
            )));
        }
        items.push(s);
    }
    PathBatch::new(items)
}

/// Load a `.json` descriptor or a CSV in either layout.
pub fn load_batch(path: &Path) -> Result<PathBatch> {
    if path.extension().is_some_and(|e| e == "json") {
        load_descriptor(path)
    } else {
        load_csv(path)
    }
}

/// Per-channel minimum and maximum over every sample and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(batch: &PathBatch) -> Self {
        let d = batch.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for s in batch.items() {
            for row in s.rows() {
                for c in 0..d {
                    min[c] = min[c].min(row[c]);
                    max[c] = max[c].max(row[c]);
                }
            }
        }
        Self { min, max }
    }

    /// Map each channel to `[0, 1]`; constant channels map to 0.
    pub fn apply(&self, batch: &PathBatch) -> Result<PathBatch> {
        self.check(batch)?;
        batch.map(|s| {
            let d = s.dim();
            let v = s
                .values()
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let c = i % d;
                    let span = self.max[c] - self.min[c];
                    if span > 0.0 {
                        (x - self.min[c]) / span
                    } else {
                        0.0
                    }
                })
                .collect();
            s.with_values(v, d)
        })
    }

    pub fn invert(&self, batch: &PathBatch) -> Result<PathBatch> {
        self.check(batch)?;
        batch.map(|s| {
            let d = s.dim();
            let v = s
                .values()
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let c = i % d;
                    self.min[c] + x * (self.max[c] - self.min[c])
                })
                .collect();
            s.with_values(v, d)
        })
    }

    fn check(&self, batch: &PathBatch) -> Result<()> {
        if batch.dim() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                found: batch.dim(),
            });
        }
        Ok(())
    }
}
