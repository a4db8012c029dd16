//! Dataset file formats.
//!
//! CSV: header `f0,...,f{d-1},label`, UTF-8, `.` decimal point.
//! Binary: magic, version, little-endian dims, f64 features, u32 labels,
//! CRC-32 trailer.

use std::path::Path;

use crate::bytes::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::LabeledDataset;

const DATASET_MAGIC: &[u8; 4] = b"TTDS";
const DATASET_VERSION: u32 = 1;

/// Expectations the loader validates against.
#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    /// When set, the file must have exactly this many feature columns.
    pub feature_dim: Option<usize>,
    pub num_classes: usize,
}

pub fn save_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    for j in 0..data.dim() {
        text.push_str(&format!("f{j},"));
    }
    text.push_str("label\n");
    for i in 0..data.len() {
        for &v in data.features.row(i) {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{}\n", data.labels[i]));
    }
    write_file(path, text.as_bytes())
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::CsvParse {
        path: path.to_path_buf(),
        line: 0,
        reason: "file is not valid UTF-8".into(),
    })?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: path.to_path_buf(),
        line: 1,
        reason: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "label" {
        return Err(Error::CsvParse {
            path: path.to_path_buf(),
            line: 1,
            reason: "header must be f0,...,f{d-1},label".into(),
        });
    }
    let dim = cols.len() - 1;
    if let Some(want) = schema.feature_dim {
        if dim != want {
            return Err(Error::CsvParse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected {want} feature columns, found {dim}"),
            });
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (zero_line, raw) in lines {
        let line = zero_line + 1; // 1-based for messages
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::CsvParse {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for (col, field) in fields[..dim].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::CsvParse {
                path: path.to_path_buf(),
                line,
                reason: format!("column f{col}: '{field}' is not a number"),
            })?;
            row.push(v);
        }
        let label: u32 = fields[dim].trim().parse().map_err(|_| Error::CsvParse {
            path: path.to_path_buf(),
            line,
            reason: format!("label column: '{}' is not an integer", fields[dim]),
        })?;
        if label as usize >= schema.num_classes {
            return Err(Error::LabelOutOfRange {
                index: rows.len(),
                label,
                num_classes: schema.num_classes,
            });
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            path: path.to_path_buf(),
            line: 1,
            reason: "no data rows".into(),
        });
    }
    Ok(LabeledDataset {
        features: Matrix::from_rows(&rows)?,
        labels,
        domain_tag: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into()),
    })
}

pub fn save_binary(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.put_bytes(DATASET_MAGIC);
    w.put_u32(DATASET_VERSION);
    w.put_str(&data.domain_tag);
    w.put_u32(data.len() as u32);
    w.put_u32(data.dim() as u32);
    for &v in data.features.data() {
        w.put_f64(v);
    }
    for &label in &data.labels {
        w.put_u32(label);
    }
    write_file(path, &w.finish())
}

pub fn load_binary(path: &Path) -> Result<LabeledDataset> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new_checked(&bytes, path)?;
    if r.get_bytes(4, "magic")? != DATASET_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "dataset",
        });
    }
    let version = r.get_u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let domain_tag = r.get_string("domain tag")?;
    let rows = r.get_u32("rows")? as usize;
    let cols = r.get_u32("cols")? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.get_f64("feature")?);
    }
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        labels.push(r.get_u32("label")?);
    }
    r.finish()?;
    Ok(LabeledDataset {
        features: Matrix::from_vec(rows, cols, data)?,
        labels,
        domain_tag,
    })
}
