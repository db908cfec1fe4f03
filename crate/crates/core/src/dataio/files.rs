//! Feature CSV, binary matrix and labels files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::Labeling;

/// First eight bytes of a binary matrix file.
pub const MATRIX_MAGIC: &[u8; 8] = b"DCADMMMX";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    CsvFeatures,
    MatrixBinary,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" | "csv_features" => Ok(DataFormat::CsvFeatures),
            "bin" | "matrix_binary" => Ok(DataFormat::MatrixBinary),
            other => Err(Error::InvalidInput(format!("unknown data format '{other}'"))),
        }
    }
}

impl DataFormat {
    /// Guesses from the extension; anything but `.bin` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DataFormat::MatrixBinary,
            _ => DataFormat::CsvFeatures,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let dataset = match format {
        DataFormat::CsvFeatures => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_features_csv(&text)?
        }
        DataFormat::MatrixBinary => Dataset {
            features: read_matrix(path)?,
            true_labels: None,
            fixed_labels: Default::default(),
        },
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Parses one row per vertex. Blank lines and lines starting with `#` are
/// skipped. A trailing `label:<int>` cell must appear on every row or none.
pub fn parse_features_csv(text: &str) -> Result<Dataset> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut labeled: Option<bool> = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let label = match cells.last().and_then(|c| c.strip_prefix("label:")) {
            Some(l) => {
                let l = l.trim().parse::<usize>().map_err(|_| err(format!("bad label '{l}'")))?;
                cells.pop();
                Some(l)
            }
            None => None,
        };
        match labeled {
            None => labeled = Some(label.is_some()),
            Some(had) if had != label.is_some() => return Err(err("label column present on some rows only".into())),
            _ => {}
        }
        if let Some(l) = label {
            labels.push(l);
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => return Err(err(format!("expected {w} features, found {}", cells.len()))),
            _ => {}
        }
        for cell in cells {
            let v: f64 = cell.parse().map_err(|_| err(format!("non-numeric cell '{cell}'")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite cell '{cell}'")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    let true_labels = if labeled == Some(true) {
        let n_labels = labels.iter().max().map_or(0, |&m| m + 1);
        Some(Labeling::new(labels, n_labels)?)
    } else {
        None
    };
    Ok(Dataset {
        features: DMatrix::from_row_slice(rows, width, &values),
        true_labels,
        fixed_labels: Default::default(),
    })
}

/// Writes features (and true labels, if any) in the CSV layout read by
/// [`parse_features_csv`]. Values use the shortest round-trip representation.
pub fn save_features_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for i in 0..dataset.features.nrows() {
        let row: Vec<String> = dataset.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        write!(w, "{}", row.join(",")).map_err(io)?;
        if let Some(t) = &dataset.true_labels {
            write!(w, ",label:{}", t[i]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Row-major little-endian `f64` matrix behind [`MATRIX_MAGIC`] and two
/// little-endian `u64` dimensions.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + 8 * m.len());
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for v in m.row(i).iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("not a matrix file"));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (dim(8), dim(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(bad(&format!("size does not match {rows}x{cols}")));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn save_labels(path: &Path, labels: &Labeling) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for &l in labels.as_slice() {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads one label per line; `n_labels` defaults to the largest label + 1.
pub fn load_labels(path: &Path, n_labels: Option<usize>) -> Result<Labeling> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse::<usize>().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad label '{line}'"),
        })?);
    }
    let n = n_labels.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
    Labeling::new(labels, n)
}
