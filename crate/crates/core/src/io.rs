//! Labeled matrix CSV files: the first row holds column identifiers, the
//! first column holds row identifiers.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub data: Array2<f64>,
}

impl LabeledMatrix {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if row_ids.len() != data.nrows() || col_ids.len() != data.ncols() {
            return Err(Error::dims(format!(
                "{} row ids and {} column ids for a {}x{} matrix",
                row_ids.len(),
                col_ids.len(),
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(LabeledMatrix { row_ids, col_ids, data })
    }

    /// Attach generated identifiers `r1..rn` and `{prefix}1..`.
    pub fn with_default_ids(data: Array2<f64>, col_prefix: &str) -> Self {
        LabeledMatrix {
            row_ids: (1..=data.nrows()).map(|i| format!("r{i}")).collect(),
            col_ids: (1..=data.ncols()).map(|j| format!("{col_prefix}{j}")).collect(),
            data,
        }
    }
}

fn parse_err(path: &Path, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg,
    }
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_from(file, path)
}

fn read_matrix_from<R: std::io::Read>(reader: R, path: &Path) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, "expected a row-id column and at least one data column".into()));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let ncol = col_ids.len();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != ncol + 1 {
            return Err(parse_err(
                path,
                format!("line {} has {} fields, expected {}", i + 2, rec.len(), ncol + 1),
            ));
        }
        row_ids.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            let t = field.trim();
            let v: f64 = t.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("row {} column {} ({}): cannot parse '{t}' as a number", i + 1, j + 1, col_ids[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    format!("row {} column {} ({}): missing or non-finite value", i + 1, j + 1, col_ids[j]),
                ));
            }
            values.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(parse_err(path, "no data rows".into()));
    }
    let data = Array2::from_shape_vec((row_ids.len(), ncol), values)
        .map_err(|e| parse_err(path, e.to_string()))?;
    Ok(LabeledMatrix { row_ids, col_ids, data })
}

pub fn write_matrix_csv(path: &Path, row_ids: &[String], col_ids: &[String], data: ArrayView2<f64>) -> Result<()> {
    if row_ids.len() != data.nrows() || col_ids.len() != data.ncols() {
        return Err(Error::dims("identifier counts do not match the matrix"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![String::new()];
    header.extend(col_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in data.outer_iter().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(row_ids[i].clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_labeled(path: &Path, m: &LabeledMatrix) -> Result<()> {
    write_matrix_csv(path, &m.row_ids, &m.col_ids, m.data.view())
}

/// Write pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn roundtrip_preserves_values_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = LabeledMatrix::new(
            vec!["a".into(), "b,c".into()],
            vec!["x".into(), "y".into()],
            array![[1.0, -2.5], [0.1 + 0.2, 1e-300]],
        )
        .unwrap();
        write_labeled(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }

    #[test]
    fn missing_value_is_rejected() {
        let text = ",a,b\nr1,1,\nr2,3,4\n";
        let err = read_matrix_from(text.as_bytes(), Path::new("t.csv")).unwrap_err();
        assert!(err.to_string().contains("row 1 column 2"), "{err}");
        let text = ",a\nr1,NaN\n";
        assert!(read_matrix_from(text.as_bytes(), Path::new("t.csv")).is_err());
    }

    #[test]
    fn ragged_row_is_rejected() {
        let text = ",a,b\nr1,1,2,3\n";
        assert!(read_matrix_from(text.as_bytes(), Path::new("t.csv")).is_err());
    }
}
