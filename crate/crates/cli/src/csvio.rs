//! CSV input and output.

use std::fs::File;
use std::path::Path;

use anyhow::Context;
use pad_core::datashift::Dataset;
use pad_core::Tensor;
use thiserror::Error;

/// Parse failures carry 1-based data row and column positions (the header is row 0).
#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} has no data rows")]
    Empty(String),
    #[error("header needs at least one feature column and a label column")]
    NarrowHeader,
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {col} ({name}): cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        col: usize,
        name: String,
        value: String,
    },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("invalid dataset: {0}")]
    Dataset(#[from] pad_core::Error),
}

/// Reads a headed, all-numeric CSV whose last column is the label.
pub fn load_csv(path: &Path) -> Result<Dataset, CsvError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| CsvError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CsvError::Malformed {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(CsvError::NarrowHeader);
    }
    let width = header.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CsvError::Malformed {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(CsvError::Ragged {
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CsvError::NonNumeric {
                    row,
                    col: j + 1,
                    name: header[j].clone(),
                    value: cell.to_string(),
                })?;
            if j + 1 == width {
                labels.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(CsvError::Empty(shown));
    }
    let x = Tensor::from_vec(labels.len(), width - 1, data)?;
    Ok(Dataset::new(x, labels, Some(header[..width - 1].to_vec()))?)
}

fn writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes `x` and `y` back out in the format read by [`load_csv`].
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    let mut header = data.feature_names.clone();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.x.row_slice(i).iter().map(|v| v.to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and numeric rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes pre-formatted rows.
pub fn write_text_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_by_two() {
        let f = file("a,b,y\n1,2,3\n4,5,6\n");
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.x.shape(), pad_core::Shape::new(2, 2));
        assert_eq!(d.y, vec![3.0, 6.0]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn na_cell_is_located() {
        let f = file("a,b,y\n1,2,3\n4,NA,6\n");
        match load_csv(f.path()).unwrap_err() {
            CsvError::NonNumeric { row, col, name, .. } => {
                assert_eq!((row, col, name.as_str()), (2, 2, "b"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_and_empty() {
        let f = file("a,b,y\n1,2,3\n4,5\n");
        assert!(matches!(
            load_csv(f.path()).unwrap_err(),
            CsvError::Ragged {
                row: 2,
                expected: 3,
                found: 2
            }
        ));
        let f = file("a,b,y\n");
        assert!(matches!(load_csv(f.path()).unwrap_err(), CsvError::Empty(_)));
        let f = file("");
        assert!(load_csv(f.path()).is_err());
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv")).unwrap_err(),
            CsvError::Io { .. }
        ));
    }

    #[test]
    fn housing_shaped_file() {
        let mut text = String::new();
        let names: Vec<String> = (0..13).map(|j| format!("f{j}")).collect();
        text.push_str(&names.join(","));
        text.push_str(",medv\n");
        for i in 0..506 {
            let row: Vec<String> = (0..14).map(|j| format!("{}", (i * 14 + j) as f64 * 0.01)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let d = load_csv(file(&text).path()).unwrap();
        assert_eq!(d.dim(), 13);
        assert_eq!(d.len(), 506);
    }

    #[test]
    fn dataset_round_trip() {
        let d = pad_core::datashift::gen_gap_sine(5, 5, 0).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset_csv(f.path(), &d).unwrap();
        let back = load_csv(f.path()).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
    }
}
