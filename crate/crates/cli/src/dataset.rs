//! `t,y` CSV ingestion.

use std::path::Path;

use sha2::{Digest, Sha256};
use snls_core::separable::Dataset;

use crate::error::CliError;

/// Row count and SHA-256 of the raw file bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDigest {
    pub rows: usize,
    pub sha256: String,
}

/// Read a dataset from disk. Data rows are numbered from 1 after the header;
/// errors also carry the physical line.
pub fn parse_dataset(path: &Path) -> Result<(Dataset, InputDigest), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let data = parse_dataset_bytes(&bytes)?;
    let digest = InputDigest {
        rows: data.len(),
        sha256: hex_digest(&bytes),
    };
    Ok((data, digest))
}

pub fn parse_dataset_bytes(bytes: &[u8]) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = reader.records();

    let header_error = || CliError::Parse {
        line: 1,
        message: "expected header 't,y'".into(),
    };
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(CliError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
        None => return Err(header_error()),
    };
    if header.position().map(|p| p.line()) != Some(1) || header.len() != 2 || &header[0] != "t" || &header[1] != "y" {
        return Err(header_error());
    }

    let mut t = Vec::new();
    let mut y = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(CliError::Parse {
                line,
                message: format!("row {row}: expected 2 fields, found {}", record.len()),
            });
        }
        for (column, cell, out) in [("t", &record[0], &mut t), ("y", &record[1], &mut y)] {
            let v: f64 = cell.parse().map_err(|_| CliError::Cell {
                row,
                line,
                column,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(CliError::Cell {
                    row,
                    line,
                    column,
                    message: format!("not finite: {cell:?}"),
                });
            }
            out.push(v);
        }
    }
    if t.is_empty() {
        return Err(CliError::EmptyDataset);
    }
    Ok(Dataset::new(t, y)?)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Inverse of [`parse_dataset_bytes`]; values use the shortest round-trip form.
pub fn write_dataset(data: &Dataset) -> String {
    let mut out = String::from("t,y\n");
    for (t, y) in data.t().iter().zip(data.y()) {
        out.push_str(&format!("{t},{y}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_rows() {
        let d = parse_dataset_bytes(b"t,y\n0,1\n1,0.5").unwrap();
        assert_eq!(d.t(), &[0.0, 1.0]);
        assert_eq!(d.y(), &[1.0, 0.5]);
    }

    #[test]
    fn accepts_crlf() {
        let d = parse_dataset_bytes(b"t,y\r\n0,1\r\n2,3\r\n").unwrap();
        assert_eq!(d.y(), &[1.0, 3.0]);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(parse_dataset_bytes(b"t,y\n"), Err(CliError::EmptyDataset)));
    }

    #[test]
    fn missing_header_names_line_one() {
        for input in [&b"0,1\n1,2\n"[..], b"", b"x,y\n0,1\n"] {
            match parse_dataset_bytes(input) {
                Err(CliError::Parse { line: 1, .. }) => {}
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = parse_dataset_bytes(b"t,y\n0,1\n1,2\n2,abc\n").unwrap_err();
        match &err {
            CliError::Cell { row: 3, line: 4, column: "y", .. } => {}
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("row 3"));
        assert!(err.to_string().contains("column y"));
    }

    #[test]
    fn round_trips_through_writer() {
        let d = Dataset::new(vec![0.0, 0.1, 1e-300], vec![1.0 / 3.0, -2.5e10, 7.0]).unwrap();
        let back = parse_dataset_bytes(write_dataset(&d).as_bytes()).unwrap();
        assert_eq!(back, d);
    }
}
