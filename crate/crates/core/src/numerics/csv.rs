//! Matrix/vector text format: a `rows,cols` header line, then one matrix row
//! per line with values at 17 significant digits. Vectors are `n x 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Mat;
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_string(m: &Mat) -> String {
    let mut out = format!("{},{}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", format_f64(m.get(i, j)));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_str(text: &str) -> Result<Mat> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad header {header:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!(
            "header must be rows,cols: {header:?}"
        )));
    };
    let mut row_vals = Vec::with_capacity(rows);
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {i}: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(Error::Parse(format!(
                "row {i} has {} values, expected {cols}",
                vals.len()
            )));
        }
        row_vals.push(vals);
    }
    if row_vals.len() != rows {
        return Err(Error::Parse(format!(
            "found {} rows, header says {rows}",
            row_vals.len()
        )));
    }
    Mat::from_rows(&row_vals)
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, matrix_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    matrix_from_str(&text)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let m = Mat::new(v.len(), 1, v.to_vec())?;
    write_matrix(path, &m)
}

/// Reads an `n x 1` (or `1 x n`) matrix file as a vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.cols() != 1 && m.rows() != 1 {
        return Err(Error::Parse(format!(
            "{} is {}x{}, not a vector",
            path.display(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.as_slice().to_vec())
}

/// One class index per line, no header.
pub fn labels_to_string(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn labels_from_str(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("label line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    fs::write(path, labels_to_string(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    labels_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_layout() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.1]]).unwrap();
        let s = matrix_to_string(&m);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("2,2"));
        assert_eq!(
            lines.next(),
            Some("1.0000000000000000e0,2.0000000000000000e0")
        );
        assert!(s.ends_with('\n'));
    }

    #[test]
    fn labels_one_per_line() {
        assert_eq!(labels_to_string(&[1, 1, 2]), "1\n1\n2\n");
        assert_eq!(labels_from_str("1\n\n2\n").unwrap(), vec![1, 2]);
        assert!(labels_from_str("1.5\n").is_err());
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(matrix_from_str("2,2\n1,2\n3\n").is_err());
        assert!(matrix_from_str("3,1\n1\n2\n").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(vals in prop::collection::vec(-1e6f64..1e6, 6)) {
            let m = Mat::new(3, 2, vals).unwrap();
            let back = matrix_from_str(&matrix_to_string(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
